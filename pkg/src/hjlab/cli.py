"""Command line entry point: ``hjlab <subcommand> --config PATH``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, parse_config
from .critical_value import c_upper_bound, estimate_c_infmax, estimate_c_longtime
from .errors import ConfigError, HJLabError
from .hamiltonian import HamiltonianModel, build_modified, verify_claims
from .lax_oleinik import default_v_max, evolve, orbit_energy_check, reconstruct_orbit, write_orbit_csv, write_trace_csv
from .legendre import LagrangianEvaluator, biconjugate_check
from .regularity import initial_datum, lipschitz_estimate, run_family_experiment, semiconcavity_estimate, write_report
from .torus import TorusGrid

log = logging.getLogger("hjlab")

SUBCOMMANDS = ("verify-hr", "critical-value", "evolve", "regularity-experiment")
EXIT_OK, EXIT_IO, EXIT_CHECKS = 0, 1, 2


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(_clean(data), sort_keys=True, indent=2) + "\n")
    return path


def _verify_hr(cfg: ExperimentConfig, out: Path, workers: int):
    model = HamiltonianModel(cfg.preset, cfg.potential, cfg.dim)
    hr = build_modified(model, cfg.R)
    claims = verify_claims(hr)
    bic = biconjugate_check(LagrangianEvaluator(hr), samples=cfg.samples, seed=cfg.seed)
    ok = claims.passed and bic.max_abs_error < 1e-5
    rec = {
        "model": model.name,
        "modified": hr.to_dict(),
        "claims": claims.to_dict(),
        "biconjugate": bic.to_dict(),
        "passed": ok,
    }
    return [write_json(out / "verification.json", rec)], ok


def _critical_value(cfg: ExperimentConfig, out: Path, workers: int):
    model = HamiltonianModel(cfg.preset, cfg.potential, cfg.dim)
    hr = build_modified(model, cfg.R_schedule[-1])
    grid = TorusGrid(cfg.dim, cfg.N)
    lt = estimate_c_longtime(
        LagrangianEvaluator(hr), grid, tau=cfg.tau, T=cfg.c_T, v_max=cfg.v_max_override, workers=workers, quadrature=cfg.quadrature
    )
    im = estimate_c_infmax(hr, grid)
    gap = abs(lt.c_est - im.c_est)
    bound = c_upper_bound(hr, grid)
    ok = gap <= cfg.tolerances["c_cross"] and lt.c_est <= bound + 1e-9 and not lt.diagnostics["window_flag"]
    rec = {
        "preset": cfg.preset,
        "potential": cfg.potential,
        "method": lt.method,
        "c_est": lt.c_est,
        "diagnostics": lt.diagnostics,
        "cross_check": im.to_dict(),
        "gap": gap,
        "upper_bound": bound,
        "passed": ok,
    }
    return [write_json(out / "critical_value.json", rec)], ok


def _evolve(cfg: ExperimentConfig, out: Path, workers: int):
    model = HamiltonianModel(cfg.preset, cfg.potential, cfg.dim)
    hr = build_modified(model, cfg.R_schedule[-1])
    le = LagrangianEvaluator(hr)
    grid = TorusGrid(cfg.dim, cfg.N)
    # the window default only needs a rough energy level; u = 0 gives an upper bound
    c_ref = c_upper_bound(hr, grid)
    v_max = cfg.v_max_override or default_v_max(model, c_ref)
    phi = initial_datum(cfg.initial_data[0], grid)
    trace = evolve(phi, le, cfg.tau, cfg.T, v_max, workers=workers, refine=cfg.refine, quadrature=cfg.quadrature)
    files = []
    write_trace_csv(trace, out / "trace.csv", every=cfg.record_every)
    files += [out / "trace.csv", out / "trace.json"]
    orbit = reconstruct_orbit(trace, 0, trace.snapshots[-1].time)
    write_orbit_csv(orbit, out / "orbit.csv")
    files.append(out / "orbit.csv")
    flagged = trace.window_flag(burn_in=0.5 * cfg.T)
    final = trace.snapshots[-1]
    rec = {
        "datum": cfg.initial_data[0],
        "steps": trace.steps,
        "v_max": v_max,
        "final_lip": lipschitz_estimate(final),
        "final_K": semiconcavity_estimate(final),
        "orbit_node": 0,
        "orbit_energy": orbit_energy_check(orbit, model, c_ref),
        "window_flag_after_half": flagged,
        "passed": not flagged,
    }
    files.append(write_json(out / "evolve.json", rec))
    return files, not flagged


def _regularity(cfg: ExperimentConfig, out: Path, workers: int):
    report = run_family_experiment(cfg, workers=workers)
    return write_report(report, out), report.passed


HANDLERS = {
    "verify-hr": _verify_hr,
    "critical-value": _critical_value,
    "evolve": _evolve,
    "regularity-experiment": _regularity,
}


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out: Path, files) -> Path:
    entries = {p.name: {"sha256": sha256_file(p), "bytes": p.stat().st_size} for p in sorted(files, key=lambda p: p.name)}
    return write_json(out / "manifest.json", {"files": entries})


def run(subcommand: str, cfg: ExperimentConfig, out_dir, workers: int = 1, argv=None) -> int:
    if subcommand not in HANDLERS:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files, ok = HANDLERS[subcommand](cfg, out, workers)
    meta = {
        "subcommand": subcommand,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "workers": workers,
        "argv": list(argv) if argv is not None else None,
        "config": cfg.to_dict(),
    }
    files = list(files) + [write_json(out / "config.resolved.json", cfg.to_dict())]
    files.append(write_json(out / "metadata.json", meta))
    write_manifest(out, files)
    return EXIT_OK if ok else EXIT_CHECKS


def _threads(arg) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("HJLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer HJLAB_THREADS=%r", env)
    return 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hjlab", description="Lax-Oleinik experiments for Hamilton-Jacobi equations on the torus.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="JSON experiment configuration")
    ap.add_argument("--out", help="output directory (default: config output_dir or ./hjlab-out)")
    ap.add_argument("--threads", type=int, help="worker count (env HJLAB_THREADS)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_IO
    out = args.out or cfg.output_dir or "hjlab-out"
    workers = _threads(args.threads)
    if workers < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return EXIT_IO
    try:
        code = run(args.subcommand, cfg, out, workers=workers, argv=sys.argv if argv is None else argv)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except HJLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"{args.subcommand}: {'ok' if code == EXIT_OK else 'checks failed'} -> {out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
