"""Lipschitz and semiconcavity tracking along Lax-Oleinik evolutions."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .critical_value import estimate_c_infmax, estimate_c_longtime
from .errors import InvalidArgument
from .hamiltonian import HamiltonianModel, build_modified, coercivity_radius
from .lax_oleinik import calibration_check, default_v_max, evolve, orbit_energy_check, reconstruct_orbit
from .legendre import LagrangianEvaluator
from .torus import TorusGrid, ValueFunction, periodic_distance


def lipschitz_estimate(u: ValueFunction) -> float:
    """Largest difference quotient over nearest-neighbour pairs."""
    h = u.grid.h
    best = 0.0
    for a in range(u.grid.dim):
        d = np.abs(np.roll(u.values, -1, axis=a) - u.values)
        best = max(best, float(d.max()) / h)
    return best


def semiconcavity_estimate(u: ValueFunction) -> float:
    """Largest axis second difference over ``h^2``, clamped below at 0."""
    h = u.grid.h
    best = 0.0
    for a in range(u.grid.dim):
        d2 = np.roll(u.values, -1, axis=a) + np.roll(u.values, 1, axis=a) - 2.0 * u.values
        best = max(best, float(d2.max()) / (h * h))
    return best


@dataclass
class StabilizationResult:
    detected: bool
    t0: float | None
    iota: float | None
    index: int | None


def detect_t0(times, values, window: int = 5, flatness: float = 0.05) -> StabilizationResult:
    """Earliest time after which the series stays in a relative band of its last value.

    The tail from ``t0`` on must hold at least ``window`` samples, all within
    ``flatness * |terminal|`` of the terminal value.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size == 0 or times.shape != values.shape:
        raise InvalidArgument("series must be nonempty and aligned")
    if np.any(np.diff(times) <= 0):
        raise InvalidArgument("times must be increasing")
    last = values[-1]
    inside = np.abs(values - last) <= flatness * abs(last)
    # first index of the trailing run of in-band samples
    outside = np.flatnonzero(~inside)
    start = 0 if outside.size == 0 else int(outside[-1]) + 1
    if values.size - start < window or not np.all(np.isfinite(values[start:])):
        return StabilizationResult(False, None, None, None)
    return StabilizationResult(True, float(times[start]), float(values[start:].max()), start)


def initial_datum(spec: dict, grid: TorusGrid) -> ValueFunction:
    """Sample a named initial-data preset on ``grid``."""
    name = spec["name"]
    x = grid.coords()
    if name in ("sqrt-cusp", "holder"):
        x0 = np.full(grid.dim, spec.get("x0", 0.5))
        d = periodic_distance(x, x0)
        gamma = 0.5 if name == "sqrt-cusp" else spec.get("gamma", 1.0 / 3.0)
        vals = d**gamma
    elif name == "sawtooth":
        k = spec.get("k", 4)
        s = np.mod(k * x[:, 0], 1.0)
        vals = np.minimum(s, 1.0 - s)
    elif name == "cosine":
        vals = np.cos(2.0 * np.pi * spec.get("k", 1) * x[:, 0])
    elif name == "random-nodal":
        vals = _random_nodal(x, grid.dim, spec["seed"], spec.get("knots", 16), spec.get("amplitude", 1.0))
    elif name == "zero":
        vals = np.zeros(grid.size)
    elif name == "constant":
        vals = np.full(grid.size, float(spec.get("value", 0.0)))
    else:
        raise InvalidArgument(f"unknown initial datum {name!r}")
    return ValueFunction(grid, vals)


def _random_nodal(x, dim, seed, knots, amplitude):
    rng = np.random.default_rng(seed)
    table = amplitude * rng.uniform(-1.0, 1.0, size=(knots,) * dim)
    # multilinear periodic interpolation through the knot values
    s = x * knots
    i0 = np.floor(s).astype(int)
    f = s - i0
    out = np.zeros(len(x))
    for corner in np.ndindex(*(2,) * dim):
        c = np.array(corner)
        w = np.prod(np.where(c == 1, f, 1.0 - f), axis=-1)
        idx = tuple(np.mod(i0[:, d] + c[d], knots) for d in range(dim))
        out += w * table[idx]
    return out


@dataclass(frozen=True)
class RunSpec:
    """One evolution of the family experiment."""

    datum_id: str
    datum: tuple
    R: float
    preset: str
    potential: str
    dim: int
    N: int
    tau: float
    T: float
    v_max: float
    record_every: int
    orbit_nodes: tuple
    c_est: float
    quadrature: str = "midpoint"
    refine: bool = False
    workers: int = 1

    @property
    def key(self):
        return (self.datum_id, self.R)


def _run(spec: RunSpec) -> dict:
    model = HamiltonianModel(spec.preset, spec.potential, spec.dim)
    le = LagrangianEvaluator(build_modified(model, spec.R))
    grid = TorusGrid(spec.dim, spec.N)
    phi = initial_datum(dict(spec.datum), grid)
    trace = evolve(
        phi, le, spec.tau, spec.T, spec.v_max, workers=spec.workers, refine=spec.refine, quadrature=spec.quadrature
    )
    rec = list(range(0, trace.steps + 1, spec.record_every))
    if rec[-1] != trace.steps:
        rec.append(trace.steps)
    values = np.stack([trace.snapshots[k].flat for k in rec])
    orbits = []
    for node in spec.orbit_nodes:
        o = reconstruct_orbit(trace, node, trace.snapshots[-1].time)
        chk = orbit_energy_check(o, model, spec.c_est)
        orbits.append({"node": int(node), "max_normalized_energy": chk["max_normalized_energy"], "max_speed": o.speed_max})
    return {
        "key": spec.key,
        "times": [trace.snapshots[k].time for k in rec],
        "values": values,
        "boundary_hits": [int(h) for h in trace.boundary_hits],
        "orbits": orbits,
        "mu_R": le.hr.mu_R,
    }


def run_all(specs, workers: int = 1) -> list:
    """Execute runs, concurrently when ``workers > 1``; results sorted by key."""
    if workers > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(specs))) as pool:
            results = list(pool.map(_run, specs))
    else:
        results = [_run(s) for s in specs]
    return sorted(results, key=lambda r: (r["key"][0], r["key"][1]))


@dataclass
class RegularityReport:
    metadata: dict
    critical_value: dict
    per_datum: dict
    t0_star: float | None
    iota_star: float | None
    K_star: float | None
    lip_spread: float | None
    r_agreement: float | None
    drift: dict
    orbits: dict
    calibration: dict
    checks: dict
    refinement: dict | None = None
    series: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("series")
        d["passed"] = self.passed
        return d


def _family_runs(cfg: ExperimentConfig, N: int, c_est: float, v_max: float, workers: int):
    grid = TorusGrid(cfg.dim, N)
    stride = max(1, grid.size // 16)
    nodes = tuple(range(0, grid.size, stride))
    specs = [
        RunSpec(
            datum_id=i,
            datum=tuple(sorted(d.items())),
            R=float(R),
            preset=cfg.preset,
            potential=cfg.potential,
            dim=cfg.dim,
            N=N,
            tau=cfg.tau,
            T=cfg.T,
            v_max=v_max,
            record_every=cfg.record_every,
            orbit_nodes=nodes if R == cfg.R_schedule[-1] else (),
            c_est=c_est,
            quadrature=cfg.quadrature,
            refine=cfg.refine,
        )
        for i, d in zip(cfg.datum_ids(), cfg.initial_data)
        for R in cfg.R_schedule
    ]
    return grid, run_all(specs, workers)


def _summarize(cfg, grid, results, ids):
    """Per-datum min-over-R series, stabilization and common constants."""
    tol = cfg.tolerances
    per, series, mins = {}, [], {}
    for did in ids:
        runs = [r for r in results if r["key"][0] == did]
        times = runs[0]["times"]
        umin = np.min(np.stack([r["values"] for r in runs]), axis=0)
        mins[did] = (times, umin, runs)
        lips, Ks = [], []
        for k, t in enumerate(times):
            u = ValueFunction(grid, umin[k], t)
            lips.append(lipschitz_estimate(u))
            Ks.append(semiconcavity_estimate(u))
        for r in runs:
            for k, t in enumerate(times):
                u = ValueFunction(grid, r["values"][k], t)
                series.append((did, repr(r["key"][1]), t, lipschitz_estimate(u), semiconcavity_estimate(u)))
        for k, t in enumerate(times):
            series.append((did, "min", t, lips[k], Ks[k]))
        st = detect_t0(times, lips, window=int(tol["window"]), flatness=tol["flatness"])
        per[did] = {"t0": st.t0, "iota": st.iota, "detected": st.detected, "times": times, "lip": lips, "K": Ks}
    detected = all(p["detected"] for p in per.values())
    t0s = max(p["t0"] for p in per.values()) if detected else None
    iota = K_star = spread = agree = None
    if detected:
        post = []
        kpost = []
        agree = 0.0
        for did, (times, umin, runs) in mins.items():
            sel = [k for k, t in enumerate(times) if t >= t0s - 1e-12]
            post += [per[did]["lip"][k] for k in sel]
            kpost += [per[did]["K"][k] for k in sel]
            top = runs[-1]["values"]
            agree = max(agree, float(np.max(np.abs(umin[sel] - top[sel]))))
        iota = max(post)
        K_star = max(kpost)
        spread = max(post) / min(post) if min(post) > 0 else (1.0 if max(post) == 0 else math.inf)
    return per, series, mins, t0s, iota, K_star, spread, agree


def run_family_experiment(cfg: ExperimentConfig, workers: int = 1, c_est: float | None = None) -> RegularityReport:
    if len(cfg.initial_data) < 2:
        raise InvalidArgument("the family experiment needs at least two initial data")
    tol = cfg.tolerances
    model = HamiltonianModel(cfg.preset, cfg.potential, cfg.dim)
    grid = TorusGrid(cfg.dim, cfg.N)
    hr_top = build_modified(model, cfg.R_schedule[-1])
    le_top = LagrangianEvaluator(hr_top)
    cv = {}
    if c_est is None:
        lt = estimate_c_longtime(le_top, grid, tau=cfg.tau, T=cfg.c_T, v_max=cfg.v_max_override, quadrature=cfg.quadrature)
        im = estimate_c_infmax(hr_top, grid)
        c_est = lt.c_est
        cv = {"longtime": lt.to_dict(), "infmax": im.to_dict(), "gap": abs(lt.c_est - im.c_est)}
    cv["c_est"] = c_est
    v_max = cfg.v_max_override or default_v_max(model, c_est)
    ids = cfg.datum_ids()

    grid, results = _family_runs(cfg, cfg.N, c_est, v_max, workers)
    per, series, mins, t0s, iota, K_star, spread, agree = _summarize(cfg, grid, results, ids)

    drift = {}
    for did, (times, umin, _) in mins.items():
        if len(times) >= 2:
            a, b = len(times) - 2, len(times) - 1
            drift[did] = float(np.max(np.abs(umin[b] + c_est * times[b] - umin[a] - c_est * times[a])))

    orbit_rows = {}
    worst_energy = -math.inf
    for r in results:
        if r["orbits"]:
            orbit_rows[r["key"][0]] = r["orbits"]
            worst_energy = max(worst_energy, max(o["max_normalized_energy"] for o in r["orbits"]))

    first = ids[0]
    times, umin, _ = mins[first]
    u_bar = ValueFunction(grid, umin[-1] + c_est * times[-1], times[-1])
    calib = calibration_check(u_bar, le_top, c_est, v_max, tol=tol["calibration"])

    refinement = None
    if cfg.refine_check:
        g2, res2 = _family_runs(cfg, 2 * cfg.N, c_est, v_max, workers)
        _, _, _, t0b, iota_b, K_b, _, _ = _summarize(cfg, g2, res2, ids)
        refinement = {
            "N": [cfg.N, 2 * cfg.N],
            "t0_star": [t0s, t0b],
            "iota_star": [iota, iota_b],
            "K_star": [K_star, K_b],
            "iota_rel_change": _rel(iota, iota_b),
            "K_rel_change": _rel(K_star, K_b),
        }

    k_finite = all(np.all(np.isfinite(p["K"][1:])) for p in per.values())
    checks = {
        "stabilized": t0s is not None,
        "lip_spread": spread is not None and spread <= tol["lip_spread"],
        "r_agreement": agree is not None and agree < tol["r_agreement"],
        "orbit_energy": worst_energy <= tol["energy_level"] + tol["energy_tol"],
        "calibration": calib["passed"],
        "K_finite": bool(k_finite),
    }
    if "gap" in cv:
        checks["c_cross"] = cv["gap"] <= tol["c_cross"]
    if refinement is not None:
        checks["iota_refinement"] = refinement["iota_rel_change"] is not None and refinement["iota_rel_change"] < tol["refinement"]
        checks["K_refinement"] = refinement["K_rel_change"] is not None and refinement["K_rel_change"] < tol["refinement"]
    meta = {
        "preset": cfg.preset,
        "potential": cfg.potential,
        "dim": cfg.dim,
        "N": cfg.N,
        "tau": cfg.tau,
        "T": cfg.T,
        "R_schedule": list(cfg.R_schedule),
        "mu_R": {repr(r["key"][1]): r["mu_R"] for r in results},
        "v_max": v_max,
        "quadrature": cfg.quadrature,
        "refine": cfg.refine,
        "initial_data": cfg.initial_data,
        "boundary_hits": {f"{r['key'][0]}@{r['key'][1]!r}": int(sum(r["boundary_hits"])) for r in results},
        # largest |p| on the normalized sublevel H - c <= level; compared with iota*, never asserted
        "sublevel_momentum_radius": coercivity_radius(model, c_est + tol["energy_level"]),
    }
    return RegularityReport(
        metadata=meta,
        critical_value=cv,
        per_datum=per,
        t0_star=t0s,
        iota_star=iota,
        K_star=K_star,
        lip_spread=spread,
        r_agreement=agree,
        drift=drift,
        orbits={"worst_normalized_energy": worst_energy, "runs": orbit_rows},
        calibration=calib,
        checks=checks,
        refinement=refinement,
        series=series,
    )


def _rel(a, b):
    if a is None or b is None:
        return None
    if a == b:
        return 0.0
    return abs(b - a) / max(abs(a), abs(b))


def write_report(report: RegularityReport, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep = out / "regularity_report.json"
    rep.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    lip = out / "lip_series.csv"
    with lip.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["datum_id", "R", "t", "lip", "K"])
        for did, R, t, l, K in report.series:
            w.writerow([did, R, repr(float(t)), repr(float(l)), repr(float(K))])
    return [rep, lip]
