"""Strict JSON experiment configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError
from .hamiltonian import POTENTIALS, PRESETS

DATA_PRESETS = ("sqrt-cusp", "holder", "sawtooth", "cosine", "random-nodal", "zero", "constant")
DEFAULT_FAMILY = ({"name": "sqrt-cusp"}, {"name": "holder"}, {"name": "cosine"})

# allowed parameters per initial-data preset
_DATUM_KEYS = {
    "sqrt-cusp": {"x0"},
    "holder": {"x0", "gamma"},
    "sawtooth": {"k"},
    "cosine": {"k"},
    "random-nodal": {"seed", "knots", "amplitude"},
    "zero": set(),
    "constant": {"value"},
}

DEFAULT_TOLERANCES = {
    "c_cross": 5e-2,
    "lip_spread": 1.1,
    "r_agreement": 1e-6,
    "energy_level": 1.0,
    "energy_tol": 0.1,
    "calibration": 5e-2,
    "refinement": 0.10,
    "flatness": 0.05,
    "window": 5,
}

_ALIASES = {"pendulum": ("mechanical", "cos")}


@dataclass
class ExperimentConfig:
    preset: str
    potential: str
    dim: int = 1
    N: int = 512
    tau: float = 0.01
    T: float = 30.0
    R: float = 5.0
    R_schedule: list = field(default_factory=lambda: [4.0, 8.0])
    v_max_override: float | None = None
    initial_data: list = field(default_factory=lambda: [dict(d) for d in DEFAULT_FAMILY])
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    output_dir: str | None = None
    c_T: float = 50.0
    record_every: int = 10
    refine_check: bool = False
    samples: int = 1000
    seed: int = 0
    quadrature: str = "midpoint"
    refine: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def datum_ids(self) -> list:
        seen = {}
        ids = []
        for d in self.initial_data:
            k = seen.get(d["name"], 0)
            seen[d["name"]] = k + 1
            ids.append(d["name"] if k == 0 else f"{d['name']}#{k}")
        return ids


_TYPES = {
    "preset": str,
    "potential": str,
    "dim": int,
    "N": int,
    "tau": float,
    "T": float,
    "R": float,
    "R_schedule": list,
    "v_max_override": (float, type(None)),
    "initial_data": list,
    "tolerances": dict,
    "output_dir": (str, type(None)),
    "c_T": float,
    "record_every": int,
    "refine_check": bool,
    "samples": int,
    "seed": int,
    "quadrature": str,
    "refine": bool,
}


def _number(value, pointer, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError("expected a number", pointer)
    if integer and not (isinstance(value, int) or float(value).is_integer()):
        raise ConfigError("expected an integer", pointer)
    return int(value) if integer else float(value)


def _check_type(key, value):
    want = _TYPES[key]
    ptr = "/" + key
    if want is int:
        return _number(value, ptr, integer=True)
    if want is float:
        return _number(value, ptr)
    if want == (float, type(None)):
        return None if value is None else _number(value, ptr)
    if want == (str, type(None)):
        if value is not None and not isinstance(value, str):
            raise ConfigError("expected a string or null", ptr)
        return value
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError("expected a boolean", ptr)
        return value
    if not isinstance(value, want):
        raise ConfigError(f"expected {want.__name__}", ptr)
    return value


def _datum(raw, k):
    ptr = f"/initial_data/{k}"
    if isinstance(raw, str):
        raw = {"name": raw}
    if not isinstance(raw, dict) or "name" not in raw:
        raise ConfigError("initial datum needs a name", ptr)
    name = raw["name"]
    if name not in _DATUM_KEYS:
        raise ConfigError(f"unknown initial datum {name!r}", ptr + "/name")
    out = {"name": name}
    for key, value in raw.items():
        if key == "name":
            continue
        if key not in _DATUM_KEYS[name]:
            raise ConfigError(f"unknown key for {name}", f"{ptr}/{key}")
        integer = key in ("seed", "knots", "k")
        out[key] = _number(value, f"{ptr}/{key}", integer=integer)
    if name == "random-nodal" and "seed" not in out:
        raise ConfigError("randomized datum requires a seed", ptr)
    return out


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    for key in data:
        if key not in _TYPES:
            raise ConfigError("unknown key", "/" + key)
    vals = {k: _check_type(k, v) for k, v in data.items()}
    for key in ("preset", "potential"):
        if key not in vals:
            raise ConfigError("missing required field", "/" + key)
    if vals["preset"] in _ALIASES:
        preset, pot = _ALIASES[vals["preset"]]
        if vals["potential"] != pot:
            raise ConfigError(f"pendulum implies potential {pot!r}", "/potential")
        vals["preset"] = preset
    if vals["preset"] not in PRESETS:
        raise ConfigError(f"unknown preset {vals['preset']!r}", "/preset")
    if vals["potential"] not in POTENTIALS:
        raise ConfigError(f"unknown potential {vals['potential']!r}", "/potential")
    if "R_schedule" in vals:
        vals["R_schedule"] = [_number(r, f"/R_schedule/{k}") for k, r in enumerate(vals["R_schedule"])]
    if "initial_data" in vals:
        vals["initial_data"] = [_datum(d, k) for k, d in enumerate(vals["initial_data"])]
    if "tolerances" in vals:
        tol = dict(DEFAULT_TOLERANCES)
        for key, value in vals["tolerances"].items():
            if key not in DEFAULT_TOLERANCES:
                raise ConfigError("unknown tolerance", "/tolerances/" + key)
            tol[key] = _number(value, "/tolerances/" + key, integer=key == "window")
        vals["tolerances"] = tol
    cfg = ExperimentConfig(**vals)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.dim not in (1, 2):
        raise ConfigError("dim must be 1 or 2", "/dim")
    if POTENTIALS[cfg.potential][1] > cfg.dim:
        raise ConfigError(f"potential {cfg.potential!r} needs dim >= {POTENTIALS[cfg.potential][1]}", "/potential")
    if cfg.N < 8:
        raise ConfigError("N must be at least 8", "/N")
    if not cfg.tau > 0:
        raise ConfigError("tau must be positive", "/tau")
    if cfg.T < 0:
        raise ConfigError("T must be nonnegative", "/T")
    if not cfg.R > 1:
        raise ConfigError("R must exceed 1", "/R")
    if not cfg.R_schedule:
        raise ConfigError("R_schedule must be nonempty", "/R_schedule")
    if any(b <= a for a, b in zip(cfg.R_schedule, cfg.R_schedule[1:])):
        raise ConfigError("R_schedule not ascending", "/R_schedule")
    if any(r <= 1 for r in cfg.R_schedule):
        raise ConfigError("R_schedule entries must exceed 1", "/R_schedule")
    if cfg.v_max_override is not None and not cfg.v_max_override > 0:
        raise ConfigError("v_max_override must be positive", "/v_max_override")
    if cfg.record_every < 1:
        raise ConfigError("record_every must be positive", "/record_every")
    if cfg.quadrature not in ("midpoint", "arrival"):
        raise ConfigError("quadrature must be 'midpoint' or 'arrival'", "/quadrature")
    if cfg.refine and cfg.dim != 1:
        raise ConfigError("parabolic refinement needs dim 1", "/refine")
    if cfg.c_T <= 0:
        raise ConfigError("c_T must be positive", "/c_T")


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (line {exc.lineno})") from exc
    return config_from_dict(data)
