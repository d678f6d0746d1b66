"""Two estimators of the critical value and an R-stability table."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .hamiltonian import HamiltonianModel, ModifiedHamiltonian, build_modified
from .lax_oleinik import default_v_max, evolve
from .legendre import LagrangianEvaluator
from .torus import TorusGrid, ValueFunction

log = logging.getLogger(__name__)


@dataclass
class CriticalValueEstimate:
    c_est: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_c_longtime(
    le: LagrangianEvaluator,
    grid: TorusGrid,
    tau: float = 0.01,
    T: float = 50.0,
    v_max: float | None = None,
    workers: int = 1,
    quadrature: str = "midpoint",
) -> CriticalValueEstimate:
    """Slope of the spatial mean of ``T_t 0`` between ``T/2`` and ``T``."""
    hr = le.hr
    if v_max is None:
        v_max = default_v_max(hr.base, float(np.max(hr.base.value(grid.coords(), np.zeros((grid.size, grid.dim))))))
    zero = ValueFunction(grid, np.zeros(grid.size))
    trace = evolve(zero, le, tau, T, v_max, workers=workers, quadrature=quadrature)
    half = trace.snapshot_index(round(trace.steps / 2) * tau)
    u_half, u_end = trace.snapshots[half], trace.snapshots[-1]
    dt = u_end.time - u_half.time
    c = -(u_end.flat.mean() - u_half.flat.mean()) / dt
    flagged = trace.window_flag(burn_in=u_half.time)
    if flagged:
        log.warning("argmin reached the velocity window edge; longtime estimate may be unreliable")
    diag = {
        "T": u_end.time,
        "tau": tau,
        "N": grid.N,
        "v_max": v_max,
        "oscillation": float(u_end.flat.max() - u_end.flat.min()),
        "window_flag": bool(flagged),
    }
    return CriticalValueEstimate(float(c) + 0.0, "longtime", diag)


def _gradient(u: np.ndarray, h: float) -> np.ndarray:
    return np.stack([(np.roll(u, -1, axis=a) - np.roll(u, 1, axis=a)) / (2 * h) for a in range(u.ndim)], axis=-1)


def _gradient_adjoint(g: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros(g.shape[:-1])
    for a in range(g.shape[-1]):
        out += (np.roll(g[..., a], 1, axis=a) - np.roll(g[..., a], -1, axis=a)) / (2 * h)
    return out


def _smoothed(values: np.ndarray, temp: float):
    m = values.max()
    w = np.exp((values - m) / temp)
    s = w.sum()
    return m + temp * np.log(s), w / s


def estimate_c_infmax(
    hr: ModifiedHamiltonian,
    grid: TorusGrid,
    stages: int = 12,
    iters: int = 400,
    stall_window: int = 100,
    stall_tol: float = 1e-8,
    u0=None,
) -> CriticalValueEstimate:
    """Minimize ``max_x H_R(x, Du)`` over grid functions by softmax continuation.

    Each stage runs Armijo gradient descent on the log-sum-exp surrogate at a
    fixed temperature, halved between stages, and restarts from the best
    iterate so far. The returned value is the best exact max seen, so it never
    increases across accepted steps.
    """
    x = grid.coords().reshape(grid.shape + (grid.dim,))
    h = grid.h
    u = np.zeros(grid.shape) if u0 is None else np.asarray(u0, dtype=float).reshape(grid.shape).copy()

    def exact(u):
        return float(np.max(hr.value(x, _gradient(u, h))))

    best = exact(u)
    best_u = u.copy()
    start = best
    spread = float(np.ptp(hr.value(x, _gradient(u, h))))
    temp = max(spread, 1e-3) / 8.0
    accepted = 0
    stalled = False
    for stage in range(stages):
        step = 1.0
        since, ref = 0, best
        for _ in range(iters):
            val, grad, _ = hr.derivatives(x, _gradient(u, h))
            f, w = _smoothed(val, temp)
            g = _gradient_adjoint(w[..., None] * grad, h)
            gg = float(np.sum(g * g))
            if gg == 0.0:
                break
            taken = False
            while step > 1e-14:
                trial = u - step * g
                ft, _ = _smoothed(hr.value(x, _gradient(trial, h)), temp)
                if ft <= f - 1e-4 * step * gg:
                    u, taken = trial, True
                    accepted += 1
                    step *= 2.0
                    e = exact(u)
                    if e < best:
                        best, best_u = e, u.copy()
                    break
                step *= 0.5
            if not taken:
                break
            since += 1
            if since >= stall_window:
                if ref - best < stall_tol * max(1.0, abs(ref)):
                    stalled = True
                    break
                since, ref = 0, best
        temp *= 0.5
        u = best_u.copy()
    diag = {
        "start": start,
        "accepted_steps": accepted,
        "stall": stalled,
        "stages": stages,
        "final_temperature": temp * 2.0,
        "N": grid.N,
        "R": hr.R,
        "oscillation_u": float(np.ptp(best_u)),
    }
    return CriticalValueEstimate(best, "infmax", diag)


def c_upper_bound(hr: ModifiedHamiltonian, grid: TorusGrid) -> float:
    """``max_x H_R(x, 0)``, the value certified by ``u = 0``."""
    x = grid.coords()
    return float(np.max(hr.value(x, np.zeros_like(x))))


def check_cR_stability(
    model: HamiltonianModel,
    R_list,
    grid: TorusGrid,
    tol: float = 1e-2,
    method: str = "infmax",
    tau: float = 0.01,
    T: float = 50.0,
) -> dict:
    """Table of ``c_R`` against ``R``; passes when the tail agrees within ``tol``."""
    R_list = [float(r) for r in R_list]
    if any(b <= a for a, b in zip(R_list, R_list[1:])):
        raise ValueError("R_list must be strictly ascending")
    rows = []
    for R in R_list:
        hr = build_modified(model, R)
        if method == "infmax":
            est = estimate_c_infmax(hr, grid)
        else:
            est = estimate_c_longtime(LagrangianEvaluator(hr), grid, tau=tau, T=T)
        rows.append({"R": R, "mu_R": hr.mu_R, "c_R": est.c_est, "method": est.method})
    c = [r["c_R"] for r in rows]
    if len(rows) == 1:
        return {"rows": rows, "R0_est": R_list[0], "max_gap": 0.0, "passed": True, "note": "single radius"}
    R0 = None
    for k in range(len(rows) - 1):
        if abs(c[k + 1] - c[k]) <= tol:
            R0 = k
            break
    if R0 is None:
        return {"rows": rows, "R0_est": None, "max_gap": float(np.ptp(c)), "passed": False, "tol": tol}
    tail = c[R0:]
    gap = float(max(tail) - min(tail))
    return {"rows": rows, "R0_est": R_list[R0], "max_gap": gap, "passed": bool(gap <= tol), "tol": tol}
