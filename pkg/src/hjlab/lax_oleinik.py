"""Discrete Lax-Oleinik evolution on a periodic grid.

One step of size ``tau`` is the min-plus product

    out[x] = min_y  phi[y] + tau * L_R(x, (x - y) / tau)

over source nodes ``y`` inside the velocity window. ``L_R`` is evaluated at
the segment midpoint by default (``quadrature="arrival"`` uses ``x``). The
cost table depends only on ``(le, grid, tau, v_max, quadrature)`` and is built
once per operator.
"""

from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .hamiltonian import HamiltonianModel, Sampling, coercivity_radius, eval_H, grid_samples
from .legendre import LagrangianEvaluator
from .torus import TorusGrid, ValueFunction, min_image


def default_v_max(model: HamiltonianModel, c_est: float, margin: float = 2.0, safety: float = 1.5) -> float:
    """``safety * max |dH/dp|`` over the sampled sublevel ``H <= c_est + margin``."""
    level = c_est + margin
    r = coercivity_radius(model, level)
    x, p = grid_samples(model.dim, Sampling.for_dim(model.dim), 0.0, r)
    xb, pb = np.broadcast_arrays(x, p)
    val, grad, _ = model.derivatives(xb, pb)
    speed = np.linalg.norm(grad, axis=-1)
    return safety * float(np.max(np.where(val <= level, speed, 0.0)))


QUADRATURES = ("midpoint", "arrival")

# Costs live on a dyadic grid: for data on a coarser dyadic grid of moderate
# size every min-plus sum is exact, so the semigroup laws hold bit for bit.
COST_QUANTUM = 2.0**-40


def window_offsets(grid: TorusGrid, tau: float, v_max: float) -> np.ndarray:
    """Integer displacements ``x - y`` with ``|x - y| <= v_max * tau``, shape ``(m, dim)``.

    Offsets are reduced to their minimal periodic representative, so a window
    wider than the torus lists every node exactly once.
    """
    if not tau > 0:
        raise InvalidArgument("tau must be positive")
    reach = v_max * tau
    if reach < grid.h * (1.0 - 1e-12):
        raise InvalidArgument(f"empty velocity window: v_max*tau={reach:g} below h={grid.h:g}")
    J = int(np.floor(reach / grid.h + 1e-9))
    J = min(J, grid.N)
    axis = np.arange(-J, J + 1)
    mesh = np.stack(np.meshgrid(*([axis] * grid.dim), indexing="ij"), axis=-1).reshape(-1, grid.dim)
    keep = np.sqrt(np.sum((mesh * grid.h) ** 2, axis=-1)) <= reach * (1.0 + 1e-12)
    mesh = min_image(mesh[keep], grid.N)
    # dedupe after wrapping; np.unique sorts lexicographically, which fixes the order
    return np.unique(mesh, axis=0)


def _boundary_mask(offsets: np.ndarray) -> np.ndarray:
    """Offsets with a unit neighbour outside the window."""
    present = {tuple(o) for o in offsets.tolist()}
    dim = offsets.shape[1]
    out = np.zeros(len(offsets), dtype=bool)
    for k, o in enumerate(offsets.tolist()):
        for d in range(dim):
            for s in (-1, 1):
                q = list(o)
                q[d] += s
                if tuple(q) not in present:
                    out[k] = True
    return out


@dataclass(frozen=True, eq=False)
class LaxOleinikOperator:
    """Precomputed one-step operator; build through :func:`operator_for`."""

    le: LagrangianEvaluator
    grid: TorusGrid
    tau: float
    v_max: float
    offsets: np.ndarray = field(repr=False)
    sources: np.ndarray = field(repr=False)
    costs: np.ndarray = field(repr=False)
    on_boundary: np.ndarray = field(repr=False)
    quadrature: str = "midpoint"

    @classmethod
    def build(
        cls, le: LagrangianEvaluator, grid: TorusGrid, tau: float, v_max: float, quadrature: str = "midpoint"
    ) -> "LaxOleinikOperator":
        if le.hr.dim != grid.dim:
            raise InvalidArgument("grid and Hamiltonian dimensions differ")
        if quadrature not in QUADRATURES:
            raise InvalidArgument(f"quadrature must be one of {QUADRATURES}")
        offsets = window_offsets(grid, tau, v_max)
        nodes = grid.multi_index(np.arange(grid.size))
        sources = grid.flat_index(nodes[:, None, :] - offsets[None, :, :])
        x = grid.coords()[:, None, :]
        if quadrature == "midpoint":
            x = np.mod(x - 0.5 * grid.h * offsets[None, :, :], 1.0)
        v = np.broadcast_to(offsets * (grid.h / tau), x.shape[:1] + offsets.shape)
        L, _ = le.evaluate(np.broadcast_to(x, v.shape), v)
        costs = np.round(tau * L / COST_QUANTUM) * COST_QUANTUM
        return cls(le, grid, float(tau), float(v_max), offsets, sources, costs, _boundary_mask(offsets), quadrature)

    @property
    def velocities(self) -> np.ndarray:
        return self.offsets * (self.grid.h / self.tau)

    def _apply(self, phi: np.ndarray, rows: slice):
        src = self.sources[rows]
        cand = phi[src] + self.costs[rows]
        best = cand.min(axis=1)
        # smallest flat source index among exact ties
        tied = cand == best[:, None]
        arg = np.where(tied, src, np.iinfo(src.dtype).max).min(axis=1)
        return best, arg

    def step(self, phi: ValueFunction, workers: int = 1, refine: bool = False):
        """Return ``(ValueFunction, backpointers, boundary_hits)``."""
        if phi.grid != self.grid:
            raise InvalidArgument("value function lives on a different grid")
        flat = phi.flat
        size = self.grid.size
        if workers <= 1 or size < 2 * workers:
            out, arg = self._apply(flat, slice(0, size))
        else:
            bounds = np.linspace(0, size, workers + 1).astype(int)
            parts = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda s: self._apply(flat, s), parts))
            out = np.concatenate([r[0] for r in results])
            arg = np.concatenate([r[1] for r in results])
        if refine:
            out = self._parabolic(flat, out, arg)
        off = min_image(self.grid.multi_index(np.arange(size)) - self.grid.multi_index(arg), self.grid.N)
        hits = int(np.count_nonzero(self.on_boundary[self._offset_index(off)]))
        return ValueFunction(self.grid, out, phi.time + self.tau), arg, hits

    def _offset_index(self, off: np.ndarray) -> np.ndarray:
        lookup = np.full(self.grid.size, -1)
        lookup[self.grid.flat_index(self.offsets)] = np.arange(len(self.offsets))
        col = lookup[self.grid.flat_index(off)]
        if np.any(col < 0):
            raise InvalidArgument("displacement outside the velocity window")
        return col

    def _parabolic(self, flat, out, arg):
        # vertex of the parabola through the argmin and its two window neighbours
        if self.grid.dim != 1:
            raise InvalidArgument("parabolic refinement is implemented for dim 1 only")
        N = self.grid.N
        i = np.arange(N)
        # 1D offsets come out of np.unique as a contiguous ascending run
        jc = min_image(i - arg, N) - self.offsets[0, 0]
        m = len(self.offsets)
        ok = (jc >= 1) & (jc <= m - 2)
        jm, jp = jc - 1, jc + 1
        cand = flat[self.sources] + self.costs
        fm = cand[i, np.where(ok, jm, jc)]
        f0 = cand[i, jc]
        fp = cand[i, np.where(ok, jp, jc)]
        curv = fm - 2.0 * f0 + fp
        ok &= curv > 0
        shift = np.where(ok, 0.125 * (fp - fm) ** 2 / np.where(ok, curv, 1.0), 0.0)
        return out - shift


@lru_cache(maxsize=16)
def operator_for(
    le: LagrangianEvaluator, grid: TorusGrid, tau: float, v_max: float, quadrature: str = "midpoint"
) -> LaxOleinikOperator:
    return LaxOleinikOperator.build(le, grid, float(tau), float(v_max), quadrature)


def one_step(
    phi: ValueFunction,
    le: LagrangianEvaluator,
    tau: float,
    v_max: float,
    workers: int = 1,
    refine: bool = False,
    quadrature: str = "midpoint",
):
    """Single Lax-Oleinik step; returns ``(ValueFunction, backpointers)``."""
    out, arg, _ = operator_for(le, phi.grid, tau, v_max, quadrature).step(phi, workers=workers, refine=refine)
    return out, arg


@dataclass
class EvolutionTrace:
    snapshots: list
    backpointers: np.ndarray
    tau: float
    v_max: float
    hr: object
    boundary_hits: list
    operator: LaxOleinikOperator = field(repr=False)

    @property
    def grid(self) -> TorusGrid:
        return self.snapshots[0].grid

    @property
    def steps(self) -> int:
        return len(self.snapshots) - 1

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    def window_flag(self, burn_in: float = 0.0) -> bool:
        """True when an argmin hit the window edge after ``burn_in``."""
        first = int(np.ceil(burn_in / self.tau - 1e-9))
        return any(h > 0 for h in self.boundary_hits[first:])

    def snapshot_index(self, t: float) -> int:
        k = int(round(t / self.tau))
        if k < 0 or k > self.steps or abs(k * self.tau - t) > 1e-9 * max(1.0, abs(t)):
            raise InvalidArgument(f"no snapshot at t={t}")
        return k


def step_count(t_final: float, tau: float) -> int:
    k = int(round(t_final / tau))
    if abs(k * tau - t_final) > 1e-9 * max(1.0, t_final):
        warnings.warn(f"t_final={t_final} is not a multiple of tau={tau}; using {k * tau}", stacklevel=3)
    return k


def evolve(
    phi: ValueFunction,
    le: LagrangianEvaluator,
    tau: float,
    t_final: float,
    v_max: float,
    workers: int = 1,
    refine: bool = False,
    quadrature: str = "midpoint",
) -> EvolutionTrace:
    if t_final < 0:
        raise InvalidArgument("t_final must be nonnegative")
    k = step_count(t_final, tau)
    op = operator_for(le, phi.grid, tau, v_max, quadrature)
    snaps = [ValueFunction(phi.grid, phi.values.copy(), 0.0)]
    back = np.empty((k, phi.grid.size), dtype=np.int64)
    hits = []
    cur = snaps[0]
    for s in range(k):
        cur, back[s], h = op.step(cur, workers=workers, refine=refine)
        cur.time = (s + 1) * tau
        snaps.append(cur)
        hits.append(h)
    return EvolutionTrace(snaps, back, float(tau), float(v_max), le.hr, hits, op)


@dataclass
class OrbitSample:
    nodes: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    momenta: np.ndarray
    energies: np.ndarray
    actions: np.ndarray
    tau: float

    @property
    def speed_max(self) -> float:
        return float(np.max(np.linalg.norm(self.velocities, axis=-1))) if len(self.velocities) else 0.0


def reconstruct_orbit(trace: EvolutionTrace, x: int, t: float) -> OrbitSample:
    """Follow backpointers from node ``x`` at time ``t`` down to time 0."""
    k = trace.snapshot_index(t)
    grid = trace.grid
    if not 0 <= x < grid.size:
        raise InvalidArgument("node index out of range")
    chain = np.empty(k + 1, dtype=np.int64)
    chain[k] = x
    for s in range(k, 0, -1):
        chain[s - 1] = trace.backpointers[s - 1, chain[s]]
    pos = grid.coords(chain)
    off = grid.displacement(chain[:-1], chain[1:]) if k else np.zeros((0, grid.dim), dtype=int)
    vel = off * (grid.h / trace.tau)
    op = trace.operator
    if k:
        col = op._offset_index(off)
        actions = op.costs[chain[1:], col]
        _, mom = op.le.evaluate(pos[:-1], vel)
        energy = trace.hr.base.value(pos[:-1], mom)
    else:
        actions = np.zeros(0)
        mom = np.zeros((0, grid.dim))
        energy = np.zeros(0)
    return OrbitSample(chain, pos, vel, mom, np.asarray(energy, dtype=float), actions, trace.tau)


def orbit_action(orbit: OrbitSample, phi0: float) -> float:
    """``phi(gamma(0))`` plus the step costs, summed in evolution order."""
    total = float(phi0)
    for a in orbit.actions:
        total = total + float(a)
    return total


def orbit_energy_check(orbit: OrbitSample, model: HamiltonianModel, c_est: float, level: float = 1.0, tol: float = 0.1) -> dict:
    if len(orbit.momenta):
        energy = np.asarray(eval_H(model, orbit.positions[:-1], orbit.momenta), dtype=float).reshape(-1)
        worst = float(np.max(energy - c_est))
        at = int(np.argmax(energy - c_est))
    else:
        worst, at = float("-inf"), -1
    return {
        "max_normalized_energy": worst,
        "at_step": at,
        "level": level,
        "tol": tol,
        "passed": bool(worst <= level + tol),
    }


def central_gradient(u: ValueFunction) -> np.ndarray:
    """Central differences per axis, shape ``(size, dim)``."""
    h = u.grid.h
    g = [(np.roll(u.values, -1, axis=a) - np.roll(u.values, 1, axis=a)) / (2 * h) for a in range(u.grid.dim)]
    return np.stack(g, axis=-1).reshape(-1, u.grid.dim)


def _velocity_samples(dim: int, v_max: float, count: int) -> np.ndarray:
    axis = np.linspace(-v_max, v_max, count)
    return np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1).reshape(-1, dim)


def calibration_check(
    u_bar: ValueFunction,
    le: LagrangianEvaluator,
    c_est: float,
    v_max: float,
    n_v: int = 201,
    slope_jump: float = 1.0,
    tol: float = 5e-2,
) -> dict:
    """``min_v L_R(x, v) - <Du_bar(x), v> + c_est`` over smooth nodes.

    Nodes are kept when every axis second difference divided by ``h`` stays
    below ``slope_jump``, i.e. the central difference is not straddling a kink.
    """
    grid = u_bar.grid
    u = u_bar.values
    h = grid.h
    jump = np.zeros(grid.shape)
    for a in range(grid.dim):
        d2 = np.roll(u, -1, axis=a) - 2 * u + np.roll(u, 1, axis=a)
        jump = np.maximum(jump, np.abs(d2) / h)
    smooth = np.flatnonzero(jump.reshape(-1) <= slope_jump)
    if smooth.size == 0:
        return {"min": None, "passed": False, "nodes": 0, "note": "no smooth nodes"}
    du = central_gradient(u_bar)[smooth]
    x = grid.coords(smooth)
    count = n_v if grid.dim == 1 else max(11, int(np.sqrt(n_v)) | 1)
    vs = _velocity_samples(grid.dim, v_max, count)
    L, _ = le.evaluate(x[:, None, :], vs[None, :, :])
    val = L - du @ vs.T + c_est
    # the equality velocity is dH_R/dp at Du_bar
    v_eq = le.hr.grad_p(x, du)
    L_eq, _ = le.evaluate(x, v_eq)
    eq = L_eq - np.sum(du * v_eq, axis=-1) + c_est
    lo = float(val.min())
    k = int(np.argmin(val.min(axis=1)))
    return {
        "min": min(lo, float(eq.min())),
        "min_sampled": lo,
        "at_node": int(smooth[k]),
        "equality_max_abs": float(np.max(np.abs(eq))),
        "equality_median_abs": float(np.median(np.abs(eq))),
        "nodes": int(smooth.size),
        "velocities": int(len(vs)),
        "tol": tol,
        "passed": bool(min(lo, float(eq.min())) >= -tol),
    }


def write_trace_csv(trace: EvolutionTrace, path, every: int = 1) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "node_index", "value"])
        for s in range(0, trace.steps + 1, every):
            for i, val in enumerate(trace.snapshots[s].flat):
                w.writerow([s, i, repr(float(val))])
    meta = {
        "tau": trace.tau,
        "N": trace.grid.N,
        "dim": trace.grid.dim,
        "R": trace.hr.R,
        "mu_R": trace.hr.mu_R,
        "preset": trace.hr.base.preset,
        "potential": trace.hr.base.potential,
        "v_max": trace.v_max,
        "quadrature": trace.operator.quadrature,
        "every": every,
        "boundary_hits": int(sum(trace.boundary_hits)),
    }
    path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def write_orbit_csv(orbit: OrbitSample, path) -> None:
    dim = orbit.positions.shape[1]
    head = ["k"] + [f"x{d}" for d in range(dim)] + [f"v{d}" for d in range(dim)] + [f"p{d}" for d in range(dim)] + ["energy"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for k in range(len(orbit.velocities)):
            row = [k, *orbit.positions[k], *orbit.velocities[k], *orbit.momenta[k], orbit.energies[k]]
            w.writerow([row[0]] + [repr(float(r)) for r in row[1:]])
