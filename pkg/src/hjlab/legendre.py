"""Lagrangian of the modified Hamiltonian via the convex conjugate in ``p``.

``L_R(x, v) = sup_p <p, v> - H_R(x, p)``. The objective is smooth and strictly
concave, so a damped Newton ascent from a good starting point converges to
the unique maximizer ``p*`` with ``grad_p H_R(x, p*) = v``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConjugateFailure, InvalidArgument
from .hamiltonian import ModifiedHamiltonian, as_points, random_samples

_EPS = np.finfo(float).eps


def _solve_sym(hess, rhs):
    n = rhs.shape[-1]
    if n == 1:
        return rhs / hess[..., 0, :]
    if n == 2:
        a, b, d = hess[..., 0, 0], hess[..., 0, 1], hess[..., 1, 1]
        det = a * d - b * b
        return np.stack([d * rhs[..., 0] - b * rhs[..., 1], a * rhs[..., 1] - b * rhs[..., 0]], -1) / det[..., None]
    return np.linalg.solve(hess, rhs[..., None])[..., 0]


def tail_radius(speed, R: float, mu: float):
    """Radius ``r >= R`` solving ``8 mu r (r^2 - R^2)^3 = speed``.

    This is the radial stationarity condition of ``mu (|p|^2 - R^2)^4``, the
    form ``H_R`` takes for ``|p| > R + 2``.
    """
    s = np.asarray(speed, dtype=float)

    def g(r):
        return 8.0 * mu * r * (r * r - R * R) ** 3 - s

    lo = np.full_like(s, float(R))
    hi = np.full_like(s, R + 3.0)
    while np.any(g(hi) < 0):
        hi = np.where(g(hi) < 0, R + 2.0 * (hi - R), hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        neg = g(mid) < 0
        lo, hi = np.where(neg, mid, lo), np.where(neg, hi, mid)
        if np.all(hi - lo <= 4 * _EPS * hi):
            break
    return hi


@dataclass(frozen=True)
class LagrangianEvaluator:
    """Conjugate-search settings bound to one modified Hamiltonian."""

    hr: ModifiedHamiltonian
    bracket_radius: float | None = None
    tol: float = 1e-10
    max_iter: int = 100
    grid_points: int = 129
    momentum_tol: float = 1e-6

    @property
    def bracket(self) -> float:
        return self.bracket_radius if self.bracket_radius is not None else self.hr.R + 3.0

    def evaluate(self, x, v):
        """Vectorized ``(L_R(x, v), p*)`` for shaped ``x``, ``v`` of shape ``(..., dim)``."""
        x, v = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(v, dtype=float))
        shape, n = x.shape[:-1], x.shape[-1]
        xf, vf = x.reshape(-1, n), v.reshape(-1, n)
        L = np.empty(xf.shape[0])
        P = np.empty_like(xf)
        chunk = 8192
        for i in range(0, xf.shape[0], chunk):
            sl = slice(i, i + chunk)
            L[sl], P[sl] = self._solve(xf[sl], vf[sl])
        return L.reshape(shape), P.reshape(shape + (n,))

    def _initial_guess(self, x, v):
        hr = self.hr
        speed = np.linalg.norm(v, axis=-1)
        unit = np.zeros_like(v)
        unit[:, 0] = 1.0
        moving = speed > 0
        unit[moving] = v[moving] / speed[moving, None]

        r_tail = tail_radius(speed, hr.R, hr.mu_R)
        p0 = r_tail[:, None] * unit
        grid = ~(r_tail > hr.R + 2.0)
        if np.any(grid):
            s = np.linspace(-self.bracket, self.bracket, self.grid_points)
            cand = s[None, :, None] * unit[grid, None, :]
            obj = np.sum(cand * v[grid, None, :], axis=-1) - hr.value(x[grid, None, :], cand)
            p0[grid] = cand[np.arange(cand.shape[0]), np.argmax(obj, axis=1)]
        return p0

    def _solve(self, x, v):
        hr = self.hr
        p = self._initial_guess(x, v)
        scale = np.maximum(1.0, np.linalg.norm(v, axis=-1))
        done = np.zeros(x.shape[0], dtype=bool)
        for _ in range(self.max_iter):
            act = ~done
            if not np.any(act):
                break
            xa, va, pa = x[act], v[act], p[act]
            val, grad, hess = hr.derivatives(xa, pa)
            resid = va - grad
            conv = np.linalg.norm(resid, axis=-1) <= self.tol * scale[act]
            step = _solve_sym(hess, resid)
            f0 = np.sum(pa * va, axis=-1) - val
            lam = np.ones(pa.shape[0])
            accepted = conv.copy()
            new = pa.copy()
            for _ in range(60):
                trial = pa + lam[:, None] * step
                f1 = np.sum(trial * va, axis=-1) - hr.value(xa, trial)
                slack = 8 * _EPS * (np.abs(f0) + np.abs(np.sum(trial * va, axis=-1)) + 1.0)
                ok = ~accepted & (f1 >= f0 - slack)
                new[ok] = trial[ok]
                accepted |= ok
                if np.all(accepted):
                    break
                lam = np.where(accepted, lam, 0.5 * lam)
            tiny = np.linalg.norm(step, axis=-1) <= 4 * _EPS * (1.0 + np.linalg.norm(pa, axis=-1))
            idx = np.flatnonzero(act)
            p[idx] = new
            done[idx] = conv | tiny
        if not np.all(done):
            bad = np.flatnonzero(~done)[0]
            resid = v[bad] - hr.grad_p(x[bad], p[bad])
            raise ConjugateFailure(
                f"conjugate search did not converge at x={x[bad]}, v={v[bad]}",
                best={"p": p[bad].tolist(), "residual": resid.tolist()},
            )
        resid = np.linalg.norm(v - hr.grad_p(x, p), axis=-1)
        if np.any(resid > self.momentum_tol * scale):
            bad = int(np.argmax(resid / scale))
            raise ConjugateFailure(
                f"maximizer residual {resid[bad]:.3e} above tolerance at v={v[bad]}",
                best={"p": p[bad].tolist(), "residual": float(resid[bad])},
            )
        L = np.sum(p * v, axis=-1) - hr.value(x, p)
        return L, p


def legendre(le: LagrangianEvaluator, x, v):
    """Return ``(L_R(x, v), p*)``; scalars in, scalars out for ``dim == 1``."""
    n = le.hr.dim
    scalar = np.ndim(v) == 0 or (n > 1 and np.ndim(v) == 1)
    x = np.mod(as_points(x, n), 1.0)
    v = as_points(v, n)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise InvalidArgument("non-finite input")
    L, p = le.evaluate(x, v)
    if scalar:
        return float(L), (float(p.reshape(-1)[0]) if n == 1 else p.reshape(n))
    return L, p


def velocity_map(hr: ModifiedHamiltonian, x, p):
    """``grad_p H_R(x, p)``, the velocity paired with momentum ``p``."""
    n = hr.dim
    scalar = np.ndim(p) == 0 or (n > 1 and np.ndim(p) == 1)
    g = hr.grad_p(np.mod(as_points(x, n), 1.0), as_points(p, n))
    if scalar:
        return float(g.reshape(-1)[0]) if n == 1 else g.reshape(n)
    return g


def fenchel_gap(le: LagrangianEvaluator, x, v, p):
    """``L_R(x, v) + H_R(x, p) - <p, v>``; nonnegative, zero at conjugate pairs."""
    L, _ = le.evaluate(x, v)
    return L + le.hr.value(x, p) - np.sum(np.asarray(p) * np.asarray(v), axis=-1)


def biconjugate(le: LagrangianEvaluator, x, p, max_iter: int = 50, tol: float = 1e-11):
    """``sup_v <p, v> - L_R(x, v)`` by Newton directions with exact line search.

    Uses only values of the numerical ``L_R`` and its maximizing momenta
    (``dL/dv = p*``). The direction comes from ``d^2 H_R / dp^2`` at ``p*``;
    along it the slope ``<d, p - p*>`` is monotone, so the step length is
    found by bracketing and Illinois regula falsi.
    """
    hr = le.hr
    x, p = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(p, dtype=float))
    shape, n = p.shape[:-1], p.shape[-1]
    x, p = x.reshape(-1, n), p.reshape(-1, n)
    v = np.zeros_like(p)
    L, ps = le.evaluate(x, v)
    scale = np.maximum(1.0, np.linalg.norm(p, axis=-1))
    active = np.ones(len(p), dtype=bool)
    for _ in range(max_iter):
        active &= np.linalg.norm(p - ps, axis=-1) > tol * scale
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xa, pa, va = x[idx], p[idx], v[idx]
        d = np.einsum("...ij,...j->...i", hr.hess_p(xa, ps[idx]), pa - ps[idx])
        g0 = np.sum(d * (pa - ps[idx]), axis=-1)
        lo, glo = np.zeros(idx.size), g0
        hi, ghi = np.ones(idx.size), np.zeros(idx.size)

        def probe(lam, k):
            vt = va[k] + lam[k, None] * d[k]
            Lt, pt = le.evaluate(xa[k], vt)
            return Lt, pt, np.sum(d[k] * (pa[k] - pt), axis=-1)

        # bracket: grow the step until the slope turns negative
        open_ = np.ones(idx.size, dtype=bool)
        for _ in range(80):
            k = np.flatnonzero(open_)
            if k.size == 0:
                break
            Lt, pt, g = probe(hi, k)
            up = g > 0
            lo[k[up]], glo[k[up]] = hi[k[up]], g[up]
            ghi[k[~up]] = g[~up]
            open_[k[~up]] = False
            hi[k[up]] *= 2.0
        # Illinois regula falsi on the slope
        side = np.zeros(idx.size, dtype=int)
        for _ in range(100):
            width = hi - lo
            live = (width > 4 * _EPS * np.maximum(hi, 1.0)) & (glo > 0) & (ghi < 0)
            k = np.flatnonzero(live)
            if k.size == 0:
                break
            t = lo[k] + (hi[k] - lo[k]) * glo[k] / (glo[k] - ghi[k])
            _, _, g = probe(np.bincount(k, t, idx.size), k)
            pos = g > 0
            kp, kn = k[pos], k[~pos]
            lo[kp], glo[kp] = t[pos], g[pos]
            ghi[kp] *= np.where(side[kp] == 1, 0.5, 1.0)
            side[kp] = 1
            hi[kn], ghi[kn] = t[~pos], g[~pos]
            glo[kn] *= np.where(side[kn] == -1, 0.5, 1.0)
            side[kn] = -1
            done = np.abs(g) <= tol * scale[idx[k]] * np.maximum(1.0, np.linalg.norm(d[k], axis=-1))
            lo[k[done]] = hi[k[done]] = t[done]
        lam = 0.5 * (lo + hi)
        vt = va + lam[:, None] * d
        Lt, pt = le.evaluate(xa, vt)
        fa = np.sum(pa * va, axis=-1) - L[idx]
        stalled = np.sum(pa * vt, axis=-1) - Lt <= fa
        g_ok = idx[~stalled]
        v[g_ok], L[g_ok], ps[g_ok] = vt[~stalled], Lt[~stalled], pt[~stalled]
        active[idx[stalled]] = False
    f = np.sum(p * v, axis=-1) - L
    return f.reshape(shape), v.reshape(shape + (n,))


@dataclass
class BiconjugateReport:
    max_abs_error: float
    max_rel_error: float
    samples: int
    worst_x: list
    worst_p: list

    def to_dict(self):
        return asdict(self)


def biconjugate_check(le: LagrangianEvaluator, samples: int = 1000, seed: int = 0, r_max=None) -> BiconjugateReport:
    """Compare ``H_R`` with its numerical double conjugate on random ``(x, |p| <= R + 2)``."""
    hr = le.hr
    r_max = hr.R + 2.0 if r_max is None else r_max
    x, p = random_samples(hr.dim, samples, 0.0, r_max, seed)
    hstar, _ = biconjugate(le, x, p)
    h = hr.value(x, p)
    err = np.abs(hstar - h)
    rel = err / np.maximum(1.0, np.abs(h))
    k = int(np.argmax(err))
    return BiconjugateReport(float(err.max()), float(rel.max()), samples, x[k].tolist(), p[k].tolist())


def tabulate(le: LagrangianEvaluator, xs, vs) -> np.ndarray:
    """``L_R`` on the product of points ``xs`` (M, dim) and velocities ``vs`` (K, dim)."""
    n = le.hr.dim
    xs, vs = as_points(xs, n), as_points(vs, n)
    L, _ = le.evaluate(xs[:, None, :], vs[None, :, :])
    return L


def save_table(path, le: LagrangianEvaluator, xs, vs, table) -> None:
    """Write a tabulation as JSON ``(x, v, L)`` triples, row-major over x then v."""
    n = le.hr.dim
    xs, vs = as_points(xs, n), as_points(vs, n)
    rows = [[xs[i].tolist(), vs[j].tolist(), float(table[i, j])] for i in range(len(xs)) for j in range(len(vs))]
    key = {"preset": le.hr.base.preset, "potential": le.hr.base.potential, "dim": n, "R": le.hr.R, "mu_R": le.hr.mu_R}
    Path(path).write_text(json.dumps({"key": key, "shape": [len(xs), len(vs)], "triples": rows}))


def load_table(path):
    """Inverse of :func:`save_table`; returns ``(key, xs, vs, table)``."""
    data = json.loads(Path(path).read_text())
    m, k = data["shape"]
    trip = data["triples"]
    xs = np.array([trip[i * k][0] for i in range(m)])
    vs = np.array([trip[j][1] for j in range(k)])
    table = np.array([t[2] for t in trip]).reshape(m, k)
    return data["key"], xs, vs, table
