"""Hamiltonian presets on the flat torus and their modified, superlinear version.

A base Hamiltonian ``H(x, p)`` is convex and coercive in ``p`` but need not be
superlinear. The modification

    H_R(x, p) = alpha_R(p) H(x, p) + mu_R * beta(|p|^2 - R^2)

keeps ``H`` untouched on ``|p| <= R``, switches it off beyond ``|p| = R + 2``
and replaces it there by a quartic penalty, which makes ``H_R`` superlinear
while preserving smoothness and strict convexity.

Arrays follow one convention throughout: points ``x`` and momenta ``p`` carry
the vector index on the last axis, shape ``(..., dim)``; scalar-valued results
have shape ``(...)``, gradients ``(..., dim)`` and Hessians ``(..., dim, dim)``.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConstructionFailure, InvalidArgument

TWO_PI = 2.0 * np.pi

PRESETS = ("mechanical", "coercive-nonsuperlinear")


def _v_cos(x):
    return np.cos(TWO_PI * x[..., 0])


def _v_zero(x):
    return np.zeros(x.shape[:-1])


def _v_cos2(x):
    return np.cos(TWO_PI * x[..., 0]) + 0.5 * np.cos(2.0 * TWO_PI * x[..., 1])


# name -> (V, smallest admissible dimension)
POTENTIALS = {
    "cos": (_v_cos, 1),
    "zero": (_v_zero, 1),
    "cos2": (_v_cos2, 2),
}


def as_points(a, dim: int) -> np.ndarray:
    """Coerce ``a`` to a float array of shape ``(..., dim)``.

    For ``dim == 1`` a scalar or an array whose last axis is not of length one
    is read as a batch of 1D vectors.
    """
    a = np.asarray(a, dtype=float)
    if dim == 1 and (a.ndim == 0 or a.shape[-1] != 1):
        a = a[..., None]
    if a.ndim == 0 or a.shape[-1] != dim:
        raise InvalidArgument(f"expected vectors of dimension {dim}, got shape {a.shape}")
    return a


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidArgument("non-finite input")


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


def _eye_like(p):
    n = p.shape[-1]
    return np.broadcast_to(np.eye(n), p.shape[:-1] + (n, n))


@dataclass(frozen=True)
class HamiltonianModel:
    """A base Hamiltonian ``kinetic(p) + V(x)`` on the torus ``T^dim``.

    ``mechanical`` uses ``|p|^2 / 2``; ``coercive-nonsuperlinear`` uses
    ``sqrt(1 + |p|^2) - 1``, which grows only linearly.
    """

    preset: str = "mechanical"
    potential: str = "zero"
    dim: int = 1

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise InvalidArgument(f"unknown preset {self.preset!r}; expected one of {PRESETS}")
        if self.potential not in POTENTIALS:
            raise InvalidArgument(f"unknown potential {self.potential!r}")
        if self.dim not in (1, 2):
            raise InvalidArgument("dim must be 1 or 2")
        if self.dim < POTENTIALS[self.potential][1]:
            raise InvalidArgument(f"potential {self.potential!r} needs dim >= 2")

    @property
    def name(self) -> str:
        return f"{self.preset}/{self.potential}/{self.dim}d"

    def potential_value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return POTENTIALS[self.potential][0](np.mod(x, 1.0))

    def derivatives(self, x, p):
        """Value, p-gradient and p-Hessian at already shaped ``(x, p)``."""
        v = self.potential_value(x)
        sq = np.sum(p * p, axis=-1)
        if self.preset == "mechanical":
            val = 0.5 * sq + v
            grad = np.array(p, dtype=float, copy=True)
            hess = np.array(_eye_like(p), copy=True)
        else:
            s = np.sqrt(1.0 + sq)
            val = s - 1.0 + v
            grad = p / s[..., None]
            hess = _eye_like(p) / s[..., None, None] - _outer(p, p) / (s**3)[..., None, None]
        shape = np.broadcast_shapes(np.shape(x)[:-1], p.shape[:-1])
        n = p.shape[-1]
        return (
            np.broadcast_to(val, shape),
            np.broadcast_to(grad, shape + (n,)),
            np.broadcast_to(hess, shape + (n, n)),
        )

    def value(self, x, p):
        return self.derivatives(x, p)[0]

    def grad_p(self, x, p):
        return self.derivatives(x, p)[1]

    def hess_p(self, x, p):
        return self.derivatives(x, p)[2]


def pendulum(dim: int = 1) -> HamiltonianModel:
    """Mechanical Hamiltonian with the cosine potential."""
    return HamiltonianModel("mechanical", "cos" if dim == 1 else "cos2", dim)


def _scalar_out(val, scalar):
    return float(val) if scalar else val


def eval_H(model: HamiltonianModel, x, p):
    """Evaluate ``H(x, p)``; ``x`` is reduced to the fundamental domain."""
    scalar = np.ndim(p) == 0 or (model.dim > 1 and np.ndim(p) == 1)
    x = as_points(x, model.dim)
    p = as_points(p, model.dim)
    _check_finite(x, p)
    return _scalar_out(model.value(np.mod(x, 1.0), p), scalar)


def beta(z):
    """Quartic penalty: 0 for ``z <= 0`` and ``z**4`` otherwise (a C^3 function)."""
    z = np.asarray(z, dtype=float)
    out = np.where(z > 0.0, z**4, 0.0)
    return float(out) if out.ndim == 0 else out


def beta_derivatives(z):
    """Return ``(beta, beta', beta'', beta''')`` at ``z``."""
    z = np.asarray(z, dtype=float)
    zp = np.where(z > 0.0, z, 0.0)
    return zp**4, 4.0 * zp**3, 12.0 * zp**2, 24.0 * zp


def alpha_radial(R: float, r):
    """Cutoff as a function of the radius ``r = |p|``.

    Equal to 1 up to ``R + 1`` and 0 from ``R + 2`` on, with the quintic
    smoothstep in between. Returns value, first and second radial derivatives.
    """
    t = np.clip(np.asarray(r, dtype=float) - (R + 1.0), 0.0, 1.0)
    val = 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t * t)
    d1 = -30.0 * t * t * (1.0 - t) ** 2
    d2 = -60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
    return val, d1, d2


def alpha_R(R: float, p):
    """Cutoff ``alpha_R`` at momentum vector ``p`` with its radial derivatives."""
    if R <= 1:
        raise InvalidArgument("R must exceed 1")
    p = np.asarray(p, dtype=float)
    r = np.abs(p) if p.ndim == 0 else np.linalg.norm(p, axis=-1)
    out = alpha_radial(R, r)
    if np.ndim(r) == 0:
        return tuple(float(o) for o in out)
    return out


def alpha_grad_hess(R: float, p):
    """Cartesian value, gradient and Hessian of the radial cutoff."""
    r = np.linalg.norm(p, axis=-1)
    a, a1, a2 = alpha_radial(R, r)
    # the transition starts at R + 1 > 0, so 1/r is only needed away from the origin
    active = a1 != 0.0
    inv_r = np.divide(1.0, r, out=np.zeros_like(r), where=r > 0)
    u = p * inv_r[..., None]
    grad = (a1 * active)[..., None] * u
    uu = _outer(u, u)
    hess = (a2 * (r > 0))[..., None, None] * uu + (a1 * inv_r * active)[..., None, None] * (
        _eye_like(p) - uu
    )
    return a, grad, hess


def _norm1(m):
    """Maximum absolute column sum of a batch of square matrices."""
    return np.max(np.sum(np.abs(m), axis=-2), axis=-1)


@dataclass(frozen=True)
class ModifiedHamiltonian:
    """``H_R = alpha_R H + mu_R beta(|p|^2 - R^2)`` built from a base model."""

    base: HamiltonianModel
    R: float
    mu_R: float
    gamma_R: float = 0.0
    alpha_bounds: tuple = (0.0, 0.0)
    attempts: int = 1

    @property
    def dim(self) -> int:
        return self.base.dim

    def derivatives(self, x, p):
        R, mu = self.R, self.mu_R
        h, hg, hh = self.base.derivatives(x, p)
        r2 = np.sum(p * p, axis=-1)
        r = np.sqrt(r2)
        a, ag, ah = alpha_grad_hess(R, p)
        b, b1, b2, _ = beta_derivatives(r2 - R * R)

        val = np.where(r <= R, h, np.where(r > R + 2.0, mu * b, a * h + mu * b))
        grad = a[..., None] * hg + h[..., None] * ag + (2.0 * mu * b1)[..., None] * p
        w = _outer(ag, hg) + _outer(hg, ag)
        pen = 2.0 * mu * (2.0 * b2[..., None, None] * _outer(p, p) + b1[..., None, None] * _eye_like(p))
        hess = a[..., None, None] * hh + h[..., None, None] * ah + w + pen
        inside = (r <= R)[..., None]
        grad = np.where(inside, hg, grad)
        hess = np.where(inside[..., None], hh, hess)
        return val, grad, hess

    def value(self, x, p):
        return self.derivatives(x, p)[0]

    def grad_p(self, x, p):
        return self.derivatives(x, p)[1]

    def hess_p(self, x, p):
        return self.derivatives(x, p)[2]

    def to_dict(self) -> dict:
        return {
            "preset": self.base.preset,
            "potential": self.base.potential,
            "dim": self.base.dim,
            "R": self.R,
            "mu_R": self.mu_R,
            "gamma_R": self.gamma_R,
            "max_alpha_prime": self.alpha_bounds[0],
            "max_alpha_second_norm1": self.alpha_bounds[1],
            "attempts": self.attempts,
        }


def eval_HR(hr: ModifiedHamiltonian, x, p):
    """Evaluate ``H_R(x, p)``."""
    scalar = np.ndim(p) == 0 or (hr.dim > 1 and np.ndim(p) == 1)
    x = as_points(x, hr.dim)
    p = as_points(p, hr.dim)
    _check_finite(x, p)
    return _scalar_out(hr.value(np.mod(x, 1.0), p), scalar)


@dataclass(frozen=True)
class Sampling:
    """Tensor-product sample: x-grid per dimension, radii and directions."""

    n_x: int = 64
    n_r: int = 64
    n_dir: int = 16

    @classmethod
    def for_dim(cls, dim: int) -> "Sampling":
        # 64**2 x-nodes times 1024 momenta is too slow for routine 2D checks
        return cls() if dim == 1 else cls(n_x=16)


def _directions(dim, n_dir):
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    theta = np.arange(n_dir) * (TWO_PI / n_dir)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def grid_samples(dim: int, sampling: Sampling, r_min: float, r_max: float):
    """All combinations of x-grid nodes and momenta ``r * direction``.

    Returns ``x`` of shape ``(n_x**dim, 1, dim)`` and ``p`` of shape
    ``(1, n_r * n_dir, dim)``, broadcastable against each other.
    """
    xs = np.arange(sampling.n_x) / sampling.n_x
    x = np.array(list(itertools.product(xs, repeat=dim)))
    radii = np.linspace(r_min, r_max, sampling.n_r)
    dirs = _directions(dim, sampling.n_dir)
    p = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, dim)
    return x[:, None, :], p[None, :, :]


def random_samples(dim: int, count: int, r_min: float, r_max: float, seed: int = 0):
    """``count`` random ``(x, p)`` pairs with ``r_min <= |p| <= r_max``."""
    rng = np.random.default_rng(seed)
    x = rng.random((count, dim))
    r = rng.uniform(r_min, r_max, count)
    if dim == 1:
        d = rng.choice([-1.0, 1.0], size=(count, 1))
    else:
        d = rng.normal(size=(count, dim))
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return x, r[:, None] * d


def _chunks(x, p, size=200_000):
    """Yield broadcast-compatible pieces of a tensor sample, split along x."""
    per_x = max(1, size // max(1, p.shape[-2]))
    for i in range(0, x.shape[0], per_x):
        yield x[i : i + per_x], p


def _min_eigenvalues(hess):
    if hess.shape[-1] == 1:
        return hess[..., 0, 0]
    if hess.shape[-1] == 2:
        a, b, d = hess[..., 0, 0], hess[..., 0, 1], hess[..., 1, 1]
        return 0.5 * (a + d) - np.hypot(0.5 * (a - d), b)
    return np.linalg.eigvalsh(hess)[..., 0]


def min_hessian_eigenvalue(hr: ModifiedHamiltonian, x, p):
    """Smallest p-Hessian eigenvalue over a sample and where it occurs."""
    worst, where = np.inf, None
    for xc, pc in _chunks(x, p):
        xb, pb = np.broadcast_arrays(xc, pc)
        eig = _min_eigenvalues(hr.hess_p(xb, pb))
        k = np.unravel_index(np.argmin(eig), eig.shape)
        if eig[k] < worst:
            worst, where = float(eig[k]), (xb[k].tolist(), pb[k].tolist())
    return worst, where


def build_modified(
    model: HamiltonianModel,
    R: float,
    sampling: Sampling | None = None,
    max_retries: int = 8,
) -> ModifiedHamiltonian:
    """Construct ``H_R`` with ``mu_R`` large enough for strict convexity.

    ``gamma_R`` is assembled from sampled maxima over the transition shell
    ``R + 1 <= |p| <= R + 2``, using the actual bound on the cutoff's second
    derivative; ``mu_R = max(gamma_R, 1) + 1``. The result is then checked on a
    sample reaching ``|p| = R + 4`` and ``mu_R`` doubled until every sampled
    Hessian is positive definite.
    """
    if not R > 1:
        raise InvalidArgument("R must exceed 1")
    n = model.dim
    sampling = sampling or Sampling.for_dim(n)

    x, p = grid_samples(n, sampling, R + 1.0, R + 2.0)
    max_h = max_w = max_a1 = max_a2 = 0.0
    for xc, pc in _chunks(x, p):
        xb, pb = np.broadcast_arrays(xc, pc)
        h, hg, _ = model.derivatives(xb, pb)
        _, ag, ah = alpha_grad_hess(R, pb)
        w = _outer(ag, hg) + _outer(hg, ag)
        max_h = max(max_h, float(np.max(np.abs(h))))
        max_w = max(max_w, float(np.max(_norm1(w))))
        max_a1 = max(max_a1, float(np.max(np.linalg.norm(ag, axis=-1))))
        max_a2 = max(max_a2, float(np.max(_norm1(ah))))
    gamma = max(2.0, max_a2) * max_h + (n - 1) * max_w
    mu = max(gamma, 1.0) + 1.0

    xv, pv = grid_samples(n, sampling, 0.0, R + 4.0)
    for attempt in range(1, max_retries + 2):
        hr = ModifiedHamiltonian(model, float(R), float(mu), float(gamma), (max_a1, max_a2), attempt)
        worst, where = min_hessian_eigenvalue(hr, xv, pv)
        if worst > 0.0:
            return hr
        mu *= 2.0
    raise ConstructionFailure(
        f"p-Hessian not positive definite after {max_retries} doublings of mu_R",
        worst_eigenvalue=worst,
        location=where,
    )


@dataclass
class ClaimsReport:
    """Sampled evidence that ``H_R`` is C^2, strictly convex and superlinear."""

    R: float
    mu_R: float
    gradient_deviation: float
    hessian_deviation: float
    min_eigenvalue: float
    min_eigenvalue_at: tuple | None
    superlinearity_margin: float
    max_identity_error: float
    samples: int
    tolerances: dict = field(default_factory=dict)

    @property
    def derivative_deviation(self) -> float:
        return max(self.gradient_deviation, self.hessian_deviation)

    @property
    def checks(self) -> dict:
        tol = self.tolerances
        return {
            "c2": self.derivative_deviation < tol["derivative"],
            "convexity": self.min_eigenvalue > 0.0,
            "superlinearity": self.superlinearity_margin >= 0.0,
            "identity": self.max_identity_error < tol["identity"],
        }

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["derivative_deviation"] = self.derivative_deviation
        d["checks"] = self.checks
        d["passed"] = self.passed
        return d


def _fd_deviation(hr, x, p):
    """Relative mismatch of Richardson-extrapolated central differences.

    Plain central differences are swamped by truncation error just past
    ``|p| = R`` where the penalty's third derivative is large.
    """
    n = hr.dim
    _, grad, hess = hr.derivatives(x, p)
    step = 1e-5 * np.maximum(1.0, np.linalg.norm(p, axis=-1))
    g_err = h_err = 0.0
    g_scale = np.maximum(1.0, np.max(np.abs(grad), axis=-1))
    h_scale = np.maximum(1.0, np.max(np.abs(hess), axis=(-2, -1)))

    def central(k, d):
        e = np.zeros(n)
        e[k] = 1.0
        dp = d[..., None] * e
        fp, gp, _ = hr.derivatives(x, p + dp)
        fm, gm, _ = hr.derivatives(x, p - dp)
        return (fp - fm) / (2.0 * d), (gp - gm) / (2.0 * d[..., None])

    for k in range(n):
        g1, h1 = central(k, step)
        g2, h2 = central(k, 0.5 * step)
        g_fd = (4.0 * g2 - g1) / 3.0
        h_fd = (4.0 * h2 - h1) / 3.0
        g_err = max(g_err, float(np.max(np.abs(g_fd - grad[..., k]) / g_scale)))
        h_err = max(h_err, float(np.max(np.max(np.abs(h_fd - hess[..., :, k]), axis=-1) / h_scale)))
    return g_err, h_err


def verify_claims(
    hr: ModifiedHamiltonian,
    sampling: Sampling | None = None,
    derivative_tol: float = 1e-5,
    identity_tol: float = 1e-12,
) -> ClaimsReport:
    """Check smoothness, convexity, superlinearity and ``H_R = H`` on ``|p| <= R``.

    Failures are recorded in the report; nothing is raised.
    """
    n, R = hr.dim, hr.R
    sampling = sampling or Sampling.for_dim(n)
    g_err = h_err = 0.0
    x, p = grid_samples(n, sampling, 0.0, R + 4.0)
    count = 0
    for xc, pc in _chunks(x, p, size=50_000):
        xb, pb = np.broadcast_arrays(xc, pc)
        g, h = _fd_deviation(hr, xb, pb)
        g_err, h_err = max(g_err, g), max(h_err, h)
        count += xb.shape[0] * xb.shape[1]
    worst, where = min_hessian_eigenvalue(hr, x, p)

    margin = np.inf
    x, p = grid_samples(n, sampling, R + 2.5, R + 6.0)
    for xc, pc in _chunks(x, p):
        xb, pb = np.broadcast_arrays(xc, pc)
        margin = min(margin, float(np.min(hr.value(xb, pb) - np.sum(pb * pb, axis=-1))))

    ident = 0.0
    x, p = grid_samples(n, sampling, 0.0, R)
    for xc, pc in _chunks(x, p):
        xb, pb = np.broadcast_arrays(xc, pc)
        ident = max(ident, float(np.max(np.abs(hr.value(xb, pb) - hr.base.value(xb, pb)))))

    return ClaimsReport(
        R=R,
        mu_R=hr.mu_R,
        gradient_deviation=g_err,
        hessian_deviation=h_err,
        min_eigenvalue=worst,
        min_eigenvalue_at=where,
        superlinearity_margin=margin,
        max_identity_error=ident,
        samples=count,
        tolerances={"derivative": derivative_tol, "identity": identity_tol},
    )


def coercivity_radius(model: HamiltonianModel, level: float, n_x: int = 64, n_dir: int = 16) -> float:
    """Radius beyond which ``H(x, p) > level`` at every sampled ``x``.

    Assumes ``H`` increases along rays from ``p = 0``, as the presets do.
    """
    sampling = Sampling(n_x=n_x, n_r=1, n_dir=n_dir)
    x, dirs = grid_samples(model.dim, sampling, 1.0, 1.0)

    def below(r):
        xb, pb = np.broadcast_arrays(x, r * dirs)
        return bool(np.min(model.value(xb, pb)) <= level)

    if not below(0.0):
        return 0.0
    hi = 1.0
    while below(hi):
        hi *= 2.0
        if hi > 1e12:
            raise InvalidArgument("Hamiltonian does not look coercive")
    lo = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if below(mid) else (lo, mid)
    return hi

