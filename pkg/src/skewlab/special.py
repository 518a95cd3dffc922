"""
Special functions and linear-algebra kernels.

Everything the distribution code needs lives here: a validated symmetric
positive definite matrix type with a cached Cholesky factor, normal and
Student-t densities, normal and Student-t distribution functions in up to
six dimensions, and the derivatives of ``log(2 * Phi(x))``.

Distribution functions are evaluated as follows.

* ``d = 1``: closed forms (``ndtr`` / incomplete beta).
* ``d = 2``: Genz's vectorised version of the Drezner-Wesolowsky method.
* ``d = 3``: Plackett's identity, which reduces the trivariate probability to
  a bivariate one plus a one-dimensional integral over a correlation path,
  done with Gauss-Legendre rules doubled until two successive rules agree.
* ``d >= 4``: randomised quasi-Monte Carlo over the Genz separation of
  variables transform, with Gibson-Glasbey-Elston variable ordering.

Correlation matrices with exact zero blocks are split, so a diagonal scale
gives an exact product of univariate probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import optimize, special, stats
from scipy.linalg import solve_triangular
from scipy.stats import qmc

from . import _kernels
from .exceptions import (
    DimensionError,
    NotPositiveDefiniteError,
    SkewlabError,
    UnsupportedDimensionError,
)

MAX_CDF_DIM = 6

_LOG_2PI = math.log(2.0 * math.pi)
_TWO_PI = 2.0 * math.pi
# Standardised limits beyond this are treated as infinite.
_CLIP = 40.0


class SpdMatrix:
    """Symmetric positive definite matrix with its lower Cholesky factor.

    The factorisation is attempted once at construction; a failure raises
    :class:`NotPositiveDefiniteError`.
    """

    __slots__ = ("entries", "chol", "dim", "_inv")

    def __init__(self, entries):
        a = np.array(entries, dtype=float, copy=True)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NotPositiveDefiniteError("matrix has non-finite entries")
        scale = max(1.0, float(np.max(np.abs(a))))
        if np.max(np.abs(a - a.T)) > 1e-12 * scale:
            raise NotPositiveDefiniteError("matrix is not symmetric")
        a = 0.5 * (a + a.T)
        try:
            chol = np.linalg.cholesky(a)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("matrix is not positive definite") from exc
        if not np.all(np.diag(chol) > 0.0):
            raise NotPositiveDefiniteError("matrix is not positive definite")
        a.setflags(write=False)
        chol.setflags(write=False)
        self.entries = a
        self.chol = chol
        self.dim = a.shape[0]
        self._inv = None

    @classmethod
    def coerce(cls, value) -> "SpdMatrix":
        return value if isinstance(value, cls) else cls(value)

    def __repr__(self):
        return f"SpdMatrix({self.entries.tolist()!r})"

    def __eq__(self, other):
        return isinstance(other, SpdMatrix) and np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash(self.entries.tobytes())

    @property
    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    @property
    def inverse(self) -> np.ndarray:
        if self._inv is None:
            linv = solve_triangular(self.chol, np.eye(self.dim), lower=True)
            inv = linv.T @ linv
            inv = 0.5 * (inv + inv.T)
            inv.setflags(write=False)
            self._inv = inv
        return self._inv

    def whiten(self, z: np.ndarray) -> np.ndarray:
        """Solve ``L u = z`` for rows of ``z`` (shape ``(n, d)`` or ``(d,)``)."""
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            return solve_triangular(self.chol, z, lower=True)
        return solve_triangular(self.chol, z.T, lower=True).T

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        u = solve_triangular(self.chol, b, lower=True)
        return solve_triangular(self.chol.T, u, lower=False)


@dataclass(frozen=True)
class QuadratureConfig:
    """Accuracy and reproducibility controls for multivariate CDFs.

    ``abs_tol=None`` selects 1e-8 for ``d <= 3`` and 1e-6 otherwise.
    """

    abs_tol: Optional[float] = None
    max_points: int = 200_000
    rng_seed: int = 20140521

    def __post_init__(self):
        if self.abs_tol is not None and not self.abs_tol > 0:
            raise SkewlabError("abs_tol must be positive")
        if self.max_points < 1000:
            raise SkewlabError("max_points must be at least 1000")

    def tol_for(self, d: int) -> float:
        if self.abs_tol is not None:
            return self.abs_tol
        return 1e-8 if d <= 3 else 1e-6


DEFAULT_QUADRATURE = QuadratureConfig()


def _points(x, d: int):
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    x2 = np.atleast_2d(x) if x.ndim <= 1 else x
    if x.ndim == 0 and d == 1:
        x2 = x.reshape(1, 1)
    if x2.ndim != 2 or x2.shape[1] != d:
        raise DimensionError(f"points of shape {x.shape} do not match dimension {d}")
    return x2, single


def _finish(values: np.ndarray, single: bool):
    return float(values[0]) if single else values


def _check_nu(nu) -> float:
    nu = float(nu)
    if not nu > 0 or math.isnan(nu):
        raise SkewlabError(f"degrees of freedom must be positive, got {nu}")
    return nu


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------

def mahalanobis(x, center, sigma) -> float | np.ndarray:
    """Squared Mahalanobis distance ``(x - c)' sigma^-1 (x - c)``."""
    sigma = SpdMatrix.coerce(sigma)
    center = np.asarray(center, dtype=float).reshape(-1)
    if center.shape[0] != sigma.dim:
        raise DimensionError("center and sigma dimensions differ")
    x2, single = _points(x, sigma.dim)
    u = sigma.whiten(x2 - center)
    return _finish(np.einsum("ij,ij->i", u, u), single)


def mvn_logpdf(x, sigma) -> float | np.ndarray:
    sigma = SpdMatrix.coerce(sigma)
    d = sigma.dim
    x2, single = _points(x, d)
    u = sigma.whiten(x2)
    q = np.einsum("ij,ij->i", u, u)
    return _finish(-0.5 * (d * _LOG_2PI + sigma.logdet + q), single)


def mvn_pdf(x, sigma) -> float | np.ndarray:
    """Density of ``N_d(0, sigma)`` at ``x``."""
    out = mvn_logpdf(x, sigma)
    return math.exp(out) if isinstance(out, float) else np.exp(out)


def mvt_logpdf(x, sigma, nu) -> float | np.ndarray:
    sigma = SpdMatrix.coerce(sigma)
    nu = _check_nu(nu)
    d = sigma.dim
    x2, single = _points(x, d)
    u = sigma.whiten(x2)
    q = np.einsum("ij,ij->i", u, u)
    const = (
        special.gammaln(0.5 * (nu + d))
        - special.gammaln(0.5 * nu)
        - 0.5 * d * math.log(nu * math.pi)
        - 0.5 * sigma.logdet
    )
    return _finish(const - 0.5 * (nu + d) * np.log1p(q / nu), single)


def mvt_pdf(x, sigma, nu) -> float | np.ndarray:
    """Density of the centred ``d``-variate Student t with scale ``sigma``."""
    out = mvt_logpdf(x, sigma, nu)
    return math.exp(out) if isinstance(out, float) else np.exp(out)


def bvn_pdf(a, b, rho):
    """Standard bivariate normal density with correlation ``rho``."""
    one_m = 1.0 - rho * rho
    return np.exp(-(a * a - 2.0 * rho * a * b + b * b) / (2.0 * one_m)) / (
        _TWO_PI * np.sqrt(one_m)
    )


# ---------------------------------------------------------------------------
# Bivariate normal CDF (compiled kernel)
# ---------------------------------------------------------------------------

def bvn_cdf(h, k, r: float) -> np.ndarray:
    """``P(X <= h, Y <= k)`` for standard bivariate normals with correlation r."""
    h, k = np.broadcast_arrays(np.asarray(h, dtype=float), np.asarray(k, dtype=float))
    shape = h.shape
    out = _kernels.bvn_many(np.ascontiguousarray(h).reshape(-1),
                            np.ascontiguousarray(k).reshape(-1), float(r))
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# Quasi-Monte Carlo for d >= 4
# ---------------------------------------------------------------------------

def _gge_order(b: np.ndarray, r: np.ndarray):
    """Gibson-Glasbey-Elston ordering with the matching Cholesky factor."""
    d = b.size
    b = b.copy()
    c = r.copy()
    perm = np.arange(d)
    lower = np.zeros((d, d))
    y = np.zeros(d)
    for i in range(d):
        best, best_j = math.inf, i
        for j in range(i, d):
            var = c[j, j] - np.dot(lower[j, :i], lower[j, :i])
            sd = math.sqrt(max(var, 1e-300))
            p = special.ndtr((b[j] - np.dot(lower[j, :i], y[:i])) / sd)
            if p < best:
                best, best_j = p, j
        if best_j != i:
            for arr in (b, perm):
                arr[[i, best_j]] = arr[[best_j, i]]
            c[[i, best_j], :] = c[[best_j, i], :]
            c[:, [i, best_j]] = c[:, [best_j, i]]
            lower[[i, best_j], :] = lower[[best_j, i], :]
        lii = math.sqrt(max(c[i, i] - np.dot(lower[i, :i], lower[i, :i]), 1e-300))
        lower[i, i] = lii
        for j in range(i + 1, d):
            lower[j, i] = (c[j, i] - np.dot(lower[j, :i], lower[i, :i])) / lii
        u = (b[i] - np.dot(lower[i, :i], y[:i])) / lii
        pu = max(special.ndtr(u), 1e-300)
        y[i] = -math.exp(-0.5 * u * u) / math.sqrt(_TWO_PI) / pu
    return b, lower


def _sov_values(w: np.ndarray, b: np.ndarray, lower: np.ndarray, nu):
    d = b.size
    npts = w.shape[0]
    if nu is None:
        scale = np.ones(npts)
        w = w
    else:
        scale = np.sqrt(special.chdtri(nu, 1.0 - w[:, 0]) / nu)
        w = w[:, 1:]
    f = np.ones(npts)
    y = np.zeros((npts, d))
    for i in range(d):
        lim = (b[i] * scale - y[:, :i] @ lower[i, :i]) / lower[i, i]
        e = special.ndtr(np.clip(lim, -_CLIP, _CLIP))
        f *= e
        if i < d - 1:
            y[:, i] = special.ndtri(np.clip(w[:, i] * e, 1e-300, 1.0 - 1e-16))
    return f


def _qmc_orthant(b: np.ndarray, r: np.ndarray, cfg: QuadratureConfig, nu=None):
    d = b.size
    tol = cfg.tol_for(d)
    bo, lower = _gge_order(b, r)
    ndim = d - 1 + (0 if nu is None else 1)
    n_rand = 10
    npts = 256
    used = 0
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(n_rand)
    while True:
        est = np.empty(n_rand)
        for k, ss in enumerate(seeds):
            w = qmc.Sobol(ndim, scramble=True, seed=np.random.default_rng(ss)).random(npts)
            est[k] = np.mean(_sov_values(w, bo, lower, nu))
        used += n_rand * npts
        value = float(np.mean(est))
        error = 3.0 * float(np.std(est, ddof=1)) / math.sqrt(n_rand)
        if error <= tol or used * 2 > cfg.max_points:
            return min(max(value, 0.0), 1.0), error
        npts *= 2


# ---------------------------------------------------------------------------
# Multivariate normal CDF
# ---------------------------------------------------------------------------

def _blocks(r: np.ndarray):
    """Connected components of the nonzero pattern of a correlation matrix."""
    d = r.shape[0]
    seen = np.zeros(d, dtype=bool)
    comps = []
    for s in range(d):
        if seen[s]:
            continue
        stack, comp = [s], []
        seen[s] = True
        while stack:
            v = stack.pop()
            comp.append(v)
            for u in np.nonzero(r[v] != 0.0)[0]:
                if not seen[u]:
                    seen[u] = True
                    stack.append(u)
        comps.append(sorted(comp))
    return comps


def _standardize(upper, sigma: SpdMatrix):
    d = sigma.dim
    if d > MAX_CDF_DIM:
        raise UnsupportedDimensionError(
            f"distribution functions support d <= {MAX_CDF_DIM}, got {d}"
        )
    u2, single = _points(upper, d)
    if np.any(np.isnan(u2)):
        raise SkewlabError("upper limits contain NaN")
    s = np.sqrt(np.diag(sigma.entries))
    r = sigma.entries / np.outer(s, s)
    np.fill_diagonal(r, 1.0)
    return np.clip(u2 / s, -_CLIP, _CLIP), r, single


def _orthant_block_log(h: np.ndarray, r: np.ndarray, cfg: QuadratureConfig) -> np.ndarray:
    d = r.shape[0]
    if d == 1:
        return special.log_ndtr(h[:, 0])
    if d <= 3:
        # relative accuracy deep in the lower tail
        hc = np.ascontiguousarray(np.clip(h, -_CLIP, _CLIP))
        return _kernels.log_orthant(hc, np.ascontiguousarray(r), cfg.tol_for(d))
    p = np.array([_qmc_orthant(row, r, cfg)[0] for row in h])
    with np.errstate(divide="ignore"):
        return np.log(p)


def log_mvn_cdf(upper, sigma, cfg: QuadratureConfig | None = None):
    """Logarithm of :func:`mvn_cdf`, with relative accuracy in the lower tail for ``d <= 3``."""
    sigma = SpdMatrix.coerce(sigma)
    cfg = cfg or DEFAULT_QUADRATURE
    h, r, single = _standardize(upper, sigma)
    total = np.zeros(h.shape[0])
    for comp in _blocks(r):
        total += _orthant_block_log(h[:, comp], r[np.ix_(comp, comp)], cfg)
    return _finish(total, single)


def mvn_cdf(upper, sigma, cfg: QuadratureConfig | None = None):
    """``P(X <= upper)`` componentwise for ``X ~ N_d(0, sigma)``, ``d <= 6``.

    ``upper`` may hold one point or a stack of points (one per row).
    """
    out = log_mvn_cdf(upper, sigma, cfg)
    return math.exp(out) if isinstance(out, float) else np.exp(out)


# ---------------------------------------------------------------------------
# Student t distribution functions
# ---------------------------------------------------------------------------

def t_cdf(x, nu):
    """Univariate Student t distribution function (regularised incomplete beta)."""
    nu = _check_nu(nu)
    out = special.stdtr(nu, np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def log_t_cdf(x, nu):
    nu = _check_nu(nu)
    x = np.asarray(x, dtype=float)
    # symmetric tail through the complementary incomplete beta keeps precision
    with np.errstate(divide="ignore"):
        lower = np.log(0.5 * special.betainc(0.5 * nu, 0.5, nu / (nu + x * x)))
        out = np.where(x < 0, lower, np.log1p(-np.exp(lower)))
    return float(out) if out.ndim == 0 else out


def _chi_tail_bound(nu: float) -> float:
    g = lambda tau: 0.5 * nu * (math.exp(2.0 * tau) - 1.0) - nu * tau - 45.0
    return optimize.brentq(g, 1e-12, 20.0)


@lru_cache(maxsize=256)
def _log_chi_rule(nu: float, m: int):
    """Trapezoid rule in ``tau = log(s)``, ``s = sqrt(W / nu)``, ``W ~ chi2_nu``.

    The integrand is smooth and decays at both ends, so the trapezoid rule
    converges geometrically.  Weights are renormalised to sum to one.
    """
    lo = -max(45.0 / nu, 9.0 / math.sqrt(2.0 * nu))
    hi = _chi_tail_bound(nu)
    tau = np.linspace(lo, hi, m)
    logp = nu * tau - 0.5 * nu * np.exp(2.0 * tau)
    w = np.exp(logp - logp.max())
    w[0] *= 0.5
    w[-1] *= 0.5
    w /= w.sum()
    return np.exp(tau), w


def _mvt_scale_mixture(h: np.ndarray, r: np.ndarray, nu: float, cfg: QuadratureConfig):
    """Average ``Phi_d(s h; r)`` over ``s = sqrt(chi2_nu / nu)``."""
    n, d = h.shape
    corr = SpdMatrix(r)
    tol = cfg.tol_for(d)
    out = np.empty(n)
    idx = np.arange(n)
    m = 48
    prev = None
    while idx.size:
        s, w = _log_chi_rule(nu, m)
        pts = (h[idx, None, :] * s[None, :, None]).reshape(-1, d)
        vals = np.exp(log_mvn_cdf(pts, corr, cfg)).reshape(idx.size, s.size)
        cur = vals @ w
        if prev is not None:
            diff = np.abs(cur - prev)
            done = (diff <= tol * np.minimum(1.0, np.abs(cur))) | (diff <= 1e-15) | (m >= 3072)
            out[idx[done]] = cur[done]
            idx = idx[~done]
            cur = cur[~done]
        prev = cur
        m *= 2
    return np.clip(out, 0.0, 1.0)


def log_mvt_cdf(upper, sigma, nu, cfg: QuadratureConfig | None = None):
    sigma = SpdMatrix.coerce(sigma)
    nu = _check_nu(nu)
    cfg = cfg or DEFAULT_QUADRATURE
    h, r, single = _standardize(upper, sigma)
    d = sigma.dim
    if d == 1:
        out = np.asarray(log_t_cdf(h[:, 0], nu)).reshape(-1)
    elif d <= 3:
        with np.errstate(divide="ignore"):
            out = np.log(_mvt_scale_mixture(h, r, nu, cfg))
    else:
        with np.errstate(divide="ignore"):
            out = np.log([_qmc_orthant(row, r, cfg, nu=nu)[0] for row in h])
    return _finish(np.asarray(out, dtype=float), single)


def mvt_cdf(upper, sigma, nu, cfg: QuadratureConfig | None = None):
    """``P(T <= upper)`` for a centred ``d``-variate t with scale ``sigma``.

    Uses the normal scale-mixture representation of the t distribution;
    ``d <= 6``.
    """
    out = log_mvt_cdf(upper, sigma, nu, cfg)
    return math.exp(out) if isinstance(out, float) else np.exp(out)


# ---------------------------------------------------------------------------
# zeta_r(x): derivatives of log(2 Phi(x))
# ---------------------------------------------------------------------------

_ZETA_SWITCH = -8.0
_CF_DEPTH = 80


def _jet_reciprocal(d: np.ndarray) -> np.ndarray:
    # Taylor coefficients of 1/D from those of D (rows = orders)
    b = np.empty_like(d)
    b[0] = 1.0 / d[0]
    for k in range(1, d.shape[0]):
        b[k] = -b[0] * sum(d[j] * b[k - j] for j in range(1, k + 1))
    return b


def _zeta_tail(r: int, x: np.ndarray) -> np.ndarray:
    """Laplace's continued fraction for the Mills ratio, carried as a Taylor jet.

    With ``t = -x``, ``phi(t) / Phi(-t) = t + c(t)`` where
    ``c = 1 / (t + 2 / (t + 3 / (t + ...)))``.  Evaluating ``c`` bottom-up in
    truncated power-series arithmetic gives its derivatives without the
    cancellation that spoils the recursion far in the tail.
    """
    if r == 0:
        return math.log(2.0) + special.log_ndtr(x)
    t = -x
    base = np.zeros((4, t.size))
    base[0] = t
    base[1] = 1.0
    y = np.zeros_like(base)
    for k in range(_CF_DEPTH, 1, -1):
        y = k * _jet_reciprocal(base + y)
    c = _jet_reciprocal(base + y)
    # zeta_1 = t + c; each x-derivative is minus a t-derivative
    if r == 1:
        return t + c[0]
    if r == 2:
        return -(1.0 + c[1])
    if r == 3:
        return 2.0 * c[2]
    return -6.0 * c[3]


def _zeta_direct(r: int, x: np.ndarray) -> np.ndarray:
    z0 = math.log(2.0) + special.log_ndtr(x)
    if r == 0:
        return z0
    z1 = np.exp(-0.5 * x * x - 0.5 * _LOG_2PI - special.log_ndtr(x))
    if r == 1:
        return z1
    z2 = -z1 * (x + z1)
    if r == 2:
        return z2
    z3 = -z2 * (x + z1) - z1 * (1.0 + z2)
    if r == 3:
        return z3
    return -z3 * (x + 2.0 * z1) - 2.0 * z2 * (1.0 + z2)


def zeta(r: int, x):
    """``r``-th derivative of ``log(2 Phi(x))`` for ``r`` in 0..4.

    Below ``x = -8`` a continued-fraction expansion of the inverse Mills
    ratio replaces the recursion, which cancels badly there.
    """
    if r not in (0, 1, 2, 3, 4):
        raise SkewlabError(f"zeta order must be in 0..4, got {r}")
    xa = np.asarray(x, dtype=float)
    flat = np.atleast_1d(xa)
    out = np.empty_like(flat)
    tail = flat < _ZETA_SWITCH
    out[~tail] = _zeta_direct(r, flat[~tail])
    if np.any(tail):
        out[tail] = _zeta_tail(r, flat[tail])
    return float(out[0]) if xa.ndim == 0 else out.reshape(xa.shape)
