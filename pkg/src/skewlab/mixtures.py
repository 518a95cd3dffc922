"""
Finite mixtures of classical and SDB skew-normal / skew-t distributions.

Fitting is an ECM scheme: an E-step for responsibilities, a closed-form
weight update, then for each component a numerical ascent of its
responsibility-weighted log-density.  Each conditional step starts at the
current parameters and is accepted only if it does not lower the weighted
log-density, so the observed-data log-likelihood never decreases.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .distributions import (
    ClassicalParams,
    Params,
    SdbParams,
    canonical_family,
    delta_to_alpha,
    logpdf,
    param_count,
    params_to_dict,
)
from . import _kernels
from .exceptions import SkewlabError
from .special import QuadratureConfig, SpdMatrix, log_mvn_cdf, log_mvt_cdf, log_t_cdf

logger = logging.getLogger(__name__)

INIT_METHODS = ("kmeans", "random-posterior", "given-labels")
_PENALTY = 1e10
_B2 = 2.0 / math.pi
_LOG2 = math.log(2.0)
_LOG_2PI = math.log(2.0 * math.pi)


def _t_norm(nu: float, d: int) -> float:
    return (special.gammaln(0.5 * (nu + d)) - special.gammaln(0.5 * nu)
            - 0.5 * d * math.log(nu * math.pi))


@dataclass(frozen=True, eq=False)
class MixtureModel:
    family: str
    weights: np.ndarray
    components: Tuple[Params, ...]

    def __post_init__(self):
        family = canonical_family(self.family)
        w = np.array(self.weights, dtype=float).reshape(-1)
        comps = tuple(self.components)
        if len(comps) < 1 or len(comps) != w.size:
            raise SkewlabError("need one weight per component and at least one component")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise SkewlabError("weights must be positive and sum to one")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise SkewlabError("components differ in dimension")
        for c in comps:
            if c.family != family:
                raise SkewlabError(f"component of family {c.family} in a {family} mixture")
        w.setflags(write=False)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @property
    def g(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def weighted_logpdf(self, data, cfg: QuadratureConfig | None = None) -> np.ndarray:
        """``log w_g + log f_g(x_i)`` as an ``(n, g)`` array."""
        x = _as_data(data, self.dim)
        cols = [np.asarray(logpdf(x, c, cfg)).reshape(-1) for c in self.components]
        return np.log(self.weights) + np.column_stack(cols)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "g": self.g,
            "weights": self.weights.tolist(),
            "components": [params_to_dict(c) for c in self.components],
        }


@dataclass(frozen=True)
class FitConfig:
    g: int = 2
    max_iter: int = 500
    rel_tol: float = 1e-6
    seed: int = 0
    init: str = "kmeans"
    nu_floor: float = 1.01
    nu_ceiling: float = 200.0
    labels: Optional[Tuple[int, ...]] = None
    inner_maxiter: int = 100
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)

    def __post_init__(self):
        if self.g < 1:
            raise SkewlabError("g must be at least 1")
        if not self.rel_tol > 0:
            raise SkewlabError("rel_tol must be positive")
        if self.max_iter < 1:
            raise SkewlabError("max_iter must be at least 1")
        if self.init not in INIT_METHODS:
            raise SkewlabError(f"init must be one of {INIT_METHODS}")
        if self.init == "given-labels" and self.labels is None:
            raise SkewlabError("init='given-labels' needs labels")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))


@dataclass
class FitResult:
    model: MixtureModel
    loglik_trace: List[float]
    responsibilities: np.ndarray
    labels: np.ndarray
    iterations: int
    wall_time: float
    converged: bool
    failed: bool = False
    notes: List[str] = field(default_factory=list)

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]

    def to_dict(self) -> dict:
        out = self.model.to_dict()
        out.update(
            loglik=self.loglik,
            iterations=self.iterations,
            wall_time=self.wall_time,
            converged=self.converged,
            labels=self.labels.tolist(),
        )
        return out


def _as_data(data, d: Optional[int] = None) -> np.ndarray:
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1:
        raise SkewlabError("data must be an (n, d) array with n >= 1")
    if d is not None and x.shape[1] != d:
        raise SkewlabError(f"data has {x.shape[1]} columns, model has dimension {d}")
    if not np.all(np.isfinite(x)):
        raise SkewlabError("data contain non-finite values")
    return x


def mixture_loglik(data, m: MixtureModel, cfg: QuadratureConfig | None = None) -> float:
    """``sum_i log sum_g w_g f_g(x_i)`` with log-sum-exp stabilisation."""
    return float(np.sum(logsumexp(m.weighted_logpdf(data, cfg), axis=1)))


def _responsibilities(wl: np.ndarray) -> Tuple[np.ndarray, float]:
    norm = logsumexp(wl, axis=1)
    z = np.exp(wl - norm[:, None])
    z /= z.sum(axis=1, keepdims=True)
    return z, float(np.sum(norm))


def e_step(data, m: MixtureModel, cfg: QuadratureConfig | None = None) -> np.ndarray:
    """Posterior membership probabilities, computed in log space."""
    return _responsibilities(m.weighted_logpdf(data, cfg))[0]


def map_labels(r) -> np.ndarray:
    """Row-wise argmax of a responsibility matrix; ties go to the lowest index."""
    return np.argmax(np.asarray(r), axis=1)


# ---------------------------------------------------------------------------
# Parameter coding
# ---------------------------------------------------------------------------

class _Codec:
    """Unconstrained coordinates for one component of a given family.

    Layout: location, lower Cholesky factor of the scale (log diagonal),
    slant, and ``log(nu - nu_floor)`` for the skew-t families.
    """

    def __init__(self, family: str, d: int, nu_floor: float, nu_ceiling: float, eig_floor: float):
        self.family = family
        self.d = d
        self.classical = family.startswith("classical")
        self.has_nu = family.endswith("ST")
        self.nu_floor = nu_floor
        self.nu_ceiling = nu_ceiling
        self.eig_floor = eig_floor
        self.tril = np.tril_indices(d)
        self.diag_pos = np.array([i for i, (r, c) in enumerate(zip(*self.tril)) if r == c])

    def pack(self, p: Params) -> np.ndarray:
        scale = p.omega_mat if self.classical else p.delta_mat
        slant = p.alpha if self.classical else p.lam
        chol = scale.chol[self.tril].copy()
        chol[self.diag_pos] = np.log(chol[self.diag_pos])
        parts = [p.xi, chol, slant]
        if self.has_nu:
            parts.append([math.log(max(min(p.nu, self.nu_ceiling) - self.nu_floor, 1e-8))])
        return np.concatenate(parts)

    def bounds(self, theta: np.ndarray):
        # box on the log-diagonal keeps the scale off the eigenvalue floor; the
        # skew-t degrees of freedom stop at the ceiling
        out = [(None, None)] * theta.size
        lo = 0.5 * math.log(self.eig_floor) + 1.5
        for i in self.diag_pos:
            out[self.d + i] = (min(lo, theta[self.d + i]), 30.0)
        if self.has_nu:
            out[-1] = (None, max(math.log(self.nu_ceiling - self.nu_floor), theta[-1]))
        return out

    @property
    def has_gradient(self) -> bool:
        """Skew-normal components up to d = 3 get an analytic-CDF gradient."""
        return not self.has_nu and self.d <= 3

    def _decode(self, theta: np.ndarray):
        d = self.d
        k = d * (d + 1) // 2
        xi = theta[:d]
        vals = theta[d:d + k].copy()
        logdiag = vals[self.diag_pos]
        if np.any(logdiag > 30.0):
            raise SkewlabError("scale overflow")
        vals[self.diag_pos] = np.exp(logdiag)
        lower = np.zeros((d, d))
        lower[self.tril] = vals
        scale = lower @ lower.T
        if np.min(np.linalg.eigvalsh(scale)) < self.eig_floor:
            raise SkewlabError("scale below eigenvalue floor")
        slant = np.ascontiguousarray(theta[d + k:2 * d + k])
        nu = None
        if self.has_nu:
            nu = min(self.nu_floor + math.exp(min(theta[-1], 50.0)), self.nu_ceiling)
        return xi, lower, logdiag, scale, slant, nu

    def _parts(self, theta: np.ndarray, x: np.ndarray):
        # normal part, standardised skewing limits, skewing correlation
        xi, lower, _, scale, slant, _ = self._decode(theta)
        if self.classical:
            return _kernels.classical_sn_parts(x, xi, lower, slant / np.sqrt(np.diag(scale)))
        return _kernels.sdb_sn_parts(x, xi, scale, slant)

    def logpdf(self, theta: np.ndarray, x: np.ndarray, qcfg: QuadratureConfig) -> np.ndarray:
        """Log-density straight from coordinates, skipping parameter objects."""
        d = self.d
        if self.has_gradient:
            gauss, h, corr = self._parts(theta, np.ascontiguousarray(x, dtype=float))
            return gauss + _kernels.log_orthant(h, corr, qcfg.tol_for(h.shape[1]))
        xi, lower, logdiag, scale, slant, nu = self._decode(theta)
        z = x - xi
        if self.classical:
            u = solve_triangular(lower, z.T, lower=True)
            q = np.einsum("ij,ij->j", u, u)
            logdet = 2.0 * float(np.sum(logdiag))
            arg = z @ (slant / np.sqrt(np.diag(scale)))
            return (_LOG2 + _t_norm(nu, d) - 0.5 * logdet - 0.5 * (nu + d) * np.log1p(q / nu)
                    + log_t_cdf(arg * np.sqrt((nu + d) / (nu + q)), nu + d))
        sigma = scale + np.diag(slant * slant)
        lsig = np.linalg.cholesky(sigma)
        u = solve_triangular(lsig, z.T, lower=True)
        q = np.einsum("ij,ij->j", u, u)
        logdet = 2.0 * float(np.sum(np.log(np.diag(lsig))))
        upper = solve_triangular(lsig.T, u, lower=False).T * slant
        linv = solve_triangular(lsig, np.eye(d), lower=True)
        skew = np.eye(d) - slant[:, None] * (linv.T @ linv) * slant[None, :]
        skew = SpdMatrix(0.5 * (skew + skew.T))
        if nu is None:
            return (d * _LOG2 - 0.5 * (d * _LOG_2PI + logdet + q)
                    + log_mvn_cdf(upper, skew, qcfg))
        upper = upper * np.sqrt((nu + d) / (nu + q))[:, None]
        return (d * _LOG2 + _t_norm(nu, d) - 0.5 * logdet - 0.5 * (nu + d) * np.log1p(q / nu)
                + log_mvt_cdf(upper, skew, nu + d, qcfg))

    def value_and_grad(self, theta: np.ndarray, x: np.ndarray, w: np.ndarray,
                       qcfg: QuadratureConfig):
        """``sum_i w_i log f(x_i)`` and its gradient in ``theta`` (skew-normal only)."""
        if np.any(theta[self.d + self.diag_pos] > 30.0):
            raise SkewlabError("scale overflow")
        ok, value, grad = _kernels.sn_value_grad(
            self.classical, np.ascontiguousarray(theta, dtype=float), x,
            np.ascontiguousarray(w, dtype=float), self.eig_floor, qcfg.tol_for(self.d))
        if not ok:
            raise SkewlabError("scale below eigenvalue floor")
        return value, grad

    def unpack(self, theta: np.ndarray) -> Params:
        d = self.d
        k = d * (d + 1) // 2
        xi = theta[:d]
        vals = theta[d:d + k].copy()
        if np.any(vals[self.diag_pos] > 30.0):
            raise SkewlabError("scale overflow")
        vals[self.diag_pos] = np.exp(vals[self.diag_pos])
        lower = np.zeros((d, d))
        lower[self.tril] = vals
        scale = lower @ lower.T
        if np.min(np.linalg.eigvalsh(scale)) < self.eig_floor:
            raise SkewlabError("scale below eigenvalue floor")
        slant = theta[d + k:2 * d + k]
        nu = None
        if self.has_nu:
            nu = min(self.nu_floor + math.exp(min(theta[-1], 50.0)), self.nu_ceiling)
        cls = ClassicalParams if self.classical else SdbParams
        return cls(xi, scale, slant, nu)


# ---------------------------------------------------------------------------
# Initialisation
# ---------------------------------------------------------------------------

def _skew_to_delta(skew: np.ndarray) -> np.ndarray:
    # invert the univariate skew-normal skewness; |skew| is capped below its supremum
    s = np.clip(skew, -0.95, 0.95)
    c = (2.0 * np.abs(s) / (4.0 - math.pi)) ** (2.0 / 3.0)
    return np.sign(s) * np.sqrt(0.5 * math.pi * c / (1.0 + c))


def _weighted_stats(x: np.ndarray, z: np.ndarray):
    tot = z.sum()
    m = z @ x / tot
    c = x - m
    cov = (c * z[:, None]).T @ c / tot
    var = np.diag(cov)
    skew = (z @ c ** 3 / tot) / np.maximum(var, 1e-300) ** 1.5
    return m, cov, skew


def _initial_component(x, z, family: str, eig_floor: float, nu0: float = 20.0) -> Params:
    d = x.shape[1]
    m, cov, skew = _weighted_stats(x, z)
    cov = 0.5 * (cov + cov.T) + eig_floor * 10.0 * np.eye(d)
    delta = _skew_to_delta(skew)
    nu = nu0 if family.endswith("ST") else None
    for _ in range(60):
        sd = np.sqrt(np.diag(cov) / (1.0 - _B2 * delta ** 2))
        try:
            if family.startswith("classical"):
                wd = sd * delta
                omega = cov + _B2 * np.outer(wd, wd)
                w = np.sqrt(np.diag(omega))
                alpha = delta_to_alpha(wd / w, omega / np.outer(w, w))
                return ClassicalParams(m - math.sqrt(_B2) * wd, omega, alpha, nu)
            lam = sd * delta
            dmat = cov - (1.0 - _B2) * np.diag(lam * lam)
            if np.min(np.linalg.eigvalsh(dmat)) < eig_floor * 10.0:
                raise SkewlabError("Delta not positive definite")
            return SdbParams(m - math.sqrt(_B2) * lam, dmat, lam, nu)
        except SkewlabError:
            delta = 0.8 * delta
    raise SkewlabError("could not initialise component")


def _initial_responsibilities(x: np.ndarray, cfg: FitConfig, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    g = cfg.g
    if cfg.init == "given-labels":
        lab = np.asarray(cfg.labels)
        if lab.size != n:
            raise SkewlabError("given labels do not match the number of rows")
        _, codes = np.unique(lab, return_inverse=True)
        if codes.max() >= g:
            raise SkewlabError("more distinct labels than components")
        return np.eye(g)[codes]
    if cfg.init == "random-posterior":
        return rng.dirichlet(np.ones(g), size=n)
    if g == 1:
        return np.ones((n, 1))
    from sklearn.cluster import KMeans

    sd = x.std(axis=0)
    xs = (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    km = KMeans(n_clusters=g, n_init=10, algorithm="lloyd",
                random_state=int(rng.integers(2 ** 31 - 1)))
    lab = km.fit_predict(xs)
    # number clusters by first appearance so equal partitions give equal starts
    _, first = np.unique(lab, return_index=True)
    order = np.argsort(np.argsort(first))
    return np.eye(g)[order[lab]]


def initial_responsibilities(data, cfg: FitConfig) -> np.ndarray:
    """The starting responsibilities :func:`fit` would use for ``(data, cfg)``."""
    return _initial_responsibilities(_as_data(data), cfg, np.random.default_rng(cfg.seed))


def _reseed_weights(x: np.ndarray, g: int, rng: np.random.Generator) -> np.ndarray:
    n, d = x.shape
    centre = x[rng.integers(n)]
    k = min(n, max(2 * (d + 1), n // (2 * g)))
    near = np.argsort(np.sum((x - centre) ** 2, axis=1), kind="stable")[:k]
    z = np.full(n, 1e-6)
    z[near] = 1.0
    return z


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def _component_step(x, z, p: Params, codec: _Codec, cfg: FitConfig) -> Params:
    """One conditional maximisation of ``sum_i z_i log f(x_i; theta)``."""
    qcfg = cfg.quadrature
    total = z.sum()
    active = z > 1e-10 * z.max()
    xa, za = x[active], z[active] / total

    def negq(theta, xs, zs):
        try:
            vals = codec.logpdf(theta, xs, qcfg)
        except (SkewlabError, np.linalg.LinAlgError, ArithmeticError, ValueError):
            return _PENALTY
        v = -float(zs @ vals)
        return v if math.isfinite(v) else _PENALTY

    def negq_grad(theta, xs, zs):
        try:
            v, g = codec.value_and_grad(theta, xs, zs, qcfg)
        except (SkewlabError, np.linalg.LinAlgError, ArithmeticError, ValueError):
            return _PENALTY, np.zeros_like(theta)
        if not (math.isfinite(v) and np.all(np.isfinite(g))):
            return _PENALTY, np.zeros_like(theta)
        return -v, -g

    theta0 = codec.pack(p)
    bounds = codec.bounds(theta0)

    def run(step):
        # optimise u with theta = theta0 + step * u; a small step keeps the first
        # trial point local when the objective is badly conditioned
        box = [(None if lo is None else (lo - t) / step, None if hi is None else (hi - t) / step)
               for (lo, hi), t in zip(bounds, theta0)]
        u0 = np.zeros_like(theta0)
        if codec.has_gradient:
            xs = np.ascontiguousarray(xa)

            def fg(u):
                v, g = negq_grad(theta0 + step * u, xs, za)
                return v, step * g

            res = optimize.minimize(fg, u0, jac=True, method="L-BFGS-B", bounds=box,
                                    options={"maxiter": cfg.inner_maxiter})
        else:
            res = optimize.minimize(
                lambda u: negq(theta0 + step * u, xa, za), u0, method="L-BFGS-B", bounds=box,
                options={"maxiter": cfg.inner_maxiter, "eps": 1e-6 / step,
                         "maxfun": 40 * (theta0.size + 1)},
            )
        return theta0 + step * res.x, res

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        start = negq(theta0, xa, za)
        for step in (1.0, 1e-2, 1e-4):
            theta, res = run(step)
            if res.fun < start or "PROJECTED GRADIENT" in str(res.message):
                break
        zfull = z / total
        old = negq(theta0, x, zfull)
        new = negq(theta, x, zfull)
    if new <= old:
        return codec.unpack(theta)
    return p


def fit(data, family: str, cfg: FitConfig | None = None) -> FitResult:
    """Fit a ``cfg.g``-component mixture of ``family`` to ``data`` by ECM."""
    t0 = time.perf_counter()
    cfg = cfg or FitConfig()
    family = canonical_family(family)
    x = _as_data(data)
    n, d = x.shape
    g = cfg.g
    qcfg = cfg.quadrature
    rng = np.random.default_rng(cfg.seed)
    notes: List[str] = []
    if n <= g * (param_count(family, d) + 1):
        notes.append(f"small sample: n={n} for {g} components of {param_count(family, d)} parameters")
    eig_floor = 1e-8 * float(np.mean(np.var(x, axis=0))) if n > 1 else 1e-8
    codec = _Codec(family, d, cfg.nu_floor, cfg.nu_ceiling, eig_floor)

    z = _initial_responsibilities(x, cfg, rng)
    comps = []
    for k in range(g):
        zk = z[:, k]
        if zk.sum() < d + 1:
            notes.append(f"component {k} reseeded at start")
            zk = _reseed_weights(x, g, rng)
        comps.append(_initial_component(x, zk, family, eig_floor))
    weights = np.clip(z.mean(axis=0), 1e-12, None)
    weights /= weights.sum()
    model = MixtureModel(family, weights, comps)
    z, ll = _responsibilities(model.weighted_logpdf(x, qcfg))
    trace = [ll]
    reseeded = [False] * g
    converged = failed = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        mass = z.sum(axis=0)
        weights = mass / n
        comps = list(model.components)
        restart = False
        for k in range(g):
            if mass[k] < d + 1:
                if reseeded[k]:
                    failed = True
                    notes.append(f"component {k} degenerate after reseeding")
                    break
                reseeded[k] = restart = True
                notes.append(f"component {k} reseeded at iteration {it}")
                zk = _reseed_weights(x, g, rng)
                comps[k] = _initial_component(x, zk, family, eig_floor)
                weights[k] = max(zk.sum() / n, 1.0 / n)
            else:
                comps[k] = _component_step(x, z[:, k], comps[k], codec, cfg)
        if failed:
            break
        weights = np.clip(weights, 1e-300, None)
        weights = weights / weights.sum()
        model = MixtureModel(family, weights, comps)
        z, ll = _responsibilities(model.weighted_logpdf(x, qcfg))
        if restart:
            # the trace restarts: reseeding is not an ascent step
            trace = [ll]
            continue
        prev = trace[-1]
        trace.append(ll)
        if abs(ll - prev) / (1.0 + abs(ll)) < cfg.rel_tol:
            converged = True
            break
    return FitResult(
        model=model,
        loglik_trace=trace,
        responsibilities=z,
        labels=map_labels(z),
        iterations=it,
        wall_time=time.perf_counter() - t0,
        converged=converged and not failed,
        failed=failed,
        notes=notes,
    )
