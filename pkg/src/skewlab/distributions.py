"""
Classical and SDB skew-normal / skew-t families.

Parameter sets are immutable and validated eagerly.  Every density function
accepts a single point (shape ``(d,)``) or a stack of points (shape
``(n, d)``) and returns a float or an array accordingly.

Family tags::

    classical-SN   2 phi_d(x - xi; Omega) Phi(alpha' omega^-1 (x - xi))
    SDB-SN         2^d phi_d(x - xi; Delta + L^2) Phi_d(L (Delta + L^2)^-1 (x - xi); I - L (Delta + L^2)^-1 L)
    classical-ST   t analogue with a univariate t skewing factor on nu + d dof
    SDB-ST         t analogue with a d-variate t skewing factor on nu + d dof

where ``L = diag(lambda)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import special

from .exceptions import (
    DimensionError,
    InfeasibleParameterError,
    SkewlabError,
    UnsupportedDimensionError,
)
from .special import (
    DEFAULT_QUADRATURE,
    MAX_CDF_DIM,
    QuadratureConfig,
    SpdMatrix,
    _points,
    log_mvn_cdf,
    log_mvt_cdf,
    log_t_cdf,
    mvn_logpdf,
    mvt_logpdf,
)

FAMILIES = ("classical-SN", "SDB-SN", "classical-ST", "SDB-ST")
SHORT_NAMES = {
    "csn": "classical-SN",
    "ssn": "SDB-SN",
    "cst": "classical-ST",
    "sst": "SDB-ST",
}
_LOG2 = math.log(2.0)


def canonical_family(name: str) -> str:
    """Map a short code (``csn``) or tag (``classical-SN``) to the tag."""
    if name in FAMILIES:
        return name
    try:
        return SHORT_NAMES[name.lower()]
    except KeyError:
        raise SkewlabError(f"unknown family {name!r}") from None


def _vector(v, name: str, d: Optional[int] = None) -> np.ndarray:
    a = np.array(v, dtype=float, copy=True).reshape(-1)
    if d is not None and a.size != d:
        raise DimensionError(f"{name} has length {a.size}, expected {d}")
    if not np.all(np.isfinite(a)):
        raise InfeasibleParameterError(f"{name} has non-finite entries")
    a.setflags(write=False)
    return a


def _check_nu(nu):
    if nu is None:
        return None
    nu = float(nu)
    if not nu > 0 or not math.isfinite(nu):
        raise InfeasibleParameterError(f"degrees of freedom must be positive, got {nu}")
    return nu


@dataclass(frozen=True)
class DeltaVector:
    """Slant in delta coordinates; every entry strictly inside (-1, 1)."""

    entries: np.ndarray

    def __post_init__(self):
        e = _vector(self.entries, "delta")
        if np.any(np.abs(e) >= 1.0):
            raise InfeasibleParameterError("delta entries must lie in (-1, 1)")
        object.__setattr__(self, "entries", e)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def check_with(self, omega_bar) -> None:
        """Raise unless ``[[omega_bar, delta], [delta', 1]]`` is positive definite."""
        ob = np.asarray(omega_bar, dtype=float)
        d = self.entries.size
        if ob.shape != (d, d):
            raise DimensionError("delta and omega_bar dimensions differ")
        star = np.empty((d + 1, d + 1))
        star[:d, :d] = ob
        star[:d, d] = star[d, :d] = self.entries
        star[d, d] = 1.0
        try:
            SpdMatrix(star)
        except SkewlabError as exc:
            raise InfeasibleParameterError(
                "delta is infeasible for this correlation matrix"
            ) from exc


@dataclass(frozen=True, eq=False)
class ClassicalParams:
    """Classical family parameters ``(xi, Omega, alpha[, nu])``."""

    xi: np.ndarray
    omega_mat: SpdMatrix
    alpha: np.ndarray
    nu: Optional[float] = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        xi = _vector(self.xi, "xi")
        omega = SpdMatrix.coerce(self.omega_mat)
        if omega.dim != xi.size:
            raise DimensionError("xi and Omega dimensions differ")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "omega_mat", omega)
        object.__setattr__(self, "alpha", _vector(self.alpha, "alpha", xi.size))
        object.__setattr__(self, "nu", _check_nu(self.nu))

    @classmethod
    def from_delta(cls, xi, omega_mat, delta, nu=None) -> "ClassicalParams":
        omega = SpdMatrix.coerce(omega_mat)
        w = np.sqrt(np.diag(omega.entries))
        alpha = delta_to_alpha(delta, omega.entries / np.outer(w, w))
        return cls(xi, omega, alpha, nu)

    @property
    def dim(self) -> int:
        return self.xi.size

    @property
    def family(self) -> str:
        return "classical-SN" if self.nu is None else "classical-ST"

    @property
    def omega(self) -> np.ndarray:
        """Scale vector ``sqrt(diag(Omega))``."""
        return np.sqrt(np.diag(self.omega_mat.entries))

    @property
    def omega_bar(self) -> np.ndarray:
        w = self.omega
        ob = self.omega_mat.entries / np.outer(w, w)
        np.fill_diagonal(ob, 1.0)
        return ob

    @property
    def delta(self) -> np.ndarray:
        if "delta" not in self._cache:
            self._cache["delta"] = alpha_to_delta(self.alpha, self.omega_bar)
        return self._cache["delta"]

    def __repr__(self):
        nu = "" if self.nu is None else f", nu={self.nu!r}"
        return (f"ClassicalParams(xi={self.xi.tolist()}, "
                f"omega_mat={self.omega_mat.entries.tolist()}, alpha={self.alpha.tolist()}{nu})")


@dataclass(frozen=True, eq=False)
class SdbParams:
    """SDB family parameters ``(xi, Delta, lambda[, nu])``."""

    xi: np.ndarray
    delta_mat: SpdMatrix
    lam: np.ndarray
    nu: Optional[float] = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        xi = _vector(self.xi, "xi")
        delta = SpdMatrix.coerce(self.delta_mat)
        if delta.dim != xi.size:
            raise DimensionError("xi and Delta dimensions differ")
        lam = _vector(self.lam, "lambda", xi.size)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "delta_mat", delta)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "nu", _check_nu(self.nu))
        try:
            sigma = SpdMatrix(delta.entries + np.diag(lam * lam))
            skew = np.eye(xi.size) - lam[:, None] * sigma.inverse * lam[None, :]
            skew = SpdMatrix(0.5 * (skew + skew.T))
        except SkewlabError as exc:
            raise InfeasibleParameterError(str(exc)) from exc
        self._cache["sigma"] = sigma
        self._cache["skew"] = skew

    @property
    def dim(self) -> int:
        return self.xi.size

    @property
    def family(self) -> str:
        return "SDB-SN" if self.nu is None else "SDB-ST"

    @property
    def sigma_mat(self) -> SpdMatrix:
        """``Delta + diag(lambda)^2``, the scale of the symmetric base density."""
        return self._cache["sigma"]

    @property
    def skew_mat(self) -> SpdMatrix:
        """``I - L (Delta + L^2)^-1 L``, the scale of the skewing factor."""
        return self._cache["skew"]

    def __repr__(self):
        nu = "" if self.nu is None else f", nu={self.nu!r}"
        return (f"SdbParams(xi={self.xi.tolist()}, "
                f"delta_mat={self.delta_mat.entries.tolist()}, lam={self.lam.tolist()}{nu})")


Params = Union[ClassicalParams, SdbParams]


# ---------------------------------------------------------------------------
# Slant coordinates
# ---------------------------------------------------------------------------

def alpha_to_delta(alpha, omega_bar) -> np.ndarray:
    """``delta = Omega_bar alpha / sqrt(1 + alpha' Omega_bar alpha)``."""
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    ob = np.asarray(omega_bar, dtype=float)
    if ob.shape != (alpha.size, alpha.size):
        raise DimensionError("alpha and omega_bar dimensions differ")
    oa = ob @ alpha
    return oa / math.sqrt(1.0 + float(alpha @ oa))


def delta_to_alpha(delta, omega_bar) -> np.ndarray:
    """Inverse of :func:`alpha_to_delta`; raises if ``delta`` is infeasible."""
    dv = delta if isinstance(delta, DeltaVector) else DeltaVector(delta)
    ob = SpdMatrix.coerce(omega_bar)
    if ob.dim != dv.entries.size:
        raise DimensionError("delta and omega_bar dimensions differ")
    sol = ob.solve(dv.entries)
    q = float(dv.entries @ sol)
    if not q < 1.0:
        raise InfeasibleParameterError(
            f"delta' Omega_bar^-1 delta = {q:.6g} must be below 1"
        )
    return sol / math.sqrt(1.0 - q)


def param_count(family: str, d: int) -> int:
    """Number of free scalar parameters: ``2d + d(d+1)/2`` plus one for nu."""
    family = canonical_family(family)
    if d < 1:
        raise SkewlabError("dimension must be positive")
    base = 2 * d + d * (d + 1) // 2
    return base + (1 if family.endswith("ST") else 0)


def sdb_to_classical_1d(p: SdbParams) -> ClassicalParams:
    """The classical parameter set with the same density when ``d = 1``."""
    if p.dim != 1:
        raise DimensionError("the two families coincide only for d = 1")
    dl, lam = float(p.delta_mat.entries[0, 0]), float(p.lam[0])
    return ClassicalParams(p.xi, [[dl + lam * lam]], [lam / math.sqrt(dl)], p.nu)


def classical_to_sdb_1d(p: ClassicalParams) -> SdbParams:
    if p.dim != 1:
        raise DimensionError("the two families coincide only for d = 1")
    w = float(p.omega[0])
    a = float(p.alpha[0])
    delta = a / math.sqrt(1.0 + a * a)
    return SdbParams(p.xi, [[w * w * (1.0 - delta * delta)]], [w * delta], p.nu)


def affine_classical(p: ClassicalParams, a, b) -> ClassicalParams:
    """Parameters of ``A Y + b`` for ``Y`` classical SN/ST and full-rank ``A``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.ndim != 2 or a.shape[1] != p.dim or b.size != a.shape[0]:
        raise DimensionError("A and b do not match the parameter dimension")
    omega = SpdMatrix(a @ p.omega_mat.entries @ a.T)
    w_new = np.sqrt(np.diag(omega.entries))
    delta_new = (a @ (p.omega * p.delta)) / w_new
    return ClassicalParams.from_delta(a @ p.xi + b, omega, delta_new, p.nu)


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------

def _require_nu(p, present: bool):
    if present and p.nu is None:
        raise SkewlabError("skew-t density needs degrees of freedom")
    if not present and p.nu is not None:
        raise SkewlabError("skew-normal density given degrees of freedom")


def _check_sdb_dim(p: SdbParams):
    if p.dim > MAX_CDF_DIM:
        raise UnsupportedDimensionError(f"SDB densities support d <= {MAX_CDF_DIM}")


def classical_logpdf(x, p: ClassicalParams, cfg: QuadratureConfig | None = None):
    x2, single = _points(x, p.dim)
    z = x2 - p.xi
    arg = z @ (p.alpha / p.omega)
    if p.nu is None:
        out = _LOG2 + mvn_logpdf(z, p.omega_mat) + special.log_ndtr(arg)
    else:
        nu, d = p.nu, p.dim
        u = p.omega_mat.whiten(z)
        q = np.einsum("ij,ij->i", u, u)
        arg = arg * np.sqrt((nu + d) / (nu + q))
        out = _LOG2 + mvt_logpdf(z, p.omega_mat, nu) + log_t_cdf(arg, nu + d)
    return float(out[0]) if single else out


def sdb_logpdf(x, p: SdbParams, cfg: QuadratureConfig | None = None):
    _check_sdb_dim(p)
    cfg = cfg or DEFAULT_QUADRATURE
    x2, single = _points(x, p.dim)
    d = p.dim
    z = x2 - p.xi
    sigma = p.sigma_mat
    upper = sigma.solve(z.T).T * p.lam
    if p.nu is None:
        out = d * _LOG2 + mvn_logpdf(z, sigma) + log_mvn_cdf(upper, p.skew_mat, cfg)
    else:
        nu = p.nu
        u = sigma.whiten(z)
        q = np.einsum("ij,ij->i", u, u)
        upper = upper * np.sqrt((nu + d) / (nu + q))[:, None]
        out = d * _LOG2 + mvt_logpdf(z, sigma, nu) + log_mvt_cdf(upper, p.skew_mat, nu + d, cfg)
    out = np.asarray(out, dtype=float).reshape(-1)
    return float(out[0]) if single else out


def logpdf(x, p: Params, cfg: QuadratureConfig | None = None):
    """Log-density of any of the four families, dispatched on the parameter type."""
    if isinstance(p, ClassicalParams):
        return classical_logpdf(x, p, cfg)
    if isinstance(p, SdbParams):
        return sdb_logpdf(x, p, cfg)
    raise TypeError(f"unsupported parameter set {type(p).__name__}")


def pdf(x, p: Params, cfg: QuadratureConfig | None = None):
    out = logpdf(x, p, cfg)
    return math.exp(out) if isinstance(out, float) else np.exp(out)


def classical_sn_pdf(x, p: ClassicalParams):
    _require_nu(p, False)
    return pdf(x, p)


def classical_st_pdf(x, p: ClassicalParams):
    _require_nu(p, True)
    return pdf(x, p)


def sdb_sn_pdf(x, p: SdbParams, cfg: QuadratureConfig | None = None):
    _require_nu(p, False)
    return pdf(x, p, cfg)


def sdb_st_pdf(x, p: SdbParams, cfg: QuadratureConfig | None = None):
    _require_nu(p, True)
    return pdf(x, p, cfg)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _mixing_scale(rng, nu, n):
    if nu is None:
        return np.ones(n)
    return np.sqrt(rng.chisquare(nu, size=n) / nu)


def sample_classical(p: ClassicalParams, n: int, seed=None, method: str = "convolution"):
    """Draw ``n`` variates from a classical SN/ST distribution.

    ``method="convolution"`` combines a correlated normal with one half-normal
    shared across coordinates; ``method="conditioning"`` draws the
    ``(d+1)``-dimensional normal and rejects draws whose last coordinate is
    negative.  For the skew-t both are divided by one ``sqrt(W / nu)`` per draw.
    """
    if n < 1:
        raise SkewlabError("n must be at least 1")
    rng = np.random.default_rng(seed)
    d = p.dim
    delta = DeltaVector(p.delta)
    ob = p.omega_bar
    if method == "convolution":
        root = np.sqrt(1.0 - delta.entries ** 2)
        psi = (ob - np.outer(delta.entries, delta.entries)) / np.outer(root, root)
        np.fill_diagonal(psi, 1.0)
        v0 = rng.standard_normal((n, d)) @ SpdMatrix(psi).chol.T
        v1 = np.abs(rng.standard_normal(n))
        z = v0 * root + v1[:, None] * delta.entries
    elif method == "conditioning":
        delta.check_with(ob)
        star = np.empty((d + 1, d + 1))
        star[:d, :d] = ob
        star[:d, d] = star[d, :d] = delta.entries
        star[d, d] = 1.0
        chol = SpdMatrix(star).chol
        kept = []
        have = 0
        while have < n:
            draw = rng.standard_normal((2 * (n - have) + 16, d + 1)) @ chol.T
            draw = draw[draw[:, d] > 0.0, :d]
            kept.append(draw)
            have += draw.shape[0]
        z = np.concatenate(kept)[:n]
    else:
        raise SkewlabError(f"unknown sampling method {method!r}")
    z = z / _mixing_scale(rng, p.nu, n)[:, None]
    return p.xi + z * p.omega


def sample_sdb(p: SdbParams, n: int, seed=None):
    """Draw ``n`` variates as ``xi + (lambda * |Z| + eps) / sqrt(W / nu)``.

    ``Z ~ N_d(0, I)`` and ``eps ~ N_d(0, Delta)``; the skew-normal case uses
    ``W / nu = 1``.
    """
    if n < 1:
        raise SkewlabError("n must be at least 1")
    rng = np.random.default_rng(seed)
    d = p.dim
    z = np.abs(rng.standard_normal((n, d)))
    eps = rng.standard_normal((n, d)) @ p.delta_mat.chol.T
    core = z * p.lam + eps
    core /= _mixing_scale(rng, p.nu, n)[:, None]
    return p.xi + core


def sample(p: Params, n: int, seed=None):
    if isinstance(p, ClassicalParams):
        return sample_classical(p, n, seed)
    return sample_sdb(p, n, seed)


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------

def params_to_dict(p: Params) -> dict:
    if isinstance(p, ClassicalParams):
        scale, slant = p.omega_mat.entries, p.alpha
    else:
        scale, slant = p.delta_mat.entries, p.lam
    out = {
        "family": p.family,
        "xi": p.xi.tolist(),
        "scale": scale.tolist(),
        "slant": slant.tolist(),
    }
    if p.nu is not None:
        out["nu"] = p.nu
    return out


def params_from_dict(obj: dict) -> Params:
    try:
        family = canonical_family(obj["family"])
        xi, scale, slant = obj["xi"], obj["scale"], obj["slant"]
    except KeyError as exc:
        raise SkewlabError(f"parameter record lacks field {exc}") from None
    nu = obj.get("nu")
    if family.endswith("ST") and nu is None:
        raise SkewlabError(f"{family} record needs nu")
    if family.endswith("SN"):
        nu = None
    cls = ClassicalParams if family.startswith("classical") else SdbParams
    return cls(xi, scale, slant, nu)
