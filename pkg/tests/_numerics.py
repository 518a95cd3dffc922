"""Independent numerical oracles shared by the test modules."""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, stats

from skewlab import logpdf, sample


def _tan_rule(m: int):
    # Gauss-Legendre on (-pi/2, pi/2) for x = tan(theta)
    t, w = np.polynomial.legendre.leggauss(m)
    theta = 0.5 * math.pi * t
    return np.tan(theta), 0.5 * math.pi * w / np.cos(theta) ** 2


def location_scale(p, n: int = 4000, seed: int = 11):
    """Robust centre and spread of ``p`` from a pilot sample."""
    y = sample(p, n, seed=seed)
    centre = np.median(y, axis=0)
    q75, q25 = np.percentile(y, [75, 25], axis=0)
    return centre, np.maximum(0.75 * (q75 - q25), 1e-3)


def integrate_density(p, m: int = 160) -> float:
    """Tensor Gauss-Legendre quadrature of the density after ``x = c + s tan(theta)``.

    The tangent map sends heavy power tails to a smoothly vanishing
    integrand, so the same rule serves normal and t families (d <= 2).
    """
    c, s = location_scale(p)
    u, w = _tan_rule(m)
    if p.dim == 1:
        x = c[0] + s[0] * u
        return float(np.sum(w * s[0] * np.exp(logpdf(x[:, None], p))))
    gx, gy = np.meshgrid(u, u, indexing="ij")
    pts = np.column_stack([c[0] + s[0] * gx.ravel(), c[1] + s[1] * gy.ravel()])
    vals = np.exp(logpdf(pts, p)).reshape(m, m)
    return float(w @ vals @ w * s[0] * s[1])


def importance_integral(p, n: int = 20000, seed: int = 5):
    """Integral of the density by importance sampling from a wide t proposal.

    Returns the estimate and its Monte Carlo standard error.
    """
    pilot = sample(p, 4000, seed=seed + 1)
    mean = pilot.mean(axis=0)
    cov = 2.0 * np.cov(pilot.T)
    prop = stats.multivariate_t(loc=mean, shape=cov, df=3)
    x = prop.rvs(size=n, random_state=np.random.default_rng(seed))
    ratio = np.exp(logpdf(x, p) - prop.logpdf(x))
    return float(ratio.mean()), float(ratio.std(ddof=1) / math.sqrt(n))


def projected_cdf(density, centre, spread, u, m_s: int = 401, m_r: int = 96):
    """CDF of ``u'Y`` for a bivariate density, by integrating out the orthogonal axis.

    ``density`` maps an ``(n, 2)`` array to density values.  Returns a
    callable suitable for a KS test.
    """
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    perp = np.array([-u[1], u[0]])
    c_s, c_r = float(centre @ u), float(centre @ perp)
    a = float(np.sqrt(np.sum((spread * u) ** 2)))
    b = float(np.sqrt(np.sum((spread * perp) ** 2)))
    theta = np.linspace(-0.5 * math.pi, 0.5 * math.pi, m_s + 2)[1:-1]
    s = c_s + a * np.tan(theta)
    r_nodes, r_w = _tan_rule(m_r)
    r = c_r + b * r_nodes
    pts = s[:, None, None] * u + r[None, :, None] * perp
    g = (density(pts.reshape(-1, 2)).reshape(m_s, m_r) @ r_w) * b
    cdf = integrate.cumulative_simpson(g * a / np.cos(theta) ** 2, x=theta, initial=0.0)
    # mass in the two open end intervals is negligible
    return lambda t: np.interp(t, s, cdf, left=0.0, right=cdf[-1])


def random_directions(k: int, rng) -> np.ndarray:
    ang = rng.uniform(0.0, math.pi, size=k)
    return np.column_stack([np.cos(ang), np.sin(ang)])


def projection_ks_pvalues(draws, density, centre, spread, directions):
    out = []
    for u in directions:
        cdf = projected_cdf(density, centre, spread, u)
        out.append(stats.kstest(draws @ (u / np.linalg.norm(u)), cdf).pvalue)
    return out


def random_spd(rng, d: int, lo: float = 0.5, hi: float = 2.0) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return (q * rng.uniform(lo, hi, size=d)) @ q.T


def random_correlation(rng, d: int) -> np.ndarray:
    a = random_spd(rng, d)
    s = np.sqrt(np.diag(a))
    c = a / np.outer(s, s)
    np.fill_diagonal(c, 1.0)
    return c


def random_params(family: str, d: int, rng, nu_range=(3.0, 15.0)):
    """A random valid parameter set of ``family`` in dimension ``d``."""
    from skewlab import ClassicalParams, SdbParams

    xi = rng.normal(0.0, 1.0, size=d)
    scale = random_spd(rng, d)
    nu = float(rng.uniform(*nu_range)) if family.endswith("ST") else None
    if family.startswith("classical"):
        return ClassicalParams(xi, scale, rng.normal(0.0, 2.0, size=d), nu)
    return SdbParams(xi, scale, rng.normal(0.0, 1.5, size=d), nu)


def two_cluster_data(family: str, n_per: int, seed: int, d: int = 2, gap: float = 6.0):
    """Two skewed clusters of ``family`` whose locations are ``gap`` apart."""
    from skewlab import ClassicalParams, SdbParams

    nu = 8.0 if family.endswith("ST") else None
    shift = np.zeros(d)
    shift[0] = gap
    scale = 0.6 * np.eye(d) + 0.4
    scale[np.diag_indices(d)] = 1.0
    if family.startswith("classical"):
        a = ClassicalParams(np.zeros(d), scale, np.full(d, 3.0), nu)
        b = ClassicalParams(shift, scale, np.full(d, -2.0), nu)
    else:
        a = SdbParams(np.zeros(d), 0.5 * scale, np.full(d, 1.5), nu)
        b = SdbParams(shift, 0.5 * scale, np.full(d, -1.0), nu)
    x = np.vstack([sample(a, n_per, seed=2 * seed), sample(b, n_per, seed=2 * seed + 1)])
    labels = np.repeat([0, 1], n_per)
    return x, labels
