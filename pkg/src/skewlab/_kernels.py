"""Compiled scalar kernels for the hot paths (bivariate/trivariate normal CDF,
skew-normal log-densities in up to three dimensions)."""

import math

import numpy as np
from numba import njit

_SQRT2 = math.sqrt(2.0)
_TWO_PI = 2.0 * math.pi
_LOG_2PI = math.log(2.0 * math.pi)
_LOG2 = math.log(2.0)


def _half_nodes(n):
    x, w = np.polynomial.legendre.leggauss(n)
    keep = x > 0
    return x[keep].copy(), w[keep].copy()


_X6, _W6 = _half_nodes(6)
_X12, _W12 = _half_nodes(12)
_X20, _W20 = _half_nodes(20)

# Gauss-Legendre rules on [0, 1] with 12 * 2^k nodes, stored back to back.
_LEVELS = 8
_GL_SIZES = np.array([12 * 2 ** k for k in range(_LEVELS)], dtype=np.int64)
_GL_OFFSETS = np.concatenate([[0], np.cumsum(_GL_SIZES)]).astype(np.int64)
_GL_T = np.empty(_GL_OFFSETS[-1])
_GL_W = np.empty(_GL_OFFSETS[-1])
for _k, _m in enumerate(_GL_SIZES):
    _x, _w = np.polynomial.legendre.leggauss(int(_m))
    _GL_T[_GL_OFFSETS[_k]:_GL_OFFSETS[_k + 1]] = 0.5 * (_x + 1.0)
    _GL_W[_GL_OFFSETS[_k]:_GL_OFFSETS[_k + 1]] = 0.5 * _w


@njit(cache=True)
def ndtr(x):
    return 0.5 * math.erfc(-x / _SQRT2)


@njit(cache=True)
def log_ndtr(x):
    if x > 5.0:
        return math.log1p(-0.5 * math.erfc(x / _SQRT2))
    if x > -30.0:
        return math.log(0.5 * math.erfc(-x / _SQRT2))
    x2 = x * x
    s = 1.0 - 1.0 / x2 + 3.0 / x2 ** 2 - 15.0 / x2 ** 3 + 105.0 / x2 ** 4 - 945.0 / x2 ** 5
    return -0.5 * x2 - math.log(-x) - 0.5 * _LOG_2PI + math.log(s)


@njit(cache=True)
def _bvnu(h, k, r):
    # Genz's BVNU: P(X > h, Y > k)
    ar = abs(r)
    if ar < 0.3:
        x, w = _X6, _W6
    elif ar < 0.75:
        x, w = _X12, _W12
    else:
        x, w = _X20, _W20
    hk = h * k
    bvn = 0.0
    if ar < 0.925:
        hs = 0.5 * (h * h + k * k)
        asr = 0.5 * math.asin(r)
        for i in range(x.size):
            sn = math.sin(asr * (1.0 - x[i]))
            bvn += w[i] * math.exp((sn * hk - hs) / (1.0 - sn * sn))
            sn = math.sin(asr * (1.0 + x[i]))
            bvn += w[i] * math.exp((sn * hk - hs) / (1.0 - sn * sn))
        bvn = bvn * asr / _TWO_PI + ndtr(-h) * ndtr(-k)
    else:
        if r < 0.0:
            k = -k
            hk = -hk
        if ar < 1.0:
            as_ = (1.0 - r) * (1.0 + r)
            a = math.sqrt(as_)
            bs = (h - k) ** 2
            c = (4.0 - hk) / 8.0
            d = (12.0 - hk) / 16.0
            asr = -(bs / as_ + hk) / 2.0
            if asr > -100.0:
                bvn = a * math.exp(asr) * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0
                                           + c * d * as_ * as_ / 5.0)
            if hk > -100.0:
                b = math.sqrt(bs)
                sp = math.sqrt(_TWO_PI) * ndtr(-b / a)
                bvn -= math.exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
            a = a / 2.0
            for i in range(x.size):
                for sgn in (-1.0, 1.0):
                    xs = (a + a * sgn * x[i]) ** 2
                    rs = math.sqrt(1.0 - xs)
                    asr = -(bs / xs + hk) / 2.0
                    if asr > -100.0:
                        sp = 1.0 + c * xs * (1.0 + d * xs)
                        ep = math.exp(-hk * xs / (2.0 * (1.0 + rs) ** 2)) / rs
                        bvn += a * w[i] * math.exp(asr) * (ep - sp)
            bvn = -bvn / _TWO_PI
        if r > 0.0:
            bvn += ndtr(-max(h, k))
        elif h >= k:
            bvn = -bvn
        else:
            if h < 0.0:
                low = ndtr(k) - ndtr(h)
            else:
                low = ndtr(-h) - ndtr(-k)
            bvn = low - bvn
    return min(max(bvn, 0.0), 1.0)


@njit(cache=True)
def bvn(h, k, r):
    """P(X <= h, Y <= k), standard bivariate normal with correlation r."""
    h = min(max(h, -40.0), 40.0)
    k = min(max(k, -40.0), 40.0)
    if r == 0.0:
        return ndtr(h) * ndtr(k)
    return _bvnu(-h, -k, r)


@njit(cache=True)
def _phi2(a, b, rho):
    om = 1.0 - rho * rho
    return math.exp(-(a * a - 2.0 * rho * a * b + b * b) / (2.0 * om)) / (_TWO_PI * math.sqrt(om))


@njit(cache=True)
def _log_phi2(a, b, rho):
    om = 1.0 - rho * rho
    return -(a * a - 2.0 * rho * a * b + b * b) / (2.0 * om) - math.log(_TWO_PI) - 0.5 * math.log(om)


@njit(cache=True)
def _plackett_integrand(u, h0, h1, h2, r01, r02, r12, as01, as02):
    # the path t in [0, 1] is reparameterised per term by t r = sin(u asin r),
    # which cancels the 1/sqrt(1 - rho^2) factor of the bivariate density
    total = 0.0
    if r01 != 0.0:
        rho = math.sin(u * as01)
        t = rho / r01
        s = t * r02
        den = 1.0 - rho * rho
        b0 = (s - rho * r12) / den
        b1 = (r12 - rho * s) / den
        var = max(1.0 - b0 * s - b1 * r12, 1e-300)
        expo = -(h0 * h0 - 2.0 * rho * h0 * h1 + h1 * h1) / (2.0 * den)
        total += as01 * math.exp(expo) * ndtr((h2 - b0 * h0 - b1 * h1) / math.sqrt(var))
    if r02 != 0.0:
        rho = math.sin(u * as02)
        t = rho / r02
        s = t * r01
        den = 1.0 - rho * rho
        b0 = (s - rho * r12) / den
        b1 = (r12 - rho * s) / den
        var = max(1.0 - b0 * s - b1 * r12, 1e-300)
        expo = -(h0 * h0 - 2.0 * rho * h0 * h2 + h2 * h2) / (2.0 * den)
        total += as02 * math.exp(expo) * ndtr((h1 - b0 * h0 - b1 * h2) / math.sqrt(var))
    return total / _TWO_PI


@njit(cache=True)
def tvn(h0, h1, h2, r01, r02, r12, tol):
    """Trivariate normal CDF by Plackett's identity.

    Variables 1 and 2 keep their correlation ``r12``; the path integral over
    ``t`` switches on ``t * r01`` and ``t * r02``.  Callers should put the
    most correlated pair in positions 1 and 2.
    """
    h0 = min(max(h0, -40.0), 40.0)
    h1 = min(max(h1, -40.0), 40.0)
    h2 = min(max(h2, -40.0), 40.0)
    base = ndtr(h0) * bvn(h1, h2, r12)
    if r01 == 0.0 and r02 == 0.0:
        return base
    as01 = math.asin(r01)
    as02 = math.asin(r02)
    prev = 0.0
    for lev in range(_LEVELS):
        cur = 0.0
        for j in range(_GL_OFFSETS[lev], _GL_OFFSETS[lev + 1]):
            cur += _GL_W[j] * _plackett_integrand(_GL_T[j], h0, h1, h2, r01, r02, r12,
                                                  as01, as02)
        if lev > 0:
            diff = abs(cur - prev)
            if diff <= tol * min(1.0, abs(base + cur)) or diff <= 1e-15:
                break
        prev = cur
    return min(max(base + cur, 0.0), 1.0)


# Below this, the absolute-accuracy methods above lose relative precision and
# log-probabilities come from a one-dimensional integral in log space instead.
_TAIL_P = 1e-7
_TX64, _TW64 = np.polynomial.legendre.leggauss(64)


@njit(cache=True)
def _cond_log(kind, x, par):
    # log of the conditional orthant probability given the integrated variable = x
    if kind == 2:
        # par: k, r, s
        return log_ndtr((par[0] - par[1] * x) / par[2])
    # par: hb, hc, rab, rac, sab, sac, rho
    return log_bvn((par[0] - par[2] * x) / par[4], (par[1] - par[3] * x) / par[5], par[6])


@njit(cache=True)
def _bracket_edge(kind, par, m, fm, sign, limit):
    """Point between ``m`` and ``limit`` where the log-integrand falls 45 below ``fm``."""
    if sign * (limit - m) <= 0.0:
        return m
    # shrink the first step until the peak is resolved, then double outwards
    step = 1e-3
    while step > 1e-13:
        x = m + sign * step
        if -0.5 * x * x + _cond_log(kind, x, par) >= fm - 45.0:
            break
        step *= 0.1
    dist = 0.0
    span = sign * (limit - m)
    while dist < span:
        dist = min(span, dist + step)
        pos = limit if dist == span else m + sign * dist
        if -0.5 * pos * pos + _cond_log(kind, pos, par) < fm - 45.0:
            return pos
        step *= 2.0
    return limit


@njit(cache=True)
def _tail_log_integral(kind, upper, par):
    """log of int_{-inf}^{upper} phi(x) F(x) dx with log F concave.

    The log-integrand has curvature at least one, so it falls by more than 45
    within 9.5 of its mode; the rule is placed on the bracket where it stays
    within 45 of the maximum.
    """
    lo = -45.0
    hi = upper
    # golden section for the mode of -x^2/2 + log F(x) on [lo, hi]
    gr = 0.6180339887498949
    a, b = max(lo, hi - 60.0), hi
    c = b - gr * (b - a)
    d = a + gr * (b - a)
    fc = -0.5 * c * c + _cond_log(kind, c, par)
    fd = -0.5 * d * d + _cond_log(kind, d, par)
    for _ in range(60):
        if b - a < 1e-4:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - gr * (b - a)
            fc = -0.5 * c * c + _cond_log(kind, c, par)
        else:
            a, c, fc = c, d, fd
            d = a + gr * (b - a)
            fd = -0.5 * d * d + _cond_log(kind, d, par)
    m = 0.5 * (a + b)
    fm = -0.5 * m * m + _cond_log(kind, m, par)
    fh = -0.5 * hi * hi + _cond_log(kind, hi, par)
    if fh >= fm:
        # increasing up to the limit; near-degenerate correlations make this steep
        m, fm = hi, fh
    left = _bracket_edge(kind, par, m, fm, -1.0, m - 9.5)
    right = _bracket_edge(kind, par, m, fm, 1.0, min(m + 9.5, hi))
    if right <= left:
        return fm - 1e300
    half = 0.5 * (right - left)
    mid = 0.5 * (right + left)
    vals = np.empty(_TX64.size)
    for j in range(_TX64.size):
        x = mid + half * _TX64[j]
        vals[j] = math.log(_TW64[j]) - 0.5 * x * x + _cond_log(kind, x, par)
    top = vals.max()
    acc = 0.0
    for j in range(vals.size):
        acc += math.exp(vals[j] - top)
    return top + math.log(acc * half) - 0.5 * _LOG_2PI


@njit(cache=True)
def log_bvn(h, k, r):
    """Relatively accurate ``log P(X <= h, Y <= k)``."""
    if r == 0.0:
        return log_ndtr(h) + log_ndtr(k)
    p = bvn(h, k, r)
    if p > _TAIL_P:
        return math.log(p)
    h = min(max(h, -40.0), 40.0)
    k = min(max(k, -40.0), 40.0)
    if k < h:
        h, k = k, h
    par = np.array([k, r, math.sqrt((1.0 - r) * (1.0 + r))])
    return _tail_log_integral(2, h, par)


@njit(cache=True)
def log_tvn(h0, h1, h2, r01, r02, r12, tol):
    """Relatively accurate trivariate ``log P(X <= h)``; see :func:`tvn` for ordering."""
    p = tvn(h0, h1, h2, r01, r02, r12, tol)
    if p > _TAIL_P:
        return math.log(p)
    h0 = min(max(h0, -40.0), 40.0)
    h1 = min(max(h1, -40.0), 40.0)
    h2 = min(max(h2, -40.0), 40.0)
    # integrate over the most restrictive coordinate
    if h0 <= h1 and h0 <= h2:
        a, hb, hc, rab, rac, rbc = h0, h1, h2, r01, r02, r12
    elif h1 <= h2:
        a, hb, hc, rab, rac, rbc = h1, h0, h2, r01, r12, r02
    else:
        a, hb, hc, rab, rac, rbc = h2, h0, h1, r02, r12, r01
    sab = math.sqrt((1.0 - rab) * (1.0 + rab))
    sac = math.sqrt((1.0 - rac) * (1.0 + rac))
    rho = (rbc - rab * rac) / (sab * sac)
    rho = min(max(rho, -1.0 + 1e-15), 1.0 - 1e-15)
    par = np.array([hb, hc, rab, rac, sab, sac, rho])
    return _tail_log_integral(3, a, par)


@njit(cache=True)
def _order3(r):
    # index order (i, j, k) keeping the most correlated pair (j, k)
    a01, a02, a12 = abs(r[0, 1]), abs(r[0, 2]), abs(r[1, 2])
    if a12 >= a01 and a12 >= a02:
        return 0, 1, 2
    if a02 >= a01:
        return 1, 0, 2
    return 2, 0, 1


@njit(cache=True)
def bvn_many(h, k, r):
    out = np.empty(h.size)
    for i in range(h.size):
        out[i] = bvn(h[i], k[i], r)
    return out


@njit(cache=True)
def log_orthant(h, r, tol):
    """log P(X <= h) for standardised limits ``h`` (n, d <= 3) and correlation ``r``."""
    n, d = h.shape
    out = np.empty(n)
    diagonal = True
    for a in range(d):
        for b in range(a + 1, d):
            if r[a, b] != 0.0:
                diagonal = False
    if diagonal:
        for i in range(n):
            s = 0.0
            for a in range(d):
                s += log_ndtr(h[i, a])
            out[i] = s
        return out
    if d == 2:
        for i in range(n):
            out[i] = log_bvn(h[i, 0], h[i, 1], r[0, 1])
        return out
    i0, j0, k0 = _order3(r)
    lone = r[i0, j0] == 0.0 and r[i0, k0] == 0.0
    for i in range(n):
        if lone:
            out[i] = log_ndtr(h[i, i0]) + log_bvn(h[i, j0], h[i, k0], r[j0, k0])
        else:
            out[i] = log_tvn(h[i, i0], h[i, j0], h[i, k0], r[i0, j0], r[i0, k0], r[j0, k0], tol)
    return out


@njit(cache=True)
def _log_phi(x):
    return -0.5 * x * x - 0.5 * _LOG_2PI


@njit(cache=True)
def log_orthant_grad(h, r, tol):
    """``log P(X <= h)`` with its derivatives in ``h`` and in the correlations.

    Returns ``(logp, gh, gr)``: ``gh[i, a]`` is the derivative in ``h[i, a]``
    and ``gr[i, a, b]`` (``a < b``) the derivative in ``r[a, b]``.
    """
    n, d = h.shape
    logp = log_orthant(h, r, tol)
    gh = np.zeros((n, d))
    gr = np.zeros((n, d, d))
    for i in range(n):
        lp = logp[i]
        if d == 1:
            if abs(h[i, 0]) < 40.0:
                gh[i, 0] = math.exp(_log_phi(h[i, 0]) - lp)
            continue
        if d == 2:
            h0, h1, rr = h[i, 0], h[i, 1], r[0, 1]
            s = math.sqrt(1.0 - rr * rr)
            if abs(h0) < 40.0:
                gh[i, 0] = math.exp(_log_phi(h0) + log_ndtr((h1 - rr * h0) / s) - lp)
            if abs(h1) < 40.0:
                gh[i, 1] = math.exp(_log_phi(h1) + log_ndtr((h0 - rr * h1) / s) - lp)
            gr[i, 0, 1] = math.exp(_log_phi2(h0, h1, rr) - lp)
            continue
        for a in range(3):
            b = (a + 1) % 3
            c = (a + 2) % 3
            ha = h[i, a]
            if abs(ha) < 40.0:
                rab, rac, rbc = r[a, b], r[a, c], r[b, c]
                sab = math.sqrt(1.0 - rab * rab)
                sac = math.sqrt(1.0 - rac * rac)
                lp2 = log_bvn((h[i, b] - rab * ha) / sab, (h[i, c] - rac * ha) / sac,
                              (rbc - rab * rac) / (sab * sac))
                gh[i, a] = math.exp(_log_phi(ha) + lp2 - lp)
        for a in range(3):
            for b in range(a + 1, 3):
                c = 3 - a - b
                rab, rac, rbc = r[a, b], r[a, c], r[b, c]
                den = 1.0 - rab * rab
                ba = (rac - rab * rbc) / den
                bb = (rbc - rab * rac) / den
                var = max(1.0 - ba * rac - bb * rbc, 1e-300)
                cond = (h[i, c] - ba * h[i, a] - bb * h[i, b]) / math.sqrt(var)
                gr[i, a, b] = math.exp(_log_phi2(h[i, a], h[i, b], rab) + log_ndtr(cond) - lp)
    return logp, gh, gr


@njit(cache=True)
def classical_sn_parts(x, xi, chol, alpha_over_omega):
    """Normal part and skewing argument of the classical skew-normal log-density."""
    n, d = x.shape
    logdet = 0.0
    for a in range(d):
        logdet += 2.0 * math.log(chol[a, a])
    gauss = np.empty(n)
    h = np.empty((n, 1))
    u = np.empty(d)
    for i in range(n):
        q = 0.0
        arg = 0.0
        for a in range(d):
            z = x[i, a] - xi[a]
            arg += alpha_over_omega[a] * z
            s = z
            for b in range(a):
                s -= chol[a, b] * u[b]
            u[a] = s / chol[a, a]
            q += u[a] * u[a]
        gauss[i] = _LOG2 - 0.5 * (d * _LOG_2PI + logdet + q)
        h[i, 0] = arg
    return gauss, h, np.ones((1, 1))


@njit(cache=True)
def classical_sn_logpdf(x, xi, chol, alpha_over_omega):
    """log of 2 phi_d(x - xi; L L') Phi(alpha' omega^-1 (x - xi))."""
    gauss, h, _ = classical_sn_parts(x, xi, chol, alpha_over_omega)
    out = np.empty(gauss.size)
    for i in range(gauss.size):
        out[i] = gauss[i] + log_ndtr(h[i, 0])
    return out


@njit(cache=True)
def sdb_sn_parts(x, xi, delta, lam):
    """Normal part, standardised skewing limits and their correlation (SDB)."""
    n, d = x.shape
    sigma = delta.copy()
    for a in range(d):
        sigma[a, a] += lam[a] * lam[a]
    lsig = np.linalg.cholesky(sigma)
    logdet = 0.0
    for a in range(d):
        logdet += 2.0 * math.log(lsig[a, a])
    prec = np.linalg.inv(sigma)
    skew = np.empty((d, d))
    for a in range(d):
        for b in range(d):
            skew[a, b] = (1.0 if a == b else 0.0) - lam[a] * prec[a, b] * lam[b]
    sd = np.empty(d)
    for a in range(d):
        if not skew[a, a] > 0.0:
            # rounding at extreme slants; report an infeasible point
            return np.full(n, -np.inf), np.zeros((n, d)), np.eye(d)
        sd[a] = math.sqrt(skew[a, a])
    corr = np.empty((d, d))
    for a in range(d):
        for b in range(d):
            if a == b:
                corr[a, b] = 1.0
            elif prec[a, b] == 0.0:
                # exact zeros where the skewing scale is diagonal
                corr[a, b] = 0.0
            else:
                corr[a, b] = skew[a, b] / (sd[a] * sd[b])
    h = np.empty((n, d))
    gauss = np.empty(n)
    u = np.empty(d)
    z = np.empty(d)
    for i in range(n):
        q = 0.0
        for a in range(d):
            z[a] = x[i, a] - xi[a]
            s = z[a]
            for b in range(a):
                s -= lsig[a, b] * u[b]
            u[a] = s / lsig[a, a]
            q += u[a] * u[a]
        for a in range(d):
            s = 0.0
            for b in range(d):
                s += prec[a, b] * z[b]
            h[i, a] = lam[a] * s / sd[a]
        gauss[i] = d * _LOG2 - 0.5 * (d * _LOG_2PI + logdet + q)
    return gauss, h, corr


@njit(cache=True)
def sdb_sn_logpdf(x, xi, delta, lam, tol):
    """SDB skew-normal log-density for d <= 3."""
    gauss, h, corr = sdb_sn_parts(x, xi, delta, lam)
    return gauss + log_orthant(h, corr, tol)


@njit(cache=True)
def _decode_scale(theta, d):
    # lower Cholesky factor from row-major packed entries with log diagonal
    lower = np.zeros((d, d))
    pos = d
    for a in range(d):
        for b in range(a + 1):
            v = theta[pos]
            lower[a, b] = math.exp(v) if a == b else v
            pos += 1
    return lower


@njit(cache=True)
def _sn_parts_theta(classical, theta, x, eig_floor):
    n, d = x.shape
    k = d * (d + 1) // 2
    dummy = (np.zeros(n), np.zeros((n, 1)), np.ones((1, 1)))
    for j in range(theta.size):
        if not abs(theta[j]) < 1e150:
            return False, dummy[0], dummy[1], dummy[2]
    xi = theta[:d].copy()
    lower = _decode_scale(theta, d)
    scale = lower @ lower.T
    for a in range(d):
        for b in range(d):
            if not math.isfinite(scale[a, b]):
                return False, dummy[0], dummy[1], dummy[2]
    if not np.linalg.eigvalsh(scale)[0] >= eig_floor:
        return False, dummy[0], dummy[1], dummy[2]
    slant = theta[d + k:2 * d + k].copy()
    if classical:
        a = np.empty(d)
        for j in range(d):
            a[j] = slant[j] / math.sqrt(scale[j, j])
        g, h, c = classical_sn_parts(x, xi, lower, a)
    else:
        g, h, c = sdb_sn_parts(x, xi, scale, slant)
    ok = True
    for i in range(n):
        if not math.isfinite(g[i]):
            ok = False
            break
    return ok, g, h, c


@njit(cache=True)
def sn_value_grad(classical, theta, x, w, eig_floor, tol):
    """``sum_i w_i log f(x_i)`` and its gradient for the skew-normal families.

    The orthant probability is differentiated exactly in its limits and
    correlations; the map from ``theta`` to those is differenced centrally.
    Returns ``(ok, value, grad)``; ``ok`` is False off the feasible set.
    """
    p = theta.size
    grad = np.zeros(p)
    ok, g0, h0, c0 = _sn_parts_theta(classical, theta, x, eig_floor)
    if not ok:
        return False, 0.0, grad
    n, m = h0.shape
    logp, gh, gr = log_orthant_grad(h0, c0, tol)
    value = 0.0
    for i in range(n):
        value += w[i] * (g0[i] + logp[i])
    tp = theta.copy()
    for j in range(p):
        step = 1e-6 * max(1.0, abs(theta[j]))
        tp[j] = theta[j] + step
        okp, gp, hp, cp = _sn_parts_theta(classical, tp, x, eig_floor)
        tp[j] = theta[j] - step
        okm, gm, hm, cm = _sn_parts_theta(classical, tp, x, eig_floor)
        tp[j] = theta[j]
        if not okp and not okm:
            continue
        span = 2.0 * step
        if not okp:
            gp, hp, cp, span = g0, h0, c0, step
        elif not okm:
            gm, hm, cm, span = g0, h0, c0, step
        acc = 0.0
        for i in range(n):
            t = gp[i] - gm[i]
            for a in range(m):
                t += gh[i, a] * (hp[i, a] - hm[i, a])
                for b in range(a + 1, m):
                    t += gr[i, a, b] * (cp[a, b] - cm[a, b])
            acc += w[i] * t
        grad[j] = acc / span
    return True, value, grad
