"""Student t distribution via the regularized incomplete beta function.

The incomplete beta ratio is evaluated with the modified Lentz algorithm on
its continued fraction.  Everything is vectorized over numpy arrays; an
infinite ``df`` means the standard normal.
"""

from __future__ import annotations

import numpy as np
from scipy import special

_TINY = 1e-300
_EPS = 1e-16
_MAX_TERMS = 2000


def _stirling_tail(z):
    """log Gamma(z) minus its Stirling approximation, for z >= 20."""
    zi = 1.0 / z
    z2 = zi * zi
    return zi * (1 / 12 - z2 * (1 / 360 - z2 * (1 / 1260 - z2 * (1 / 1680 - z2 / 1188))))


def log_beta(a, b):
    """log B(a, b), accurate when one argument is large."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    out = np.asarray(special.gammaln(lo) + special.gammaln(hi) - special.gammaln(lo + hi))
    big = hi >= 20
    if big.any():
        x, y = lo[big], hi[big]
        # log Gamma(y) - log Gamma(x + y) with the large-argument terms cancelled analytically
        diff = -(y - 0.5) * np.log1p(x / y) - x * np.log(x + y) + x + _stirling_tail(y) - _stirling_tail(x + y)
        out[big] = special.gammaln(x) + diff
    return out if out.ndim else float(out)


def _betacf(a, b, x):
    """Continued fraction for I_x(a, b); converges for x < (a + 1) / (a + b + 2)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _TINY, _TINY, d)
    d = 1.0 / d
    h = d.copy()
    done = np.zeros(x.shape, dtype=bool)
    for m in range(1, _MAX_TERMS + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        h = np.where(done, h, h * d * c)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(done, h, h * delta)
        done |= np.abs(delta - 1.0) < _EPS
        if done.all():
            break
    return h


def betainc_reg(a, b, x, y=None):
    """Regularized incomplete beta I_x(a, b).

    ``y`` may carry ``1 - x`` computed without cancellation.
    """
    a, b, x = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, x)))
    y = 1.0 - x if y is None else np.broadcast_to(np.asarray(y, dtype=float), x.shape)
    out = np.full(x.shape, np.nan)
    out[x <= 0] = 0.0
    out[y <= 0] = 1.0
    inner = (x > 0) & (y > 0)
    if inner.any():
        ai, bi, xi, yi = a[inner], b[inner], x[inner], y[inner]
        with np.errstate(divide="ignore"):
            logx = np.where(yi < 0.5, np.log1p(-yi), np.log(xi))
            logy = np.where(xi < 0.5, np.log1p(-xi), np.log(yi))
        front = np.exp(-log_beta(ai, bi) + ai * logx + bi * logy)
        direct = xi < (ai + 1.0) / (ai + bi + 2.0)
        res = np.empty(xi.shape)
        if direct.any():
            res[direct] = front[direct] * _betacf(ai[direct], bi[direct], xi[direct]) / ai[direct]
        flip = ~direct
        if flip.any():
            res[flip] = 1.0 - front[flip] * _betacf(bi[flip], ai[flip], yi[flip]) / bi[flip]
        out[inner] = res
    return out


def _check_df(df):
    df = np.asarray(df, dtype=float)
    if np.any(~(df > 0)):
        raise ValueError("degrees of freedom must be positive")
    return df


def t_sf(x, df):
    """Upper tail P(T > x)."""
    x = np.asarray(x, dtype=float)
    df = _check_df(df)
    x, df = np.broadcast_arrays(x, df)
    out = np.empty(x.shape)
    inf = np.isinf(df)
    if inf.any():
        out[inf] = special.ndtr(-x[inf])
    fin = ~inf
    if fin.any():
        xf, nu = x[fin], df[fin]
        t2 = xf * xf
        # half the two-sided tail mass beyond |x|
        half = 0.5 * betainc_reg(nu / 2.0, 0.5, nu / (nu + t2), t2 / (nu + t2))
        out[fin] = np.where(xf >= 0, half, 1.0 - half)
    return out if out.ndim else float(out)


def t_cdf(x, df):
    """P(T <= x) for Student t with ``df`` degrees of freedom."""
    return t_sf(-np.asarray(x, dtype=float), df)


def t_pdf(x, df):
    x = np.asarray(x, dtype=float)
    df = _check_df(df)
    x, df = np.broadcast_arrays(x, df)
    out = np.empty(x.shape)
    inf = np.isinf(df)
    out[inf] = np.exp(-0.5 * x[inf] ** 2) / np.sqrt(2 * np.pi)
    nu, xf = df[~inf], x[~inf]
    logc = -log_beta(nu / 2, 0.5) - 0.5 * np.log(nu)
    out[~inf] = np.exp(logc - (nu + 1) / 2 * np.log1p(xf * xf / nu))
    return out if out.ndim else float(out)


def two_sided_p(stat, df):
    """2 * P(T > |stat|)."""
    p = 2.0 * t_sf(np.abs(np.asarray(stat, dtype=float)), df)
    return np.minimum(p, 1.0)


def _upper_quantile(q, df):
    """Solve P(T > t) = q for t >= 0, with 0 < q <= 1/2."""
    z = special.ndtri(1.0 - q)
    inf = np.isinf(df)
    t = z.copy()
    if inf.all():
        return t
    nu = df
    # Cornish-Fisher start, then bracket-safeguarded Newton on log P(T > t).
    t = np.where(inf, z, z + (z**3 + z) / (4 * nu) + (5 * z**5 + 16 * z**3 + 3 * z) / (96 * nu**2))
    t = np.maximum(t, 0.0)
    lo = np.zeros_like(t)
    hi = np.maximum(2 * t, 1.0)
    while True:
        short = t_sf(hi, nu) > q
        if not short.any():
            break
        hi = np.where(short, hi * 4, hi)
    t = np.clip(t, lo, hi)
    logq = np.log(q)
    for _ in range(200):
        sf = t_sf(t, nu)
        g = np.log(sf) - logq
        lo = np.where(g > 0, t, lo)
        hi = np.where(g <= 0, t, hi)
        dg = -t_pdf(t, nu) / sf
        newton = t - g / dg
        bad = ~np.isfinite(newton) | (newton <= lo) | (newton >= hi)
        nxt = np.where(bad, 0.5 * (lo + hi), newton)
        moved = np.abs(nxt - t)
        t = nxt
        if np.all(moved <= 1e-14 * np.maximum(1.0, np.abs(t))):
            break
    return np.where(inf, z, t)


def t_quantile(p, df):
    """Inverse of :func:`t_cdf` for 0 < p < 1."""
    p = np.asarray(p, dtype=float)
    df = _check_df(df)
    p, df = np.broadcast_arrays(p, df)
    if np.any(~((p > 0) & (p < 1))):
        raise ValueError("quantile probability must lie strictly between 0 and 1")
    q = np.where(p > 0.5, 1.0 - p, p)
    t = _upper_quantile(q.astype(float), df.astype(float))
    out = np.where(p > 0.5, t, -t)
    out = np.where(p == 0.5, 0.0, out)
    return out if out.ndim else float(out)
