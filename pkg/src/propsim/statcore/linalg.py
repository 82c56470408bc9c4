"""Small dense SPD kernels, vectorized over a leading batch axis.

Matrices here are at most a handful of rows (visits + 2), so the Cholesky
factorization is written column by column over the batch instead of
calling LAPACK once per matrix.  Each batch element carries its own
success flag, which is what the fitters need to report non-convergence
without aborting a whole batch.
"""

from __future__ import annotations

import numpy as np

SYMMETRY_RTOL = 1e-12
PIVOT_RTOL = 1e-15


class SingularSystemError(np.linalg.LinAlgError):
    """Raised when a system matrix is not numerically positive definite."""


def check_symmetric(a: np.ndarray) -> None:
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {a.shape}")
    scale = np.max(np.abs(a), axis=(-2, -1), keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    if np.any(np.abs(a - np.swapaxes(a, -1, -2)) > SYMMETRY_RTOL * scale):
        raise ValueError("matrix is not symmetric")


def cholesky_batch(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lower Cholesky factors of a stack of SPD matrices.

    Returns ``(L, ok)``; ``ok[i]`` is False when a pivot is not positive
    relative to the largest diagonal entry, in which case ``L[i]`` is
    meaningless.
    """
    a = np.asarray(a, dtype=float)
    p = a.shape[-1]
    batch = a.shape[:-2]
    L = np.zeros_like(a)
    ok = np.ones(batch, dtype=bool)
    diag_max = np.max(np.abs(np.diagonal(a, axis1=-2, axis2=-1)), axis=-1)
    floor = PIVOT_RTOL * np.where(diag_max > 0, diag_max, 1.0)
    for j in range(p):
        s = a[..., j, j] - np.sum(L[..., j, :j] ** 2, axis=-1)
        good = np.isfinite(s) & (s > floor)
        ok &= good
        ljj = np.sqrt(np.where(good, s, 1.0))
        L[..., j, j] = ljj
        if j + 1 < p:
            off = a[..., j + 1 :, j] - np.einsum("...ik,...k->...i", L[..., j + 1 :, :j], L[..., j, :j])
            L[..., j + 1 :, j] = off / ljj[..., None]
    return L, ok


def _forward(L, b):
    p = L.shape[-1]
    y = np.zeros_like(b)
    for i in range(p):
        y[..., i] = (b[..., i] - np.einsum("...k,...k->...", L[..., i, :i], y[..., :i])) / L[..., i, i]
    return y


def _backward(L, y):
    p = L.shape[-1]
    x = np.zeros_like(y)
    for i in range(p - 1, -1, -1):
        x[..., i] = (y[..., i] - np.einsum("...k,...k->...", L[..., i + 1 :, i], x[..., i + 1 :])) / L[..., i, i]
    return x


def solve_spd_batch(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``a x = b`` per batch element; failed elements come back as NaN."""
    L, ok = cholesky_batch(a)
    b = np.asarray(b, dtype=float)
    x = _backward(L, _forward(L, b))
    x[~ok] = np.nan
    return x, ok


def solve_spd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cholesky solve of an SPD system.

    Raises
    ------
    SingularSystemError
        If ``a`` is not numerically positive definite.
    """
    a = np.asarray(a, dtype=float)
    check_symmetric(a)
    x, ok = solve_spd_batch(a, b)
    if not np.all(ok):
        raise SingularSystemError("matrix is not positive definite")
    return x


def inv_spd_batch(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    p = a.shape[-1]
    eye = np.broadcast_to(np.eye(p), a.shape)
    L, ok = cholesky_batch(a)
    # columns of the identity solved one at a time
    cols = [_backward(L, _forward(L, np.ascontiguousarray(eye[..., :, k]))) for k in range(p)]
    inv = np.stack(cols, axis=-1)
    inv = 0.5 * (inv + np.swapaxes(inv, -1, -2))
    inv[~ok] = np.nan
    return inv, ok


def logdet_spd_batch(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    L, ok = cholesky_batch(a)
    diag = np.diagonal(L, axis1=-2, axis2=-1)
    logdet = 2.0 * np.sum(np.log(diag), axis=-1)
    return np.where(ok, logdet, np.nan), ok


def condition_spd(a: np.ndarray) -> np.ndarray:
    """Spectral condition number of symmetric matrices (inf if not PD)."""
    w = np.linalg.eigvalsh(np.asarray(a, dtype=float))
    lo, hi = w[..., 0], w[..., -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(lo > 0, hi / lo, np.inf)
