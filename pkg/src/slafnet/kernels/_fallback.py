"""Numpy implementations of the hot kernels.

Same signatures and results as the compiled ``_ckernels`` module; used
when the extension is not built or ``SLAFNET_PURE_PYTHON=1``.
"""
from __future__ import annotations

import numpy as np


def combine_packed(keys: np.ndarray, coefs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum coefficients sharing a key. Output keys are sorted ascending."""
    if keys.size == 0:
        return keys.astype(np.int64), coefs.astype(np.float64)
    uniq, inv = np.unique(keys, return_inverse=True)
    summed = np.bincount(inv.ravel(), weights=coefs, minlength=uniq.size)
    return uniq.astype(np.int64), summed


def mul_packed(
    ka: np.ndarray, ca: np.ndarray, kb: np.ndarray, cb: np.ndarray, chunk: int = 1 << 22
) -> tuple[np.ndarray, np.ndarray]:
    """Product of two packed-key polynomials.

    Packed keys add digit-wise without carries, so the key of a product
    monomial is the sum of the operand keys.
    """
    if ka.size == 0 or kb.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.float64)
    rows = max(1, chunk // kb.size)
    acc_k: list[np.ndarray] = []
    acc_c: list[np.ndarray] = []
    for start in range(0, ka.size, rows):
        sk = (ka[start:start + rows, None] + kb[None, :]).ravel()
        sc = (ca[start:start + rows, None] * cb[None, :]).ravel()
        k, c = combine_packed(sk, sc)
        acc_k.append(k)
        acc_c.append(c)
    if len(acc_k) == 1:
        return acc_k[0], acc_c[0]
    return combine_packed(np.concatenate(acc_k), np.concatenate(acc_c))


def cd_sweep(
    Z: np.ndarray,
    r: np.ndarray,
    w: np.ndarray,
    col_sq: np.ndarray,
    lam: float,
    active: np.ndarray,
) -> float:
    """One cyclic coordinate-descent sweep for (1/2m)||r||^2 + lam*||w||_1.

    ``r`` is the current residual ``y - Z @ w`` and is updated in place along
    with ``w``. ``col_sq[j]`` is ``(1/m) * ||Z[:, j]||^2``. Returns the largest
    absolute coordinate change.
    """
    m = Z.shape[0]
    max_change = 0.0
    for j in range(Z.shape[1]):
        if not active[j]:
            continue
        zj = Z[:, j]
        old = w[j]
        rho = zj @ r / m + col_sq[j] * old
        if rho > lam:
            new = (rho - lam) / col_sq[j]
        elif rho < -lam:
            new = (rho + lam) / col_sq[j]
        else:
            new = 0.0
        delta = new - old
        if delta != 0.0:
            r -= delta * zj
            w[j] = new
            if abs(delta) > max_change:
                max_change = abs(delta)
    return max_change
