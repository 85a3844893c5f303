"""One-sided Jacobi SVD for small dense matrices, batched over a leading axis."""

from __future__ import annotations

import numpy as np

TOL = 1e-10
MAX_SWEEPS = 1000


def jacobi_svd(x: np.ndarray, tol: float = TOL, max_sweeps: int = MAX_SWEEPS):
    """Return ``(s, v)`` with ``x @ v`` having orthogonal columns of norm ``s``.

    ``x`` is ``(rows, cols)`` or ``(batch, rows, cols)``. Singular values are
    sorted in decreasing order; ``v`` holds the matching right singular
    vectors as columns. Columns are rotated pairwise (Hestenes) until every
    pair is orthogonal to ``tol`` relative to its norms.
    """
    a = np.array(x, dtype=np.float64)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[None]
    batch, _, cols = a.shape
    v = np.broadcast_to(np.eye(cols), (batch, cols, cols)).copy()

    for _ in range(max_sweeps):
        rotated = False
        for p in range(cols - 1):
            for q in range(p + 1, cols):
                ap, aq = a[:, :, p], a[:, :, q]
                alpha = np.einsum("bi,bi->b", ap, ap)
                beta = np.einsum("bi,bi->b", aq, aq)
                gamma = np.einsum("bi,bi->b", ap, aq)
                active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
                if not active.any():
                    continue
                rotated = True
                g = np.where(active, gamma, 1.0)
                # an overflowing zeta means a vanishing rotation angle; t -> 0 is right
                with np.errstate(over="ignore", divide="ignore"):
                    zeta = (beta - alpha) / (2.0 * g)
                    sign = np.where(zeta >= 0, 1.0, -1.0)
                    t = sign / (np.abs(zeta) + np.hypot(1.0, zeta))
                cs = np.where(active, 1.0 / np.sqrt(1.0 + t * t), 1.0)
                sn = np.where(active, cs * t, 0.0)
                for m in (a, v):
                    mp, mq = m[:, :, p].copy(), m[:, :, q]
                    m[:, :, p] = cs[:, None] * mp - sn[:, None] * mq
                    m[:, :, q] = sn[:, None] * mp + cs[:, None] * mq
        if not rotated:
            break

    s = np.sqrt(np.einsum("bij,bij->bj", a, a))
    order = np.argsort(-s, axis=-1, kind="stable")
    s = np.take_along_axis(s, order, axis=-1)
    v = np.take_along_axis(v, order[:, None, :], axis=-1)
    return (s[0], v[0]) if squeeze else (s, v)


def denoise_projector(x: np.ndarray, keep_fraction: float) -> np.ndarray:
    """Channel-space projector onto singular directions with s >= keep_fraction * s_max."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    s, v = jacobi_svd(x)
    smax = s[..., :1]
    keep = (s >= keep_fraction * smax) & (smax > 0)
    vk = v * keep[..., None, :]
    return vk @ np.swapaxes(vk, -1, -2)


def svd_denoise(x: np.ndarray, keep_fraction: float) -> np.ndarray:
    """Zero the singular components below ``keep_fraction`` of the largest one."""
    x = np.asarray(x, dtype=np.float64)
    return x @ denoise_projector(x, keep_fraction)
