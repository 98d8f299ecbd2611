"""Pure-numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` signature for signature and are used when the
compiled extension is unavailable or ``PLAN_CL_PURE_PYTHON=1`` is set.
"""
from __future__ import annotations

import numpy as np

P_INF = 0  # norm-order code for the l-infinity ball


def gram_schmidt_rows(m: np.ndarray, tol: float) -> tuple[np.ndarray, int]:
    """Modified Gram-Schmidt with one re-orthogonalization pass over rows.

    Returns ``(q, bad)`` where ``bad`` is the first row whose residual norm
    fell below ``tol`` times its original norm, or -1 on success.
    """
    m = np.ascontiguousarray(m, dtype=np.float64)
    q = np.zeros_like(m)
    for i in range(m.shape[0]):
        v = m[i].copy()
        scale = np.sqrt(np.dot(v, v))
        for _ in range(2):
            for j in range(i):
                v -= np.dot(q[j], v) * q[j]
        nrm = np.sqrt(np.dot(v, v))
        if scale == 0.0 or nrm <= tol * scale:
            return q, i
        q[i] = v / nrm
    return q, -1


def jacobi_svd(a: np.ndarray, tol: float, max_sweeps: int) -> tuple[np.ndarray, np.ndarray, int, float]:
    """One-sided (Hestenes) Jacobi on the columns of ``a`` (rows >= cols).

    Returns ``(w, v, sweeps, off)``: ``w = a @ v`` has mutually orthogonal
    columns, ``v`` is orthogonal, ``off`` is the largest normalized column
    correlation seen in the final sweep.
    """
    w = np.array(a, dtype=np.float64, order="F")
    n = w.shape[1]
    v = np.eye(n, order="F")
    total = float(np.sum(w * w))
    negligible = (2.220446049250313e-16**2) * total + 1e-300
    off = 0.0
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                wi = w[:, i]
                wj = w[:, j]
                alpha = float(np.dot(wi, wi))
                beta = float(np.dot(wj, wj))
                if alpha <= negligible or beta <= negligible:
                    continue
                gamma = float(np.dot(wi, wj))
                corr = abs(gamma) / np.sqrt(alpha * beta)
                if corr > off:
                    off = corr
                if corr <= tol:
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                wi_new = c * wi - s * wj
                w[:, j] = s * wi + c * wj
                w[:, i] = wi_new
                vi = v[:, i].copy()
                vj = v[:, j]
                v[:, i] = c * vi - s * vj
                v[:, j] = s * vi + c * vj
        if off <= tol:
            break
    return np.ascontiguousarray(w), np.ascontiguousarray(v), sweeps, off


def _project_rows(x: np.ndarray, rho: float, p: int) -> np.ndarray:
    if p == 2:
        nrm = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
        scale = np.where(nrm > rho, rho / np.where(nrm > 0, nrm, 1.0), 1.0)
        return x * scale
    if p == P_INF:
        return np.clip(x, -rho, rho)
    ax = np.abs(x)
    inside = ax.sum(axis=1) <= rho
    u = -np.sort(-ax, axis=1)
    css = np.cumsum(u, axis=1) - rho
    ks = np.arange(1, x.shape[1] + 1)
    cond = u - css / ks > 0
    last = x.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(x.shape[0]), last] / (last + 1)
    theta = np.where(inside, 0.0, theta)
    return np.sign(x) * np.maximum(ax - theta[:, None], 0.0)


def ball_ascent(
    g: np.ndarray, rho: float, p: int, starts: np.ndarray, iters: int, step: float
) -> tuple[np.ndarray, float]:
    """Projected gradient ascent on ``<eps, g>`` over the l_p ball, all restarts at once."""
    g = np.ascontiguousarray(g, dtype=np.float64).ravel()
    gn = np.sqrt(np.dot(g, g))
    direction = g / gn if gn > 0 else g
    eps = _project_rows(np.array(starts, dtype=np.float64), rho, p)
    best_vals = eps @ g
    best = eps.copy()
    for _ in range(iters):
        eps = _project_rows(eps + step * direction, rho, p)
        vals = eps @ g
        better = vals > best_vals
        best[better] = eps[better]
        best_vals = np.where(better, vals, best_vals)
    k = int(np.argmax(best_vals))
    return best[k].copy(), float(best_vals[k])
