"""Dense float64 matrix helpers: products, orthogonalization, small SVD, norms.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.  Random
generation goes through :func:`make_rng`, which pins the bit generator to
Philox (counter-based) so a seed yields the same stream on every platform.
"""
from __future__ import annotations

import numpy as np

from . import kernels

GS_TOL = 1e-10
SVD_TOL = 1e-12
SVD_MAX_SWEEPS = 100
SVD_MAX_DIM = 256


class ShapeError(ValueError):
    pass


class RankDeficientError(ValueError):
    def __init__(self, row: int):
        super().__init__(f"row {row} is linearly dependent on the rows before it")
        self.row = row


class SvdConvergenceError(RuntimeError):
    def __init__(self, residual: float, sweeps: int):
        super().__init__(
            f"Jacobi SVD did not converge after {sweeps} sweeps (off-diagonal residual {residual:.3e})"
        )
        self.residual = residual


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {a.shape}")
    return a


def make_rng(seed) -> np.random.Generator:
    """Philox-backed generator; ``seed`` may be an int or a ``SeedSequence``."""
    return np.random.Generator(np.random.Philox(seed))


def child_seeds(seed, n: int) -> list[np.random.SeedSequence]:
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return seed.spawn(n)


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def gram_schmidt(m) -> np.ndarray:
    """Orthonormalize the rows of ``m`` in order (modified GS, re-orthogonalized).

    Raises :class:`RankDeficientError` naming the first row whose residual
    norm drops below ``GS_TOL`` relative to its original norm.
    """
    m = as_matrix(m)
    if m.shape[0] > m.shape[1]:
        raise ShapeError(f"gram_schmidt needs rows <= cols, got {m.shape[0]}x{m.shape[1]}")
    q, bad = kernels.gram_schmidt_rows(m, GS_TOL)
    if bad >= 0:
        raise RankDeficientError(bad)
    return q


def complete_basis(rows) -> np.ndarray:
    """Extend orthonormal ``rows`` (r x k) to a full k x k orthonormal basis.

    Standard unit vectors are appended in index order and kept when they add
    a new direction.
    """
    rows = as_matrix(rows)
    k = rows.shape[1]
    basis = [r for r in rows]
    for i in range(k):
        if len(basis) == k:
            break
        e = np.zeros(k)
        e[i] = 1.0
        v = e.copy()
        for _ in range(2):
            for b in basis:
                v -= np.dot(b, v) * b
        nrm = np.linalg.norm(v)
        if nrm > 1e-8:
            basis.append(v / nrm)
    return np.array(basis)


def svd_small(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``m = U @ diag(S) @ V.T`` via one-sided Jacobi rotations.

    ``U`` has orthonormal columns (rows x n), ``V`` is n x n orthogonal with
    the right singular vectors as columns, ``n = min(rows, cols)``; when
    rows < cols the factorization of the transpose is swapped, so ``V`` is
    cols x n.
    """
    m = as_matrix(m)
    if min(m.shape) > SVD_MAX_DIM:
        raise ShapeError(f"svd_small supports min(rows, cols) <= {SVD_MAX_DIM}, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("svd_small requires finite entries")
    if m.shape[0] < m.shape[1]:
        u, s, v = svd_small(m.T)
        return v, s, u
    w, v, sweeps, off = kernels.jacobi_svd(m, SVD_TOL, SVD_MAX_SWEEPS)
    if off > SVD_TOL:
        raise SvdConvergenceError(off, sweeps)
    s = np.sqrt(np.sum(w * w, axis=0))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    w = w[:, order]
    v = v[:, order]
    u = np.zeros_like(w)
    cutoff = s[0] * 1e-14 if s.size and s[0] > 0 else 0.0
    good = s > cutoff
    u[:, good] = w[:, good] / s[good]
    if not np.all(good):
        n_good = int(good.sum())
        s[~good] = 0.0
        full = complete_basis(u[:, :n_good].T) if n_good else np.eye(m.shape[0])
        u[:, n_good:] = full[n_good : u.shape[1]].T
    return u, s, v


def flatten_norm(m, p) -> float:
    """l_p norm of the flattened entries; ``p`` in {1, 2, inf}."""
    x = np.asarray(m, dtype=np.float64).ravel()
    if x.size == 0:
        return 0.0
    if p == 1:
        return float(np.sum(np.abs(x)))
    if p == 2:
        scale = float(np.max(np.abs(x)))
        if scale == 0.0:
            return 0.0
        return scale * float(np.sqrt(np.sum((x / scale) ** 2)))
    if p == np.inf or p == "inf":
        return float(np.max(np.abs(x)))
    raise ValueError(f"unsupported norm order {p!r}")
