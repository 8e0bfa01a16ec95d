"""Dense linear-algebra primitives shared by the whole pipeline.

Everything here operates on plain float64 ndarrays. Orthonormal bases are
returned as d x m arrays with orthonormal columns; the degenerate "no null
space" case is represented by an explicit :class:`ZeroMap` marker so callers
must branch on it instead of silently handling a 0-column matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Relative cutoff below which a singular value counts as zero when a matrix
# is expected to be exactly rank deficient (constructed, not estimated).
SINGULAR_VALUE_RTOL = 1e-10


@dataclass(frozen=True)
class ZeroMap:
    """Marker for the empty null-space basis (rank equals row dimension)."""

    dim: int


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return `a` as a finite 2-d float64 array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def svd(a) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full SVD with input validation.

    Returns (u, s, vt) with singular values sorted in descending order and
    a = u[:, :len(s)] @ diag(s) @ vt.
    """
    arr = as_matrix(a)
    return np.linalg.svd(arr, full_matrices=True)


def haar_orthonormal(d: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Sample a d x m orthonormal frame from the Haar measure.

    QR of an i.i.d. standard Gaussian matrix with the diagonal of R forced
    positive, which makes the draw unique and hence deterministic per seed.
    """
    if m > d:
        raise ValueError(f"cannot fit {m} orthonormal columns in dimension {d}")
    g = rng.standard_normal((d, m))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def null_space_basis(m, rank: int) -> np.ndarray | ZeroMap:
    """Orthonormal basis of the left null space of `m`, given its rank.

    The basis is taken as the trailing p - rank left singular vectors of `m`
    (p = number of rows). When rank == p there is no null space and a
    :class:`ZeroMap` is returned. The rank is trusted as supplied; it is the
    caller's job to obtain it from a rank-selection procedure for estimated
    matrices.
    """
    arr = as_matrix(m)
    p = arr.shape[0]
    if rank > p:
        raise ValueError(f"rank {rank} exceeds row dimension {p}")
    if rank == p:
        return ZeroMap(dim=p)
    u, _, _ = np.linalg.svd(arr, full_matrices=True)
    return u[:, rank:]


def projection_matrix(basis) -> np.ndarray:
    """Orthogonal projector B @ B.T onto the column space of an orthonormal B."""
    b = as_matrix(basis, "basis")
    gram = b.T @ b
    if not np.allclose(gram, np.eye(b.shape[1]), atol=1e-8):
        raise ValueError("basis columns are not orthonormal")
    return b @ b.T


def column_space_basis(a) -> np.ndarray:
    """Orthonormal basis of col(a), with rank set by a relative SV cutoff."""
    arr = as_matrix(a)
    if arr.shape[1] == 0:
        return np.zeros((arr.shape[0], 0))
    u, s, _ = np.linalg.svd(arr, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((arr.shape[0], 0))
    rank = int(np.sum(s > SINGULAR_VALUE_RTOL * s[0]))
    return u[:, :rank]


def subspace_distance(a, b) -> float:
    """Squared Frobenius distance between the column-space projectors of a and b."""
    am = as_matrix(a, "a")
    bm = as_matrix(b, "b")
    if am.shape[0] != bm.shape[0]:
        raise ValueError(f"row dimensions differ: {am.shape[0]} vs {bm.shape[0]}")
    ua = column_space_basis(am)
    ub = column_space_basis(bm)
    diff = ua @ ua.T - ub @ ub.T
    return float(np.sum(diff * diff))


def shift_covariance(m0, sigma, k: float) -> np.ndarray:
    """Covariance of X = k*M0*Z0 + V with Z0 ~ N(0, I), V ~ N(0, sigma).

    This is k^2 * M0 @ M0.T + sigma.
    """
    m = as_matrix(m0, "m0")
    sig = as_matrix(sigma, "sigma")
    if sig.shape[0] != sig.shape[1] or sig.shape[0] != m.shape[0]:
        raise ValueError("sigma must be square with the row dimension of m0")
    return k * k * (m @ m.T) + sig


def shift_precision(m0, sigma, k: float) -> np.ndarray:
    """Exact inverse of :func:`shift_covariance` (sigma must be SPD)."""
    cov = shift_covariance(m0, sigma, k)
    try:
        return np.linalg.solve(cov, np.eye(cov.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"shift covariance is singular: {exc}") from exc


def null_space_precision_limit(r: np.ndarray | ZeroMap, sigma) -> np.ndarray:
    """Large-shift limit of :func:`shift_precision`: R (R' sigma R)^{-1} R'.

    `r` is an orthonormal basis of ker(M0'), or ZeroMap when that kernel is
    trivial, in which case the limit is the zero matrix.
    """
    sig = as_matrix(sigma, "sigma")
    if isinstance(r, ZeroMap):
        return np.zeros((r.dim, r.dim))
    rb = as_matrix(r, "r")
    inner = rb.T @ sig @ rb
    return rb @ np.linalg.solve(inner, rb.T)
