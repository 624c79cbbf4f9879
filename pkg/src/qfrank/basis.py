"""Orthonormal basis of the 5-dimensional space of symmetric traceless 3x3 matrices.

All order parameters, multipliers and kernel matrices in this package are
stored as coefficient 5-vectors in the fixed Frobenius-orthonormal basis
E1..E5 below.  ``vec`` / ``mat`` convert between the two pictures and are
broadcast-friendly (leading axes pass through).
"""

import numpy as np

_S2 = np.sqrt(2.0)
_S6 = np.sqrt(6.0)

# E1 = (e1e1 - e2e2)/sqrt2, E2 = (2e3e3 - e1e1 - e2e2)/sqrt6,
# E3..E5 = symmetrized off-diagonal pairs (12), (13), (23).
BASIS = np.array([
    [[1 / _S2, 0, 0], [0, -1 / _S2, 0], [0, 0, 0]],
    [[-1 / _S6, 0, 0], [0, -1 / _S6, 0], [0, 0, 2 / _S6]],
    [[0, 1 / _S2, 0], [1 / _S2, 0, 0], [0, 0, 0]],
    [[0, 0, 1 / _S2], [0, 0, 0], [1 / _S2, 0, 0]],
    [[0, 0, 0], [0, 0, 1 / _S2], [0, 1 / _S2, 0]],
])

# Uniaxial unit tensor along e3: n⊗n - I/3 = sqrt(2/3) * E2.
UNIAXIAL_NORM = np.sqrt(2.0 / 3.0)


def mat(v):
    """Coefficient vector(s) (..., 5) -> symmetric traceless matrix (..., 3, 3)."""
    v = np.asarray(v, dtype=float)
    return np.einsum("...a,aij->...ij", v, BASIS)


def vec(m):
    """Symmetric (traceless) matrix (..., 3, 3) -> coefficient vector (..., 5).

    The symmetric traceless part is what gets encoded; any trace or
    antisymmetric content of ``m`` is discarded by the projection.
    """
    m = np.asarray(m, dtype=float)
    return np.einsum("...ij,aij->...a", m, BASIS)


def uniaxial(n, s=1.0):
    """s*(n⊗n - I/3) as a coefficient vector; ``n`` (..., 3) need not be unit."""
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    outer = np.einsum("...i,...j->...ij", n, n)
    outer[..., 0, 0] -= 1.0 / 3.0
    outer[..., 1, 1] -= 1.0 / 3.0
    outer[..., 2, 2] -= 1.0 / 3.0
    return np.asarray(s)[..., None] * vec(outer) if np.ndim(s) else s * vec(outer)


def rep5(r):
    """5x5 orthogonal representation of a rotation: vec(R M R^T) = rep5(R) @ vec(M)."""
    r = np.asarray(r, dtype=float)
    return np.einsum("aij,...ik,bkl,...jl->...ab", BASIS, r, BASIS, r)


def random_rotation(rng):
    """Haar-distributed rotation matrix from a numpy Generator."""
    m = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(m)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def eig_sorted(v):
    """Eigen-decomposition of mat(v): ascending eigenvalues (..., 3) and frames (..., 3, 3)."""
    w, u = np.linalg.eigh(mat(v))
    return w, u


def from_eig(w, u):
    """Rebuild the coefficient vector from eigenvalues ``w`` and eigenvector columns ``u``."""
    m = np.einsum("...ik,...k,...jk->...ij", u, w, u)
    return vec(m)
