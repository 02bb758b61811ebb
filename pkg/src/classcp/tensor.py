"""Sparse binary third-order tensors and the multilinear kernels used by CP-ALS.

Modes are numbered 1, 2, 3 in the public functions (posts, followers,
followees). Unfoldings follow the Kolda-Bader convention: for target mode
``n`` the two remaining modes are taken in increasing order with the first
one varying fastest, so that

    T_(1) ~ A (C kr B)^T,   T_(2) ~ B (C kr A)^T,   T_(3) ~ C (B kr A)^T

where ``kr`` is :func:`khatri_rao`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_solve
from scipy.linalg.lapack import dpotrf

DEFAULT_RIDGE = 1e-9

_OTHER_MODES = {0: (1, 2), 1: (0, 2), 2: (0, 1)}


class SingularMatrixError(np.linalg.LinAlgError):
    """A Gram system could not be factored as symmetric positive definite.

    ``pivot`` is the smallest Cholesky pivot encountered (the failing one if
    the factorization broke down). ``block`` is filled in by the fitting
    routines with the name of the update that failed.
    """

    def __init__(self, pivot: float, index: int, block: str | None = None):
        self.pivot = float(pivot)
        self.index = int(index)
        self.block = block
        super().__init__(self._message())

    def _message(self) -> str:
        where = f" in {self.block}" if self.block else ""
        return (
            f"singular Gram system{where}: smallest pivot {self.pivot:.3e} "
            f"at position {self.index}"
        )

    def __str__(self) -> str:
        return self._message()


def _check_mode(mode: int) -> int:
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
    return mode - 1


@dataclass(frozen=True, eq=False)
class SparseTensor3:
    """Binary ``p x u x u`` tensor stored as sorted unique coordinates.

    ``coords`` is an ``(nnz, 3)`` int64 array; every stored entry has value 1.
    Use :meth:`from_coords` to build one from unsorted or duplicated input.
    """

    shape: tuple[int, int, int]
    coords: np.ndarray

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if len(shape) != 3 or any(s < 0 for s in shape):
            raise ValueError(f"shape must be three non-negative sizes, got {self.shape!r}")
        if shape[1] != shape[2]:
            raise ValueError(f"both user modes must have equal size, got {shape}")
        coords = np.asarray(self.coords, dtype=np.int64)
        if coords.size == 0:
            coords = np.zeros((0, 3), dtype=np.int64)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise ValueError("coords must have shape (nnz, 3)")
        if len(coords):
            if coords.min() < 0 or np.any(coords.max(axis=0) >= np.asarray(shape)):
                raise ValueError("coordinate out of range for tensor shape")
            lin = _linear_index(coords, shape)
            if np.any(np.diff(lin) <= 0):
                raise ValueError("coords must be strictly sorted and unique")
        coords = coords.copy()
        coords.flags.writeable = False
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "coords", coords)

    @classmethod
    def from_coords(cls, shape, coords) -> "SparseTensor3":
        """Sort and deduplicate ``coords`` before constructing the tensor."""
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        if len(coords):
            coords = np.unique(coords, axis=0)
        return cls(tuple(shape), coords)

    @classmethod
    def from_dense(cls, dense) -> "SparseTensor3":
        dense = np.asarray(dense)
        if not np.all((dense == 0) | (dense == 1)):
            raise ValueError("dense tensor must be binary")
        return cls(dense.shape, np.argwhere(dense != 0))

    @property
    def nnz(self) -> int:
        return len(self.coords)

    def norm_sq(self) -> float:
        """Squared Frobenius norm, which for a binary tensor is ``nnz``."""
        return float(self.nnz)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        if self.nnz:
            out[tuple(self.coords.T)] = 1.0
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseTensor3):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.coords, other.coords)

    def __hash__(self) -> int:
        return hash((self.shape, self.coords.tobytes()))

    def __repr__(self) -> str:
        p, u, _ = self.shape
        return f"SparseTensor3(shape=({p}, {u}, {u}), nnz={self.nnz})"


def _linear_index(coords: np.ndarray, shape) -> np.ndarray:
    return (coords[:, 0] * shape[1] + coords[:, 1]) * shape[2] + coords[:, 2]


def matricize(t: SparseTensor3, mode: int) -> sp.csr_matrix:
    """Mode-``mode`` unfolding of ``t`` as a sparse ``float64`` matrix.

    The column of entry ``(i1, i2, i3)`` is ``i_a + i_b * dim_a`` where ``a < b``
    are the two modes other than ``mode``.
    """
    n = _check_mode(mode)
    a, b = _OTHER_MODES[n]
    dims = t.shape
    rows = t.coords[:, n]
    cols = t.coords[:, a] + t.coords[:, b] * dims[a]
    data = np.ones(t.nnz)
    return sp.csr_matrix((data, (rows, cols)), shape=(dims[n], dims[a] * dims[b]))


def khatri_rao(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product; row ``i * J + j`` holds ``x[i] * y[j]``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 2:
        raise ValueError("khatri_rao expects two matrices")
    if x.shape[1] != y.shape[1]:
        raise ValueError(
            f"column mismatch in khatri_rao: {x.shape[1]} vs {y.shape[1]}"
        )
    return (x[:, None, :] * y[None, :, :]).reshape(x.shape[0] * y.shape[0], x.shape[1])


def mttkrp(t: SparseTensor3, x: np.ndarray, y: np.ndarray, mode: int) -> np.ndarray:
    """Matricized tensor times Khatri-Rao product, straight from the entries.

    ``x`` and ``y`` are the factors of the two non-target modes in increasing
    mode order, so ``mttkrp(t, B, C, 1) == matricize(t, 1) @ khatri_rao(C, B)``.
    """
    n = _check_mode(mode)
    a, b = _OTHER_MODES[n]
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValueError("factor matrices must be 2-D with equal column counts")
    if x.shape[0] != t.shape[a] or y.shape[0] != t.shape[b]:
        raise ValueError(
            f"factor rows {x.shape[0]}, {y.shape[0]} do not match tensor modes "
            f"{a + 1}, {b + 1} of shape {t.shape}"
        )
    out = np.zeros((t.shape[n], x.shape[1]))
    if t.nnz:
        rows = x[t.coords[:, a]] * y[t.coords[:, b]]
        np.add.at(out, t.coords[:, n], rows)
    return out


def gram_solve(g: np.ndarray, rhs: np.ndarray, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """Solve ``X (G + ridge I) = RHS`` for ``X`` by Cholesky factorization.

    Parameters
    ----------
    g : (r, r) array
        Symmetric Gram matrix.
    rhs : (n, r) array
        One right-hand side per row.
    ridge : float
        Non-negative diagonal shift.

    Raises
    ------
    SingularMatrixError
        If the shifted matrix is not numerically positive definite.
    """
    g = np.asarray(g, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"Gram matrix must be square, got shape {g.shape}")
    if rhs.ndim != 2 or rhs.shape[1] != g.shape[0]:
        raise ValueError(f"rhs shape {rhs.shape} incompatible with Gram {g.shape}")
    if ridge < 0:
        raise ValueError(f"ridge must be non-negative, got {ridge}")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(rhs))):
        raise ValueError("non-finite values in Gram system")
    scale = max(np.abs(g).max(initial=0.0), 1.0)
    if np.abs(g - g.T).max(initial=0.0) > 1e-10 * scale:
        raise ValueError("Gram matrix is not symmetric")

    r = g.shape[0]
    m = g + ridge * np.eye(r)
    factor, info = dpotrf(m, lower=1, clean=0)
    if info > 0:
        k = info - 1
        row = factor[k, :k]
        raise SingularMatrixError(m[k, k] - row @ row, k)
    if info < 0:
        raise ValueError(f"invalid argument {-info} to Cholesky factorization")
    pivots = np.diag(factor) ** 2
    k = int(np.argmin(pivots)) if r else 0
    if r and pivots[k] <= r * np.finfo(float).eps * np.diag(m).max():
        raise SingularMatrixError(pivots[k], k)
    if rhs.shape[0] == 0:
        return np.zeros_like(rhs)
    return cho_solve((factor, True), rhs.T).T
