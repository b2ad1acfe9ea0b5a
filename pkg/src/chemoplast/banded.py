"""Banded matrices with a reusable LAPACK LU factorization."""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class BandMatrix:
    """Square band matrix in ``scipy.linalg.solve_banded`` layout.

    ``A[i, j]`` lives in ``data[ku + i - j, j]``.
    """

    __slots__ = ("kl", "ku", "n", "data")

    def __init__(self, kl: int, ku: int, n: int, data=None):
        self.kl, self.ku, self.n = int(kl), int(ku), int(n)
        shape = (self.kl + self.ku + 1, self.n)
        self.data = np.zeros(shape) if data is None else np.asarray(data, dtype=float)
        if self.data.shape != shape:
            raise ValueError(f"band data has shape {self.data.shape}, expected {shape}")

    @classmethod
    def from_dense(cls, A, kl=None, ku=None):
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        kl = n - 1 if kl is None else kl
        ku = n - 1 if ku is None else ku
        out = cls(kl, ku, n)
        for d in range(-kl, ku + 1):
            diag = np.diagonal(A, offset=d)
            if d >= 0:
                out.data[ku - d, d:] = diag
            else:
                out.data[ku - d, :n + d] = diag
        return out

    def copy(self) -> "BandMatrix":
        return BandMatrix(self.kl, self.ku, self.n, self.data.copy())

    def flat_index(self, rows, cols):
        """Flat positions in ``data`` of entries ``(rows, cols)``."""
        return (self.ku + np.asarray(rows) - np.asarray(cols)) * self.n + np.asarray(cols)

    def todense(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        for d in range(-self.kl, self.ku + 1):
            k = self.ku - d
            if d >= 0:
                idx = np.arange(self.n - d)
                A[idx, idx + d] = self.data[k, d:]
            else:
                idx = np.arange(self.n + d)
                A[idx - d, idx] = self.data[k, :self.n + d]
        return A

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        y = np.zeros(self.n)
        for d in range(-self.kl, self.ku + 1):
            k = self.ku - d
            if d >= 0:
                y[:self.n - d] += self.data[k, d:] * x[d:]
            else:
                y[-d:] += self.data[k, :self.n + d] * x[:self.n + d]
        return y

    def __matmul__(self, x):
        return self.matvec(x)

    def axpby(self, a: float, other: "BandMatrix", b: float) -> "BandMatrix":
        """``a * self + b * other`` (same band layout)."""
        if (self.kl, self.ku, self.n) != (other.kl, other.ku, other.n):
            raise ValueError("band layouts differ")
        return BandMatrix(self.kl, self.ku, self.n, a * self.data + b * other.data)

    def set_identity_row(self, i: int, diag: float = 1.0):
        """Replace row ``i`` by ``diag * e_i``."""
        j = np.arange(max(0, i - self.kl), min(self.n, i + self.ku + 1))
        self.data[self.ku + i - j, j] = 0.0
        self.data[self.ku, i] = diag

    def lu(self) -> "BandLU":
        return BandLU(self)


class BandLU:
    """LU factors from ``dgbtrf``; ``solve`` calls ``dgbtrs``."""

    def __init__(self, A: BandMatrix):
        ab = np.zeros((2 * A.kl + A.ku + 1, A.n), order="F")
        ab[A.kl:] = A.data
        lu, piv, info = lapack.dgbtrf(ab, A.kl, A.ku)
        if info > 0:
            raise SingularMatrixError(f"band matrix is singular (pivot {info})")
        if info < 0:
            raise ValueError(f"dgbtrf: illegal argument {-info}")
        self.kl, self.ku, self._lu, self._piv = A.kl, A.ku, lu, piv

    def solve(self, b):
        x, info = lapack.dgbtrs(self._lu, self.kl, self.ku, np.asarray(b, dtype=float), self._piv)
        if info != 0:
            raise ValueError(f"dgbtrs failed with info={info}")
        return x
