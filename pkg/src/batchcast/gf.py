"""Arithmetic and dense linear algebra over the 256-element binary field.

All coefficient math in this package happens in GF(2^8) with reduction
polynomial x^8 + x^4 + x^3 + x^2 + 1 (0x11D). Addition is XOR. Multiplication
goes through a precomputed 256x256 product table so that the matrix kernels
below reduce to vectorized numpy gathers plus XOR folds, which is what keeps
the simulator fast on a single core.
"""

from __future__ import annotations

import numpy as np

REDUCTION_POLY = 0x11D
ORDER = 256


class GFLinearAlgebraError(ValueError):
    """Base class for solve failures."""


class UnderdeterminedSystemError(GFLinearAlgebraError):
    """The coefficient matrix has rank smaller than its column count."""


class InconsistentSystemError(GFLinearAlgebraError):
    """No assignment satisfies the given system."""


def _build_tables():
    # 0x02 is primitive for 0x11D, so repeated doubling enumerates all
    # nonzero elements.
    exp = np.zeros(510, dtype=np.uint8)
    log = np.zeros(ORDER, dtype=np.int64)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & 0x100:
            x ^= REDUCTION_POLY
    exp[255:] = exp[:255]

    a = np.arange(ORDER)
    table = exp[log[a][:, None] + log[a][None, :]].astype(np.uint8)
    table[0, :] = 0
    table[:, 0] = 0

    inv = np.zeros(ORDER, dtype=np.uint8)
    inv[1:] = exp[255 - log[1:]]
    return exp, log, table, inv


_EXP, _LOG, MUL_TABLE, _INV = _build_tables()


def mul(a, b):
    """Field product. Accepts scalars or equally shaped uint8 arrays."""
    out = MUL_TABLE[a, b]
    if np.isscalar(a) and np.isscalar(b):
        return int(out)
    return out


def add(a, b):
    """Field sum (XOR); provided for symmetry."""
    out = np.bitwise_xor(a, b)
    if np.isscalar(a) and np.isscalar(b):
        return int(out)
    return out


def inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no multiplicative inverse")
    return int(_INV[a])


def scale(vec: np.ndarray, s: int) -> np.ndarray:
    """s * vec elementwise."""
    return MUL_TABLE[s, vec]


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """m @ v over the field; m is (r, c), v is (c,)."""
    if m.shape[1] == 0:
        return np.zeros(m.shape[0], dtype=np.uint8)
    return np.bitwise_xor.reduce(MUL_TABLE[m, v[None, :]], axis=1)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b over the field; a is (r, k), b is (k, c)."""
    r, k = a.shape
    k2, c = b.shape
    if k != k2:
        raise ValueError("inner dimensions differ: %d vs %d" % (k, k2))
    if k == 0 or r == 0 or c == 0:
        return np.zeros((r, c), dtype=np.uint8)
    # (r, k, c) intermediate; callers keep k modest so this stays small.
    return np.bitwise_xor.reduce(MUL_TABLE[a[:, :, None], b[None, :, :]], axis=1)


def row_reduce(m: np.ndarray):
    """Reduced row echelon form.

    Returns (rref, pivot_columns). Pivoting picks the first row with a
    nonzero entry in the current column; there is no magnitude to compare in
    a finite field.
    """
    a = np.array(m, dtype=np.uint8, copy=True)
    if a.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    rows, cols = a.shape
    pivots = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        nz = np.nonzero(a[r:, c])[0]
        if nz.size == 0:
            continue
        p = r + nz[0]
        if p != r:
            a[[r, p]] = a[[p, r]]
        a[r] = MUL_TABLE[_INV[a[r, c]], a[r]]
        others = np.nonzero(a[:, c])[0]
        others = others[others != r]
        if others.size:
            a[others] ^= MUL_TABLE[a[others, c][:, None], a[r][None, :]]
        pivots.append(c)
        r += 1
    return a, tuple(pivots)


def rank(m: np.ndarray) -> int:
    """Number of linearly independent rows."""
    a = np.asarray(m, dtype=np.uint8)
    if a.size == 0:
        return 0
    return len(row_reduce(a)[1])


def solve(a: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Solve a @ x = y for x.

    y may be a vector or a matrix of stacked right-hand sides. Raises
    UnderdeterminedSystemError when rank(a) < columns, and
    InconsistentSystemError when the system admits no solution.
    """
    a = np.asarray(a, dtype=np.uint8)
    y = np.asarray(y, dtype=np.uint8)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[:, None]
    if a.shape[0] != y.shape[0]:
        raise ValueError("a and y disagree on row count")
    cols = a.shape[1]
    aug = np.concatenate([a, y], axis=1)
    red, piv = row_reduce(aug)
    coeff_piv = [p for p in piv if p < cols]
    r = len(coeff_piv)
    # any pivot landing in the rhs block marks a 0 = nonzero row
    if len(piv) > r:
        raise InconsistentSystemError("system has no solution")
    tail = red[r:, cols:]
    if tail.size and np.any(tail):
        raise InconsistentSystemError("system has no solution")
    if r < cols:
        raise UnderdeterminedSystemError(
            "rank %d < %d unknowns" % (r, cols)
        )
    x = red[:cols, cols:]
    return x[:, 0] if squeeze else x


class IncrementalEchelon:
    """Maintains an RREF basis row by row for cheap innovation tests.

    add() reduces the candidate against the stored basis and reports whether
    it enlarged the span. Width is fixed at construction; capacity grows on
    demand (used both for per-batch 16-wide filters and for wide late-stage
    systems).
    """

    def __init__(self, width: int, capacity: int = 16):
        self.width = width
        self._rows = np.zeros((max(capacity, 1), width), dtype=np.uint8)
        self._pivots = np.zeros(max(capacity, 1), dtype=np.int64)
        self.rank = 0

    def _reduce(self, row: np.ndarray) -> np.ndarray:
        if self.rank:
            rows = self._rows[: self.rank]
            factors = row[self._pivots[: self.rank]]
            if np.any(factors):
                row = row ^ np.bitwise_xor.reduce(
                    MUL_TABLE[factors[:, None], rows], axis=0
                )
        return row

    def contains(self, row: np.ndarray) -> bool:
        """True if row already lies in the stored span."""
        return not np.any(self._reduce(np.asarray(row, dtype=np.uint8).copy()))

    def add(self, row: np.ndarray) -> bool:
        """Insert row; True iff it was independent of the stored basis."""
        row = self._reduce(np.asarray(row, dtype=np.uint8).copy())
        nz = np.nonzero(row)[0]
        if nz.size == 0:
            return False
        p = nz[0]
        row = MUL_TABLE[_INV[row[p]], row]
        if self.rank == len(self._rows):
            grown = np.zeros((2 * len(self._rows), self.width), dtype=np.uint8)
            grown[: self.rank] = self._rows[: self.rank]
            self._rows = grown
            gp = np.zeros(2 * len(self._pivots), dtype=np.int64)
            gp[: self.rank] = self._pivots[: self.rank]
            self._pivots = gp
        if self.rank:
            rows = self._rows[: self.rank]
            f = rows[:, p]
            hit = np.nonzero(f)[0]
            if hit.size:
                rows[hit] ^= MUL_TABLE[f[hit][:, None], row[None, :]]
        self._rows[self.rank] = row
        self._pivots[self.rank] = p
        self.rank += 1
        return True
