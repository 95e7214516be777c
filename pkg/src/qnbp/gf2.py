"""Bit-packed linear algebra over GF(2).

Matrices are stored row-major in 64-bit words; row elimination works on
whole words with XOR.  The symplectic form used for Pauli strings is never
materialized: it is applied as a swap of the two column halves.
"""
from __future__ import annotations

import json
from functools import cached_property

import numpy as np

WORD = 64


def _n_words(ncols: int) -> int:
    return (ncols + WORD - 1) // WORD


def _pack(dense: np.ndarray) -> np.ndarray:
    """Pack a 2-D 0/1 array into (rows, words) uint64, bit j of word w = column 64*w + j."""
    rows, cols = dense.shape
    nw = _n_words(cols)
    padded = np.zeros((rows, nw * WORD), dtype=np.uint8)
    padded[:, :cols] = dense
    b = np.packbits(padded.reshape(rows, nw, WORD), axis=2, bitorder="little")
    return np.ascontiguousarray(b).view(np.uint64).reshape(rows, nw)


def _unpack(words: np.ndarray, cols: int) -> np.ndarray:
    rows = words.shape[0]
    if rows == 0:
        return np.zeros((0, cols), dtype=np.uint8)
    b = np.ascontiguousarray(words).view(np.uint8).reshape(rows, -1)
    return np.unpackbits(b, axis=1, bitorder="little")[:, :cols]


def _as_bits(v) -> np.ndarray:
    if isinstance(v, BitVector):
        return v.to_array()
    a = np.asarray(v)
    if a.ndim != 1:
        raise ValueError("expected a 1-D bit vector")
    return (a.astype(np.int64) & 1).astype(np.uint8)


class BitMatrix:
    """Immutable dense GF(2) matrix with bit-packed rows."""

    def __init__(self, rows: int, cols: int, words: np.ndarray):
        if words.shape != (rows, _n_words(cols)):
            raise ValueError("packed storage does not match shape")
        self.rows = int(rows)
        self.cols = int(cols)
        self._words = words
        self._words.setflags(write=False)

    @classmethod
    def from_dense(cls, dense) -> "BitMatrix":
        a = np.asarray(dense)
        if a.ndim == 1:
            a = a.reshape(1, -1) if a.size else a.reshape(0, 0)
        if a.ndim != 2:
            raise ValueError("expected a 2-D array")
        a = (a.astype(np.int64) & 1).astype(np.uint8)
        return cls(a.shape[0], a.shape[1], _pack(a))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "BitMatrix":
        return cls(rows, cols, np.zeros((rows, _n_words(cols)), dtype=np.uint64))

    @classmethod
    def identity(cls, n: int) -> "BitMatrix":
        return cls.from_dense(np.eye(n, dtype=np.uint8))

    @classmethod
    def from_support(cls, rows: int, cols: int, row_support) -> "BitMatrix":
        if len(row_support) != rows:
            raise ValueError(f"expected {rows} rows of support, got {len(row_support)}")
        dense = np.zeros((rows, cols), dtype=np.uint8)
        for i, supp in enumerate(row_support):
            for j in supp:
                if not 0 <= j < cols:
                    raise IndexError(f"column {j} out of range for {cols} columns")
                dense[i, j] = 1
        return cls.from_dense(dense)

    @property
    def words(self) -> np.ndarray:
        return self._words

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @cached_property
    def dense(self) -> np.ndarray:
        """Read-only uint8 view of the matrix, cached."""
        d = _unpack(self._words, self.cols)
        d.setflags(write=False)
        return d

    def to_dense(self) -> np.ndarray:
        return self.dense.copy()

    def __getitem__(self, idx):
        i, j = idx
        if not (0 <= i < self.rows and 0 <= j < self.cols):
            raise IndexError(f"({i}, {j}) out of range for {self.rows}x{self.cols}")
        return int((self._words[i, j // WORD] >> np.uint64(j % WORD)) & np.uint64(1))

    def row(self, i: int) -> "BitVector":
        if not 0 <= i < self.rows:
            raise IndexError(f"row {i} out of range")
        return BitVector(self.cols, self._words[i].copy())

    def row_support(self) -> list[list[int]]:
        return [np.flatnonzero(r).tolist() for r in self.dense]

    def row_weights(self) -> np.ndarray:
        return self.dense.sum(axis=1, dtype=np.int64)

    def col_weights(self) -> np.ndarray:
        return self.dense.sum(axis=0, dtype=np.int64)

    @property
    def T(self) -> "BitMatrix":
        return BitMatrix.from_dense(self.dense.T)

    def transpose(self) -> "BitMatrix":
        return self.T

    def swap_halves(self) -> "BitMatrix":
        """Columns permuted by the symplectic half-swap, i.e. ``self @ M``."""
        if self.cols % 2:
            raise ValueError("half-swap needs an even column count")
        n = self.cols // 2
        d = self.dense
        return BitMatrix.from_dense(np.concatenate([d[:, n:], d[:, :n]], axis=1))

    def hstack(self, other: "BitMatrix") -> "BitMatrix":
        if self.rows != other.rows:
            raise ValueError("row counts differ")
        return BitMatrix.from_dense(np.concatenate([self.dense, other.dense], axis=1))

    def vstack(self, other: "BitMatrix") -> "BitMatrix":
        if self.cols != other.cols:
            raise ValueError("column counts differ")
        return BitMatrix.from_dense(np.concatenate([self.dense, other.dense], axis=0))

    def __matmul__(self, other):
        if isinstance(other, BitMatrix):
            return gf2_matmul(self, other)
        return NotImplemented

    def __eq__(self, other):
        if not isinstance(other, BitMatrix):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._words, other._words)

    def __hash__(self):
        return hash((self.rows, self.cols, self._words.tobytes()))

    def __repr__(self):
        return f"BitMatrix({self.rows}x{self.cols}, weight={int(self.row_weights().sum())})"

    def is_zero(self) -> bool:
        return not self._words.any()

    @cached_property
    def _rref(self):
        return _rref_words(self._words.copy(), self.cols)

    @property
    def rank(self) -> int:
        return self._rref[2]

    # JSON row-support format shared by all file formats.
    def to_json_obj(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "row_support": self.row_support()}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "BitMatrix":
        try:
            rows, cols, supp = int(obj["rows"]), int(obj["cols"]), obj["row_support"]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed BitMatrix object: {exc}") from None
        return cls.from_support(rows, cols, supp)

    def dumps(self) -> str:
        return json.dumps(self.to_json_obj())

    @classmethod
    def loads(cls, text: str) -> "BitMatrix":
        return cls.from_json_obj(json.loads(text))


class BitVector:
    """Bit-packed GF(2) vector."""

    __slots__ = ("len", "_words")

    def __init__(self, length: int, words: np.ndarray):
        self.len = int(length)
        self._words = words

    @classmethod
    def from_array(cls, bits) -> "BitVector":
        a = _as_bits(bits)
        return cls(a.size, _pack(a.reshape(1, -1))[0])

    @classmethod
    def from_support(cls, length: int, support) -> "BitVector":
        a = np.zeros(length, dtype=np.uint8)
        for j in support:
            if not 0 <= j < length:
                raise IndexError(f"bit {j} out of range for length {length}")
            a[j] = 1
        return cls.from_array(a)

    @classmethod
    def zeros(cls, length: int) -> "BitVector":
        return cls(length, np.zeros(_n_words(length), dtype=np.uint64))

    def to_array(self) -> np.ndarray:
        return _unpack(self._words.reshape(1, -1), self.len)[0]

    def weight(self) -> int:
        return int(self.to_array().sum())

    def __len__(self):
        return self.len

    def __getitem__(self, j: int) -> int:
        if not 0 <= j < self.len:
            raise IndexError(f"bit {j} out of range for length {self.len}")
        return int((self._words[j // WORD] >> np.uint64(j % WORD)) & np.uint64(1))

    def __add__(self, other: "BitVector") -> "BitVector":
        if self.len != other.len:
            raise ValueError("length mismatch")
        return BitVector(self.len, self._words ^ other._words)

    def __eq__(self, other):
        if not isinstance(other, BitVector):
            return NotImplemented
        return self.len == other.len and np.array_equal(self._words, other._words)

    def __hash__(self):
        return hash((self.len, self._words.tobytes()))

    def __repr__(self):
        return f"BitVector({''.join(map(str, self.to_array()))})"


def _rref_words(w: np.ndarray, cols: int):
    """In-place Gauss-Jordan elimination on packed rows."""
    rows = w.shape[0]
    pivots = []
    r = 0
    for c in range(cols):
        if r >= rows:
            break
        word, bit = divmod(c, WORD)
        colbits = (w[r:, word] >> np.uint64(bit)) & np.uint64(1)
        nz = np.flatnonzero(colbits)
        if nz.size == 0:
            continue
        p = r + int(nz[0])
        if p != r:
            w[[r, p]] = w[[p, r]]
        hits = np.flatnonzero((w[:, word] >> np.uint64(bit)) & np.uint64(1))
        hits = hits[hits != r]
        if hits.size:
            w[hits] ^= w[r]
        pivots.append(c)
        r += 1
    return w, pivots, r


def gf2_rref(M: BitMatrix) -> tuple[BitMatrix, list[int], int]:
    """Reduced row-echelon form over GF(2).

    Returns the reduced matrix (same shape, zero rows at the bottom), the
    pivot columns and the rank.
    """
    w, pivots, rank = M._rref
    return BitMatrix(M.rows, M.cols, w.copy()), list(pivots), rank


def gf2_rank(M: BitMatrix) -> int:
    return M.rank


def gf2_nullspace(M: BitMatrix) -> BitMatrix:
    """Basis (as rows) of {x : M x = 0}; one row per free column of the RREF."""
    w, pivots, rank = M._rref
    n = M.cols
    free = [c for c in range(n) if c not in set(pivots)]
    basis = np.zeros((len(free), n), dtype=np.uint8)
    R = _unpack(w[:rank], n) if rank else np.zeros((0, n), dtype=np.uint8)
    for i, f in enumerate(free):
        basis[i, f] = 1
        if rank:
            basis[i, pivots] = R[:, f]
    return BitMatrix.from_dense(basis) if free else BitMatrix.zeros(0, n)


def gf2_matmul(A: BitMatrix, B: BitMatrix) -> BitMatrix:
    if A.cols != B.rows:
        raise ValueError(f"dimension mismatch: {A.shape} @ {B.shape}")
    prod = A.dense.astype(np.int64) @ B.dense.astype(np.int64)
    return BitMatrix.from_dense(prod & 1)


def symplectic_product(a, b) -> int:
    """aᵀ M b mod 2 with M the half-swap; 1 iff the Pauli strings anticommute."""
    x, y = _as_bits(a), _as_bits(b)
    if x.size != y.size:
        raise ValueError("length mismatch")
    if x.size % 2:
        raise ValueError("symplectic vectors need even length")
    n = x.size // 2
    xi, yi = x.astype(np.int64), y.astype(np.int64)
    return int((xi[:n] @ yi[n:] + xi[n:] @ yi[:n]) & 1)


def normalizer_basis(H: BitMatrix) -> BitMatrix:
    """Rows spanning the symplectic complement {x : H M x = 0}."""
    if H.cols % 2:
        raise ValueError("stabilizer matrix needs an even column count")
    return gf2_nullspace(H.swap_halves())


def _reduce(M: BitMatrix, vw: np.ndarray) -> np.ndarray:
    """Reduce packed vectors (k, words) against the cached RREF of M."""
    w, pivots, rank = M._rref
    for i in range(rank):
        word, bit = divmod(pivots[i], WORD)
        hit = ((vw[:, word] >> np.uint64(bit)) & np.uint64(1)).astype(bool)
        if hit.any():
            vw[hit] ^= w[i]
    return vw


def in_rowspace(M: BitMatrix, v) -> bool:
    """True iff v is a GF(2) combination of the rows of M."""
    a = _as_bits(v)
    if a.size != M.cols:
        raise ValueError(f"vector length {a.size} != {M.cols} columns")
    return bool(in_rowspace_many(M, a.reshape(1, -1))[0])


def in_rowspace_many(M: BitMatrix, V) -> np.ndarray:
    """Row-wise membership test for a 2-D 0/1 array of candidate vectors."""
    V = np.asarray(V)
    if V.ndim != 2 or V.shape[1] != M.cols:
        raise ValueError(f"expected vectors of length {M.cols}")
    if V.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    vw = _pack((V.astype(np.int64) & 1).astype(np.uint8))
    return ~_reduce(M, vw).any(axis=1)
