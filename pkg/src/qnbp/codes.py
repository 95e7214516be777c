"""Quantum CSS code families and their classical building blocks.

Conventions
-----------
``A`` holds X-type stabilizer supports (they detect Z errors) and ``B``
holds Z-type stabilizer supports (they detect X errors).  For an error
``e = (e_x | e_z)`` the syndrome is ``(A e_z, B e_x)``, which is ``H M e``
for ``H = diag(A, B)`` and ``M`` the half-swap.

Decoding happens per *sector*:

* ``"x"``  -- X errors, Tanner graph of ``B``, stabilizer equivalence by ``A``;
* ``"z"``  -- Z errors, Tanner graph of ``A``, stabilizer equivalence by ``B``;
* ``"xz"`` -- both at once on ``diag(B, A)`` over ``(e_x | e_z)``.

The joint sector is the disjoint union of the other two.  Its loss matrix
``diag(null(A), null(B))`` spans the same space as the full normalizer
``H⊥`` taken through ``M``:  a Pauli ``(x | z)`` commutes with every
stabilizer iff ``B x = 0`` and ``A z = 0``, so ``H⊥ M (e_x | e_z)`` is the
pair ``(null(A) e_x, null(B) e_z)`` up to a change of basis.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gf2 import BitMatrix, gf2_matmul, gf2_nullspace

SECTORS = ("x", "z", "xz")


class ConstructionError(RuntimeError):
    """A randomized construction exhausted its retry budget."""


@dataclass(frozen=True)
class ClassicalCode:
    name: str
    H: BitMatrix

    @property
    def n(self) -> int:
        return self.H.cols

    @property
    def k(self) -> int:
        return self.H.cols - self.H.rank

    def generator_matrix(self) -> BitMatrix:
        return gf2_nullspace(self.H)

    def codewords(self) -> np.ndarray:
        """All 2**k codewords as rows (only sensible for small k)."""
        G = self.generator_matrix().dense.astype(np.int64)
        k = G.shape[0]
        if k > 20:
            raise ValueError(f"refusing to enumerate 2**{k} codewords")
        msgs = (np.arange(2**k)[:, None] >> np.arange(k)[None, :]) & 1
        return ((msgs @ G) & 1).astype(np.uint8)

    def minimum_distance(self) -> int:
        w = self.codewords().sum(axis=1)
        w = w[w > 0]
        return int(w.min()) if w.size else 0


# ---------------------------------------------------------------- toric lattice

@dataclass(frozen=True)
class ToricLattice:
    """Edge and face bookkeeping for the L x L periodic square lattice.

    Horizontal edge ``(x, y)`` joins vertices ``(x, y)`` and ``(x+1, y)``;
    vertical edge ``(x, y)`` joins ``(x, y)`` and ``(x, y+1)``.  Plaquette
    ``(x, y)`` has corners ``(x, y)`` and ``(x+1, y+1)``.  Edges are indexed
    horizontal-first, row-major: ``h(x, y) = y L + x``, ``v(x, y) = L² + y L + x``.
    """

    L: int

    def edge_index(self, x: int, y: int, orientation: str) -> int:
        L = self.L
        base = 0 if orientation == "h" else L * L
        return base + (y % L) * L + (x % L)

    def edge_coord(self, e: int) -> tuple[int, int, str]:
        L = self.L
        orient = "h" if e < L * L else "v"
        r = e % (L * L)
        return r % L, r // L, orient

    def site_index(self, x: int, y: int) -> int:
        return (y % self.L) * self.L + (x % self.L)

    def vertex_edges(self, x: int, y: int) -> list[tuple[int, tuple[int, int]]]:
        """Edges touching vertex (x, y) with the vertex offset relative to each edge."""
        e = self.edge_index
        return [(e(x, y, "h"), (0, 0)), (e(x - 1, y, "h"), (1, 0)),
                (e(x, y, "v"), (0, 0)), (e(x, y - 1, "v"), (0, 1))]

    def plaquette_edges(self, x: int, y: int) -> list[tuple[int, tuple[int, int]]]:
        """Edges bounding plaquette (x, y) with the plaquette offset relative to each edge."""
        e = self.edge_index
        return [(e(x, y, "h"), (0, 0)), (e(x, y + 1, "h"), (0, -1)),
                (e(x, y, "v"), (0, 0)), (e(x + 1, y, "v"), (-1, 0))]

    def check_offsets(self, kind: str) -> dict[tuple[int, int], tuple[int, int]]:
        """Map (check, edge) -> offset of the check from the edge, for ``kind`` in {"vertex", "plaquette"}."""
        L = self.L
        incident = self.vertex_edges if kind == "vertex" else self.plaquette_edges
        out = {}
        for y in range(L):
            for x in range(L):
                c = self.site_index(x, y)
                for e, off in incident(x, y):
                    out[(c, e)] = off
        return out


# ---------------------------------------------------------------- CSS codes

@dataclass(frozen=True)
class Sector:
    """One decoding problem of a CSS code; see the module docstring.

    ``loss_matrix`` rows have even parity on a correction residual exactly
    when that residual is stabilizer-equivalent to zero.
    """

    name: str
    check: BitMatrix
    stabilizers: BitMatrix
    loss_matrix: BitMatrix

    @property
    def n(self) -> int:
        return self.check.cols

    def syndrome(self, errors: np.ndarray) -> np.ndarray:
        """Syndromes of one error (1-D) or a batch of errors (rows)."""
        e = np.asarray(errors)
        return ((e.astype(np.int64) @ self.check.dense.T.astype(np.int64)) & 1).astype(np.uint8)


def _block_diag(a: BitMatrix, b: BitMatrix) -> BitMatrix:
    d = np.zeros((a.rows + b.rows, a.cols + b.cols), dtype=np.uint8)
    d[:a.rows, :a.cols] = a.dense
    d[a.rows:, a.cols:] = b.dense
    return BitMatrix.from_dense(d)


@dataclass(frozen=True)
class CssCode:
    name: str
    A: BitMatrix
    B: BitMatrix
    lattice: ToricLattice | None = None
    seed: int | None = None
    _sectors: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.A.cols != self.B.cols:
            raise ValueError("A and B must act on the same number of qubits")

    @property
    def n(self) -> int:
        return self.A.cols

    @property
    def k(self) -> int:
        return self.n - self.A.rank - self.B.rank

    def commutes(self) -> bool:
        return gf2_matmul(self.A, self.B.T).is_zero()

    @property
    def H(self) -> BitMatrix:
        """Full symplectic stabilizer matrix diag(A, B) over (x | z) columns."""
        return _block_diag(self.A, self.B)

    def sector(self, name: str) -> Sector:
        if name not in SECTORS:
            raise ValueError(f"unknown sector {name!r}; expected one of {SECTORS}")
        if name not in self._sectors:
            if name == "x":
                s = Sector("x", self.B, self.A, gf2_nullspace(self.A))
            elif name == "z":
                s = Sector("z", self.A, self.B, gf2_nullspace(self.B))
            else:
                s = Sector("xz", _block_diag(self.B, self.A), _block_diag(self.A, self.B),
                           _block_diag(gf2_nullspace(self.A), gf2_nullspace(self.B)))
            self._sectors[name] = s
        return self._sectors[name]

    def to_json_obj(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "A": self.A.to_json_obj(),
            "B": self.B.to_json_obj(),
            "lattice": {"L": self.lattice.L} if self.lattice else None,
            "seed": self.seed,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "CssCode":
        try:
            A = BitMatrix.from_json_obj(obj["A"])
            B = BitMatrix.from_json_obj(obj["B"])
            name = str(obj["name"])
            n = int(obj["n"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed code file: {exc}") from None
        if A.cols != n or B.cols != n:
            raise ValueError("code file: matrix widths disagree with n")
        lat = obj.get("lattice")
        lattice = ToricLattice(int(lat["L"])) if lat else None
        return cls(name, A, B, lattice=lattice, seed=obj.get("seed"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_obj()) + "\n")

    @classmethod
    def load(cls, path) -> "CssCode":
        return cls.from_json_obj(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- constructors

def toric_code(L: int) -> CssCode:
    if L < 2:
        raise ValueError("toric code needs L >= 2")
    lat = ToricLattice(L)
    n = 2 * L * L
    A = np.zeros((L * L, n), dtype=np.uint8)
    B = np.zeros((L * L, n), dtype=np.uint8)
    for y in range(L):
        for x in range(L):
            c = lat.site_index(x, y)
            for e, _ in lat.vertex_edges(x, y):
                A[c, e] = 1
            for e, _ in lat.plaquette_edges(x, y):
                B[c, e] = 1
    return CssCode(f"toric_L{L}", BitMatrix.from_dense(A), BitMatrix.from_dense(B), lattice=lat)


def _poly_divmod(num: list[int], den: list[int]) -> tuple[list[int], list[int]]:
    """GF(2) polynomial division; coefficient lists in ascending powers."""
    num = list(num)
    dd = max(i for i, c in enumerate(den) if c)
    q = [0] * max(len(num) - dd, 1)
    for i in range(len(num) - 1, dd - 1, -1):
        if num[i]:
            q[i - dd] = 1
            for j in range(dd + 1):
                num[i - dd + j] ^= den[j]
    return q, num[:dd]


def cyclic_parity_check(n: int, g, name: str | None = None) -> ClassicalCode:
    """Parity-check matrix of the length-n cyclic code generated by ``g``.

    ``g`` lists coefficients in ascending powers (``g[i]`` multiplies x^i).
    Row r of H holds the reversed check polynomial h(x) = (xⁿ - 1)/g(x)
    starting at column r.
    """
    g = [int(c) & 1 for c in g]
    while g and not g[-1]:
        g.pop()
    if not g or not g[0] and len(g) == 1:
        raise ValueError("generator polynomial must be nonzero")
    r = len(g) - 1
    if r > n:
        raise ValueError("generator degree exceeds block length")
    xn1 = [1] + [0] * (n - 1) + [1]
    h, rem = _poly_divmod(xn1, g)
    if any(rem):
        raise ValueError(f"g does not divide x^{n} - 1")
    k = n - r
    h = (h + [0] * (k + 1))[:k + 1]
    H = np.zeros((r, n), dtype=np.uint8)
    for row in range(r):
        for i in range(k + 1):
            H[row, row + i] = h[k - i]
    return ClassicalCode(name or f"cyclic_{n}_{k}", BitMatrix.from_dense(H))


def hamming_743() -> ClassicalCode:
    return cyclic_parity_check(7, [1, 1, 0, 1], name="hamming743")


def bch_1575() -> ClassicalCode:
    # (x^4+x+1)(x^4+x^3+x^2+x+1) = x^8+x^7+x^6+x^4+1
    return cyclic_parity_check(15, [1, 0, 0, 0, 1, 0, 1, 1, 1], name="bch1575")


def parity_code(n: int) -> ClassicalCode:
    return cyclic_parity_check(n, [1, 1], name=f"parity{n}")


CLASSICAL_CODES = {
    "hamming743": hamming_743,
    "bch1575": bch_1575,
    "parity3": lambda: parity_code(3),
}


def circulant(first_col: np.ndarray) -> np.ndarray:
    """Column c is ``first_col`` cyclically shifted down by c positions."""
    a = np.asarray(first_col, dtype=np.uint8)
    return np.stack([np.roll(a, c) for c in range(a.size)], axis=1)


def bicycle_code(N: int, K: int, w: int, seed=None, max_retries: int = 100) -> CssCode:
    """Random quantum bicycle code [[N, K]] from a weight-w seed vector.

    Rank deficiency after row removal is handled by redrawing the removed
    rows (same seed vector) up to ``max_retries`` times, then redrawing the
    seed vector, up to ``max_retries`` times.
    """
    if N % 2 or K % 2:
        raise ValueError("N and K must be even")
    if not 0 < w <= N // 2:
        raise ValueError("need 0 < w <= N/2")
    if not 0 <= K < N:
        raise ValueError("need 0 <= K < N")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    half = N // 2
    keep = half - K // 2
    for _ in range(max_retries):
        a = np.zeros(half, dtype=np.uint8)
        a[rng.choice(half, size=w, replace=False)] = 1
        C = circulant(a)
        H0 = np.concatenate([C, C.T], axis=1)
        for _ in range(max_retries):
            rows = np.sort(rng.choice(half, size=keep, replace=False))
            M = BitMatrix.from_dense(H0[rows])
            if M.rank == keep:
                s = seed if isinstance(seed, (int, np.integer)) else None
                return CssCode(f"bicycle_{N}_{K}_{w}", M, M, seed=None if s is None else int(s))
    raise ConstructionError(f"bicycle_code({N}, {K}, {w}): retry budget exhausted")


def hypergraph_product(c1: ClassicalCode, c2: ClassicalCode) -> CssCode:
    """Hypergraph product; qubits are ordered (n1 n2 block | m1 m2 block)."""
    H1, H2 = c1.H.dense.astype(np.int64), c2.H.dense.astype(np.int64)
    m1, n1 = H1.shape
    m2, n2 = H2.shape
    HX = np.concatenate([np.kron(H1, np.eye(n2, dtype=np.int64)),
                         np.kron(np.eye(m1, dtype=np.int64), H2.T)], axis=1)
    HZ = np.concatenate([np.kron(np.eye(n1, dtype=np.int64), H2),
                         np.kron(H1.T, np.eye(m2, dtype=np.int64))], axis=1)
    return CssCode(f"hgp_{c1.name}_{c2.name}", BitMatrix.from_dense(HX), BitMatrix.from_dense(HZ))


def validate_css(code: CssCode) -> dict:
    """Summary report; a commutation failure is reported rather than raised."""
    def hist(w):
        return {int(k): int(v) for k, v in sorted(Counter(w.tolist()).items())}

    rA, rB = code.A.rank, code.B.rank
    return {
        "name": code.name,
        "n": code.n,
        "k": code.n - rA - rB,
        "rank_A": rA,
        "rank_B": rB,
        "checks": code.A.rows + code.B.rows,
        "commutes": code.commutes(),
        "A_row_weights": hist(code.A.row_weights()),
        "A_col_weights": hist(code.A.col_weights()),
        "B_row_weights": hist(code.B.row_weights()),
        "B_col_weights": hist(code.B.col_weights()),
    }
