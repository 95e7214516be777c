"""Shared fixtures and brute-force oracles.

The oracles here deliberately avoid the package's own linear algebra and
message passing: they enumerate.
"""
import itertools
import sys

import numpy as np
import pytest

from qnbp.bp import TannerGraph
from qnbp.codes import toric_code
from qnbp.gf2 import BitMatrix


# ---------------------------------------------------------------- oracles

def span_by_enumeration(rows: np.ndarray) -> set[bytes]:
    """All GF(2) combinations of ``rows`` as byte strings."""
    rows = np.asarray(rows, dtype=np.uint8)
    out = set()
    for mask in itertools.product((0, 1), repeat=rows.shape[0]):
        v = np.zeros(rows.shape[1], dtype=np.uint8)
        for m, r in zip(mask, rows):
            if m:
                v ^= r
        out.add(v.tobytes())
    return out


def rank_by_enumeration(rows: np.ndarray) -> int:
    return int(np.log2(len(span_by_enumeration(rows))))


def posterior_llr(H: np.ndarray, syndrome: np.ndarray, p: float) -> np.ndarray:
    """Exact per-bit LLRs ln P(e_v=0|s)/P(e_v=1|s) by enumerating all 2^n errors."""
    H = np.asarray(H, dtype=np.int64)
    n = H.shape[1]
    errs = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int64)
    ok = np.all((errs @ H.T) % 2 == np.asarray(syndrome), axis=1)
    w = errs[ok].sum(axis=1)
    like = p ** w * (1 - p) ** (n - w)
    p1 = (like[:, None] * errs[ok]).sum(axis=0)
    p0 = like.sum() - p1
    return np.log(p0) - np.log(p1)


def random_tree_code(n: int, rng) -> np.ndarray:
    """Parity-check matrix whose Tanner graph is a tree on ``n`` variables."""
    checks = []
    have = 1
    while have < n:
        new = int(min(rng.integers(1, 4), n - have))
        anchor = int(rng.integers(0, have))
        checks.append([anchor] + list(range(have, have + new)))
        have += new
    H = np.zeros((len(checks), n), dtype=np.uint8)
    for c, vs in enumerate(checks):
        H[c, vs] = 1
    return H


# ---------------------------------------------------------------- fixtures

@pytest.fixture(scope="session")
def toric2():
    return toric_code(2)


@pytest.fixture(scope="session")
def toric4():
    return toric_code(4)


@pytest.fixture(scope="session")
def rep3():
    return BitMatrix.from_dense([[1, 1, 0], [0, 1, 1]])


@pytest.fixture(scope="session")
def toric2_xz_graph(toric2):
    return TannerGraph(toric2.sector("xz").check)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
