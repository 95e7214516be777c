"""Monte-Carlo logical error rates with flagged / unflagged / degenerate bookkeeping."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .bp import DEFAULT_EPS, TannerGraph, bp_decode_batch, hard_decision, prior_llr
from .codes import CssCode, Sector
from .gf2 import BitMatrix, in_rowspace, in_rowspace_many
from .nbp import NbpModel, nbp_marginals

BLOCK = 4096
SWEEP_HEADER = ["p_err", "trials", "flagged", "unflagged", "success_exact",
                "success_degenerate", "total_failure_rate", "ci_low", "ci_high"]


class Outcome(Enum):
    SUCCESS_EXACT = 0
    SUCCESS_DEGENERATE = 1
    FLAGGED = 2
    UNFLAGGED = 3


def sample_error(n: int, p: float, rng) -> np.ndarray:
    if not 0 <= p < 1:
        raise ValueError("need 0 <= p < 1")
    return (rng.random(n) < p).astype(np.uint8)


def classify_outcome(e, e_inf, sector_check: BitMatrix, stabilizers: BitMatrix) -> Outcome:
    e = np.asarray(e, dtype=np.uint8)
    e_inf = np.asarray(e_inf, dtype=np.uint8)
    if e.shape != e_inf.shape or e.size != sector_check.cols or e.size != stabilizers.cols:
        raise ValueError("error, correction and matrices disagree in length")
    tot = e ^ e_inf
    if ((sector_check.dense.astype(np.int64) @ tot) & 1).any():
        return Outcome.FLAGGED
    if not tot.any():
        return Outcome.SUCCESS_EXACT
    if in_rowspace(stabilizers, tot):
        return Outcome.SUCCESS_DEGENERATE
    return Outcome.UNFLAGGED


def classify_batch(errors: np.ndarray, inferred: np.ndarray, sector: Sector) -> np.ndarray:
    """Outcome codes (``Outcome.value``) for rows of errors/corrections."""
    tot = (errors ^ inferred).astype(np.uint8)
    out = np.full(tot.shape[0], Outcome.SUCCESS_EXACT.value, dtype=np.int64)
    flagged = sector.syndrome(tot).any(axis=1)
    out[flagged] = Outcome.FLAGGED.value
    rest = np.flatnonzero(~flagged & tot.any(axis=1))
    if rest.size:
        stab = in_rowspace_many(sector.stabilizers, tot[rest])
        out[rest] = np.where(stab, Outcome.SUCCESS_DEGENERATE.value, Outcome.UNFLAGGED.value)
    return out


@dataclass
class OutcomeTally:
    trials: int = 0
    flagged: int = 0
    unflagged: int = 0
    success_exact: int = 0
    success_degenerate: int = 0

    @property
    def failures(self) -> int:
        return self.flagged + self.unflagged

    @property
    def failure_rate(self) -> float:
        return self.failures / self.trials if self.trials else 0.0

    def add_codes(self, codes: np.ndarray) -> None:
        counts = np.bincount(codes, minlength=4)
        self.trials += int(codes.size)
        self.success_exact += int(counts[Outcome.SUCCESS_EXACT.value])
        self.success_degenerate += int(counts[Outcome.SUCCESS_DEGENERATE.value])
        self.flagged += int(counts[Outcome.FLAGGED.value])
        self.unflagged += int(counts[Outcome.UNFLAGGED.value])

    def merge(self, other: "OutcomeTally") -> "OutcomeTally":
        return OutcomeTally(self.trials + other.trials, self.flagged + other.flagged,
                            self.unflagged + other.unflagged,
                            self.success_exact + other.success_exact,
                            self.success_degenerate + other.success_degenerate)

    def wilson(self, z: float = 1.96) -> tuple[float, float]:
        return wilson_interval(self.failures, self.trials, z)


def wilson_interval(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n < 1 or not 0 <= k <= n:
        raise ValueError("need n >= 1 and 0 <= k <= n")
    phat = k / n
    z2 = z * z
    denom = 1 + z2 / n
    center = (phat + z2 / (2 * n)) / denom
    half = z / denom * math.sqrt(phat * (1 - phat) / n + z2 / (4 * n * n))
    lo = 0.0 if k == 0 else max(0.0, center - half)
    hi = 1.0 if k == n else min(1.0, center + half)
    return lo, hi


# ---------------------------------------------------------------- decoders

class BPDecoder:
    """Untrained BP with a fixed iteration count and no early stopping."""

    def __init__(self, graph: TannerGraph, iterations: int, eps: float = DEFAULT_EPS):
        self.graph = graph
        self.iterations = iterations
        self.eps = eps
        self.label = f"bp_T{iterations}"

    def marginals(self, syndromes, priors) -> np.ndarray:
        return bp_decode_batch(self.graph, syndromes, priors, self.iterations, self.eps)


class NBPDecoder:
    """Trained (or identity) neural BP read out after its final cycle."""

    def __init__(self, model: NbpModel):
        self.model = model
        self.graph = model.graph
        self.label = f"nbp_Nc{model.n_cycles}"

    def marginals(self, syndromes, priors) -> np.ndarray:
        return nbp_marginals(self.model, syndromes, priors)


def _block_rng(seed, block: int) -> np.random.Generator:
    key = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    return np.random.default_rng([int(s) for s in key] + [block])


def _run_block(decoder, sector: Sector, p: float, llr: float, size: int, seed, block: int):
    rng = _block_rng(seed, block)
    errors = (rng.random((size, sector.n)) < p).astype(np.uint8)
    tally = OutcomeTally()
    if p == 0:
        tally.add_codes(np.zeros(size, dtype=np.int64))
        return tally
    syn = sector.syndrome(errors)
    pri = np.full((size, sector.n), llr)
    mu = decoder.marginals(syn, pri)
    tally.add_codes(classify_batch(errors, hard_decision(mu), sector))
    return tally


def monte_carlo(decoder, code: CssCode, sector: str, p: float, trials: int, seed=0,
                workers: int = 1) -> OutcomeTally:
    """Sample, decode and classify ``trials`` independent errors at rate ``p``.

    Trials are processed in fixed blocks of ``BLOCK`` whose random streams are
    derived from ``(seed, block index)``, so results do not depend on ``workers``.
    With the joint sector, a trial is flagged if either half is flagged,
    unflagged if either half has a logical error, and exact only if both are.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    sec = code.sector(sector)
    if decoder.graph.H != sec.check:
        raise ValueError("decoder graph does not match the code sector")
    llr = prior_llr(p) if p > 0 else 0.0
    sizes = [min(BLOCK, trials - b * BLOCK) for b in range(math.ceil(trials / BLOCK))]

    def job(b):
        return _run_block(decoder, sec, p, llr, sizes[b], seed, b)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(job, range(len(sizes))))
    else:
        parts = [job(b) for b in range(len(sizes))]
    total = OutcomeTally()
    for part in parts:
        total = total.merge(part)
    return total


@dataclass
class SweepResult:
    decoder: str
    code: str
    seed: object
    rates: list = field(default_factory=list)
    tallies: list = field(default_factory=list)

    def rows(self) -> list[list]:
        out = []
        for p, t in zip(self.rates, self.tallies):
            lo, hi = t.wilson()
            out.append([format(p, ".6g"), t.trials, t.flagged, t.unflagged, t.success_exact,
                        t.success_degenerate, format(t.failure_rate, ".17g"),
                        format(lo, ".17g"), format(hi, ".17g")])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        w.writerows(self.rows())
        return buf.getvalue()


def compare_csv(results: list[SweepResult]) -> str:
    """Rows of several sweeps interleaved per rate, with a leading decoder column."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["decoder"] + SWEEP_HEADER)
    rows = [r.rows() for r in results]
    for i in range(len(results[0].rates)):
        for r, rr in zip(results, rows):
            w.writerow([r.decoder] + rr[i])
    return buf.getvalue()


def sweep(decoder, code: CssCode, sector: str, p_list, trials_per_point: int, seed=0,
          workers: int = 1) -> SweepResult:
    rates = [float(p) for p in p_list]
    if not rates or any(b <= a for a, b in zip(rates, rates[1:])):
        raise ValueError("rates must be nonempty and strictly increasing")
    base = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    res = SweepResult(decoder.label, code.name, seed)
    for i, p in enumerate(rates):
        res.rates.append(p)
        res.tallies.append(monte_carlo(decoder, code, sector, p, trials_per_point,
                                       seed=base + [i], workers=workers))
    return res
