"""Flooding belief propagation on a Tanner graph.

All kernels work on batches: messages are ``(batch, edges)`` float64
arrays, priors ``(batch, n)`` and syndromes ``(batch, m)``.  The
check-to-variable rule is evaluated in the log domain

    |μ_{c→v}| = φ(Σ_{v'≠v} φ(|μ_{v'→c}|)),   φ(x) = -log tanh(x/2),

which equals ``2 atanh(Π tanh(μ/2))`` without ever forming a product close
to one.  Leave-one-out sums use prefix/suffix scans, so no subtraction of
large or infinite terms happens.  Truncating the ``atanh`` argument to
``(-1+ε, 1-ε)`` is a floor ``-log(1-ε)`` on the φ-sum.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .gf2 import BitMatrix

DEFAULT_EPS = 1e-4


class TannerGraph:
    """Bipartite check/variable graph with edges sorted by (check, variable)."""

    def __init__(self, H: BitMatrix):
        if H.rows == 0 or H.cols == 0:
            raise ValueError("Tanner graph of an empty matrix")
        self.H = H
        self.m, self.n = H.shape
        c, v = np.nonzero(H.dense)  # row-major: already sorted by (c, v)
        self.edge_c = c.astype(np.int64)
        self.edge_v = v.astype(np.int64)
        self.n_edges = c.size
        self.edges = list(zip(self.edge_c.tolist(), self.edge_v.tolist()))
        self.edge_index = {e: i for i, e in enumerate(self.edges)}
        order = np.lexsort((np.arange(self.n_edges), self.edge_v))
        self.var_edges = [order[self.edge_v[order] == v] for v in range(self.n)]
        self.check_edges = [np.flatnonzero(self.edge_c == ci) for ci in range(self.m)]
        self.var_degree = np.bincount(self.edge_v, minlength=self.n)
        self.check_degree = np.bincount(self.edge_c, minlength=self.m)

        # padded (m, dmax) layout for check-node scans
        dmax = int(self.check_degree.max())
        slots = np.full((self.m, dmax), -1, dtype=np.int64)
        for ci, es in enumerate(self.check_edges):
            slots[ci, :es.size] = es
        self.check_slots = slots
        self.slot_mask = slots >= 0
        self.slot_index = np.where(self.slot_mask, slots, 0)
        self._slot_pos = np.nonzero(self.slot_mask)
        self._slot_edges = slots[self.slot_mask]

        # ordered edge pairs (c'v -> vc), c' != c, sorted by (v, in, out)
        pin, pout = [], []
        for v in range(self.n):
            es = self.var_edges[v]
            for a in es:
                for b in es:
                    if a != b:
                        pin.append(a)
                        pout.append(b)
        self.pair_in = np.asarray(pin, dtype=np.int64)
        self.pair_out = np.asarray(pout, dtype=np.int64)
        self.pair_v = self.edge_v[self.pair_in] if self.pair_in.size else np.zeros(0, np.int64)
        self.n_pairs = self.pair_in.size

        # sparse (out, in) operator; data permutation recorded once
        ids = np.arange(1, self.n_pairs + 1, dtype=np.float64)
        W = sp.csr_matrix((ids, (self.pair_out, self.pair_in)), shape=(self.n_edges, self.n_edges))
        W.sort_indices()
        self._pair_perm = W.data.astype(np.int64) - 1
        self._W_indices, self._W_indptr = W.indices, W.indptr
        ids = np.arange(1, self.n_edges + 1, dtype=np.float64)
        Mg = sp.csr_matrix((ids, (self.edge_v, np.arange(self.n_edges))), shape=(self.n, self.n_edges))
        Mg.sort_indices()
        self._marg_perm = Mg.data.astype(np.int64) - 1
        self._M_indices, self._M_indptr = Mg.indices, Mg.indptr

    @cached_property
    def signature(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.m},{self.n};".encode())
        h.update(np.stack([self.edge_c, self.edge_v]).astype("<i8").tobytes())
        return h.hexdigest()

    def neighbors_of_variable(self, v: int) -> list[int]:
        return self.edge_c[self.var_edges[v]].tolist()

    def neighbors_of_check(self, c: int) -> list[int]:
        return self.edge_v[self.check_edges[c]].tolist()

    def pair_operator(self, weights: np.ndarray) -> sp.csr_matrix:
        """(edges x edges) matrix with ``weights[p]`` at (pair_out[p], pair_in[p])."""
        w = np.asarray(weights, dtype=np.float64)[self._pair_perm]
        return sp.csr_matrix((w, self._W_indices, self._W_indptr),
                             shape=(self.n_edges, self.n_edges))

    def marginal_operator(self, weights: np.ndarray) -> sp.csr_matrix:
        """(n x edges) matrix with ``weights[e]`` at (edge_v[e], e)."""
        w = np.asarray(weights, dtype=np.float64)[self._marg_perm]
        return sp.csr_matrix((w, self._M_indices, self._M_indptr), shape=(self.n, self.n_edges))

    @cached_property
    def unit_pair_operator(self) -> sp.csr_matrix:
        return self.pair_operator(np.ones(self.n_pairs))

    @cached_property
    def unit_marginal_operator(self) -> sp.csr_matrix:
        return self.marginal_operator(np.ones(self.n_edges))

    def gather_checks(self, x: np.ndarray, fill) -> np.ndarray:
        """(batch, edges) -> (batch, m, dmax) with padding set to ``fill``."""
        out = x[:, self.slot_index]
        out[:, ~self.slot_mask] = fill
        return out

    def scatter_checks(self, y: np.ndarray) -> np.ndarray:
        out = np.empty((y.shape[0], self.n_edges), dtype=y.dtype)
        out[:, self._slot_edges] = y[:, self._slot_pos[0], self._slot_pos[1]]
        return out

    def __repr__(self):
        return f"TannerGraph(m={self.m}, n={self.n}, edges={self.n_edges})"


def build_tanner(H: BitMatrix) -> TannerGraph:
    return TannerGraph(H)


def prior_llr(p):
    """ln((1-p)/p); accepts scalars or arrays."""
    p = np.asarray(p, dtype=np.float64)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("error probability must lie in (0, 1)")
    out = np.log1p(-p) - np.log(p)
    return float(out) if out.ndim == 0 else out


def phi(x: np.ndarray) -> np.ndarray:
    """-log tanh(x/2) for x >= 0; self-inverse, φ(0)=inf, φ(inf)=0."""
    with np.errstate(divide="ignore", over="ignore"):
        return np.log1p(2.0 / np.expm1(x))


def clip_floor(eps: float) -> float:
    """Lower bound on the φ-sum equivalent to |atanh argument| <= 1 - eps."""
    if not 0 < eps < 1:
        raise ValueError("clip epsilon must lie in (0, 1)")
    return float(-np.log1p(-eps))


def _as_batch(x, dtype=np.float64) -> np.ndarray:
    a = np.asarray(x, dtype=dtype)
    return a.reshape(1, -1) if a.ndim == 1 else a


@dataclass
class MessageState:
    vc: np.ndarray
    cv: np.ndarray

    @classmethod
    def zeros(cls, graph: TannerGraph, batch: int = 1) -> "MessageState":
        z = np.zeros((batch, graph.n_edges))
        return cls(z.copy(), z.copy())


def variable_to_check(cv: np.ndarray, priors: np.ndarray, graph: TannerGraph,
                      pair_op=None, bias=None) -> np.ndarray:
    """μ_{v→c} = l_v b_v + Σ_{c'≠c} w μ_{c'→v}; unit weights/bias give plain BP."""
    cv, priors = _as_batch(cv), _as_batch(priors)
    W = graph.unit_pair_operator if pair_op is None else pair_op
    lv = priors[:, graph.edge_v]
    if bias is not None:
        lv = lv * bias[graph.edge_v]
    return lv + (W @ cv.T).T


@dataclass
class CheckCache:
    """Forward quantities the check layer backward pass needs."""
    loo: np.ndarray       # (batch, m, dmax) leave-one-out φ-sums
    syn_sign: np.ndarray  # (batch, m, 1) (-1)^{s_c}


def check_to_variable(vc: np.ndarray, syndrome: np.ndarray, graph: TannerGraph,
                      eps: float = DEFAULT_EPS, return_cache: bool = False):
    """μ_{c→v} = (-1)^{s_c} 2 atanh(clip(Π_{v'≠v} tanh(μ_{v'→c}/2)))."""
    vc = _as_batch(vc)
    syn = _as_batch(syndrome, dtype=np.int64)
    floor = clip_floor(eps)
    mag = graph.gather_checks(phi(np.abs(vc)), 0.0)
    neg = graph.gather_checks((vc < 0).astype(np.int64), 0)
    pre = np.zeros_like(mag)
    suf = np.zeros_like(mag)
    if mag.shape[2] > 1:
        pre[:, :, 1:] = np.cumsum(mag[:, :, :-1], axis=2)
        suf[:, :, :-1] = np.cumsum(mag[:, :, :0:-1], axis=2)[:, :, ::-1]
    loo = pre + suf
    flip = (neg.sum(axis=2, keepdims=True) - neg + syn[:, :, None]) & 1
    out = phi(np.maximum(loo, floor))
    out = np.where(flip == 1, -out, out)
    cv = graph.scatter_checks(out)
    if return_cache:
        return cv, CheckCache(loo, np.where(syn[:, :, None] & 1, -1.0, 1.0))
    return cv


def check_to_variable_backward(g_cv: np.ndarray, vc: np.ndarray, cache: CheckCache,
                               graph: TannerGraph, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Vector-Jacobian product of :func:`check_to_variable` w.r.t. its input messages.

    Works in the tanh domain: with Q_e = ±Π_{j≠e} t_j and t = tanh(μ/2),
    ∂L/∂t_j = Σ_{e≠j} G_e Π_{i∉{e,j}} t_i, G_e = g_e · 2/(1-Q_e²) inside the
    clip range and 0 outside.  The double-exclusion products come from a
    forward and a backward scan, so zeros need no special casing.
    """
    floor = clip_floor(eps)
    g = graph.gather_checks(g_cv, 0.0)
    absq = np.exp(-cache.loo)
    one_minus = -np.expm1(-cache.loo)
    with np.errstate(divide="ignore", invalid="ignore"):
        G = np.where(cache.loo > floor, g * 2.0 / (one_minus * (1.0 + absq)), 0.0)
    G = G * cache.syn_sign
    t = graph.gather_checks(np.tanh(vc / 2.0), 1.0)
    d = t.shape[2]
    pre = np.ones_like(t)
    suf = np.ones_like(t)
    for k in range(1, d):
        pre[:, :, k] = pre[:, :, k - 1] * t[:, :, k - 1]
    for k in range(d - 2, -1, -1):
        suf[:, :, k] = suf[:, :, k + 1] * t[:, :, k + 1]
    fwd = np.zeros_like(t)
    bwd = np.zeros_like(t)
    for k in range(1, d):
        fwd[:, :, k] = fwd[:, :, k - 1] * t[:, :, k - 1] + G[:, :, k - 1] * pre[:, :, k - 1]
    for k in range(d - 2, -1, -1):
        bwd[:, :, k] = bwd[:, :, k + 1] * t[:, :, k + 1] + G[:, :, k + 1] * suf[:, :, k + 1]
    g_t = fwd * suf + pre * bwd
    with np.errstate(over="ignore"):
        dt = 0.5 / np.cosh(vc / 2.0) ** 2
    return graph.scatter_checks(g_t) * dt


def marginalize(cv: np.ndarray, priors: np.ndarray, graph: TannerGraph,
                marg_op=None, bias=None) -> np.ndarray:
    """μ_v = l_v b_v + Σ_c w μ_{c→v}."""
    cv, priors = _as_batch(cv), _as_batch(priors)
    M = graph.unit_marginal_operator if marg_op is None else marg_op
    lv = priors if bias is None else priors * bias
    return lv + (M @ cv.T).T


def hard_decision(marginals) -> np.ndarray:
    """e_v = 1 iff μ_v < 0 (ties decode to 0)."""
    return (np.asarray(marginals) < 0).astype(np.uint8)


def syndrome_of(graph: TannerGraph, errors: np.ndarray) -> np.ndarray:
    e = _as_batch(errors, dtype=np.int64)
    return ((e @ graph.H.dense.T.astype(np.int64)) & 1).astype(np.uint8)


@dataclass
class DecodeResult:
    inferred: np.ndarray
    marginals: np.ndarray
    iterations_used: int
    syndrome_matched: bool

    def to_json_obj(self) -> dict:
        return {
            "inferred": self.inferred.astype(int).tolist(),
            "marginals": [float(x) for x in self.marginals],
            "iterations_used": int(self.iterations_used),
            "syndrome_matched": bool(self.syndrome_matched),
        }


def bp_decode_batch(graph: TannerGraph, syndromes, priors, T: int,
                    eps: float = DEFAULT_EPS) -> np.ndarray:
    """Marginals after T flooding iterations for a batch, no early stopping."""
    if T < 1:
        raise ValueError("need at least one iteration")
    syn = _as_batch(syndromes, dtype=np.int64)
    pri = _as_batch(priors)
    if pri.shape[0] == 1 and syn.shape[0] > 1:
        pri = np.broadcast_to(pri, (syn.shape[0], graph.n))
    cv = np.zeros((syn.shape[0], graph.n_edges))
    for _ in range(T):
        vc = variable_to_check(cv, pri, graph)
        cv = check_to_variable(vc, syn, graph, eps)
    return marginalize(cv, pri, graph)


def bp_decode(graph: TannerGraph, syndrome, priors, T: int, eps: float = DEFAULT_EPS,
              early_stop: bool = False) -> DecodeResult:
    """Decode one syndrome.  ``priors`` is a per-variable LLR vector or a scalar."""
    if T < 1:
        raise ValueError("need at least one iteration")
    syn = np.asarray(syndrome, dtype=np.int64).reshape(1, -1)
    if syn.shape[1] != graph.m:
        raise ValueError(f"syndrome length {syn.shape[1]} != {graph.m} checks")
    pri = np.broadcast_to(np.asarray(priors, dtype=np.float64), (graph.n,)).reshape(1, -1)
    cv = np.zeros((1, graph.n_edges))
    used = 0
    for it in range(T):
        vc = variable_to_check(cv, pri, graph)
        cv = check_to_variable(vc, syn, graph, eps)
        used = it + 1
        if early_stop:
            mu = marginalize(cv, pri, graph)
            if np.array_equal(syndrome_of(graph, hard_decision(mu)), syn):
                break
    mu = marginalize(cv, pri, graph)[0]
    e = hard_decision(mu)
    matched = bool(np.array_equal(syndrome_of(graph, e)[0], syn[0]))
    return DecodeResult(e, mu, used, matched)
