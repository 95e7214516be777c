"""Neural belief propagation: BP unrolled into a network with trainable weights.

Cycle ``t`` computes

    μ_{v→c} = l_v b_v^t + Σ_{c'≠c} w^t_{c'v,vc} μ_{c'→v}   (+ previous μ_{v→c} if residual)
    μ_{c→v} = unweighted BP check rule
    μ_v     = l_v b_v^T + Σ_c w^T_{cv,v} μ_{c→v}

and the readout parameters ``(w^T, b^T)`` are shared by every cycle's
marginal.  With all parameters equal to one and no residual skip this is
plain BP, evaluated by the very same kernels.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bp import (DEFAULT_EPS, TannerGraph, check_to_variable,
                 marginalize, variable_to_check)
from .codes import ToricLattice, toric_code

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed, incompatible or mismatched checkpoint."""


@dataclass
class NbpModel:
    graph: TannerGraph
    n_cycles: int
    residual: bool
    cvvc: np.ndarray         # (n_cycles, n_pairs)
    prior_bias: np.ndarray   # (n_cycles, n)
    marg_w: np.ndarray       # (n_edges,)
    marg_b: np.ndarray       # (n,)
    eps: float = DEFAULT_EPS
    lattice: ToricLattice | None = None
    sector: str | None = None
    period: tuple[int, int] | None = None
    classes: np.ndarray | None = field(default=None, repr=False)

    @property
    def graph_signature(self) -> str:
        return self.graph.signature

    @property
    def n_params(self) -> int:
        g = self.graph
        return self.n_cycles * (g.n_pairs + g.n) + g.n_edges + g.n

    def flat(self) -> np.ndarray:
        """Parameters in canonical order: per cycle (cvvc, prior_bias), then marg_w, marg_b."""
        parts = []
        for t in range(self.n_cycles):
            parts += [self.cvvc[t], self.prior_bias[t]]
        parts += [self.marg_w, self.marg_b]
        return np.concatenate(parts)

    def set_flat(self, theta: np.ndarray) -> None:
        g = self.graph
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.size}")
        i = 0
        for t in range(self.n_cycles):
            self.cvvc[t] = theta[i:i + g.n_pairs]
            i += g.n_pairs
            self.prior_bias[t] = theta[i:i + g.n]
            i += g.n
        self.marg_w[:] = theta[i:i + g.n_edges]
        i += g.n_edges
        self.marg_b[:] = theta[i:]

    def class_index(self) -> np.ndarray:
        """Sharing class of every flat parameter (identity when untied)."""
        if self.classes is None:
            return np.arange(self.n_params)
        return self.classes

    def copy(self) -> "NbpModel":
        return NbpModel(self.graph, self.n_cycles, self.residual, self.cvvc.copy(),
                        self.prior_bias.copy(), self.marg_w.copy(), self.marg_b.copy(),
                        self.eps, self.lattice, self.sector, self.period,
                        None if self.classes is None else self.classes.copy())


def init_identity(graph: TannerGraph, n_cycles: int, residual: bool = False,
                  eps: float = DEFAULT_EPS, lattice: ToricLattice | None = None,
                  sector: str | None = None) -> NbpModel:
    if n_cycles < 1:
        raise ValueError("need at least one cycle")
    return NbpModel(graph, int(n_cycles), bool(residual),
                    np.ones((n_cycles, graph.n_pairs)), np.ones((n_cycles, graph.n)),
                    np.ones(graph.n_edges), np.ones(graph.n), eps, lattice, sector)


@dataclass
class ForwardTrace:
    syndromes: np.ndarray
    priors: np.ndarray
    vc: list = field(default_factory=list)
    cv: list = field(default_factory=list)
    marginals: list = field(default_factory=list)
    caches: list = field(default_factory=list, repr=False)

    @property
    def n_cycles(self) -> int:
        return len(self.marginals)


def _prep(model: NbpModel, syndromes, priors):
    g = model.graph
    syn = np.asarray(syndromes, dtype=np.int64)
    syn = syn.reshape(1, -1) if syn.ndim == 1 else syn
    if syn.shape[1] != g.m:
        raise ValueError(f"syndrome length {syn.shape[1]} does not match graph with {g.m} checks")
    pri = np.asarray(priors, dtype=np.float64)
    if pri.ndim == 0:
        pri = np.full((syn.shape[0], g.n), float(pri))
    elif pri.ndim == 1:
        pri = np.broadcast_to(pri, (syn.shape[0], g.n))
    return syn, np.ascontiguousarray(pri)


def nbp_forward(model: NbpModel, syndromes, priors, keep_trace: bool = True) -> ForwardTrace:
    """Run all cycles on a batch; the trace keeps what the backward pass needs."""
    g = model.graph
    syn, pri = _prep(model, syndromes, priors)
    trace = ForwardTrace(syn, pri)
    M = g.marginal_operator(model.marg_w)
    cv = np.zeros((syn.shape[0], g.n_edges))
    vc_prev = None
    for t in range(model.n_cycles):
        vc = variable_to_check(cv, pri, g, g.pair_operator(model.cvvc[t]), model.prior_bias[t])
        if model.residual and vc_prev is not None:
            vc = vc + vc_prev
        cv, cache = check_to_variable(vc, syn, g, model.eps, return_cache=True)
        mu = marginalize(cv, pri, g, M, model.marg_b)
        if keep_trace or t == model.n_cycles - 1:
            trace.marginals.append(mu)
        if keep_trace:
            trace.vc.append(vc)
            trace.cv.append(cv)
            trace.caches.append(cache)
        vc_prev = vc
    return trace


def nbp_marginals(model: NbpModel, syndromes, priors) -> np.ndarray:
    """Final-cycle marginals only."""
    return nbp_forward(model, syndromes, priors, keep_trace=False).marginals[-1]


# ---------------------------------------------------------------- toric weight tying

def _toric_geometry(graph: TannerGraph, lattice: ToricLattice, sector: str):
    """Per-variable (x, y, orient, block) and per-edge check offset for a toric sector graph."""
    L = lattice.L
    N = 2 * L * L
    if sector not in ("x", "z", "xz") or graph.n != (2 * N if sector == "xz" else N):
        raise ValueError("graph does not look like a toric sector graph")
    plaq = lattice.check_offsets("plaquette")
    vert = lattice.check_offsets("vertex")
    var = []
    for v in range(graph.n):
        blk = v // N if sector == "xz" else (0 if sector == "x" else 1)
        x, y, o = lattice.edge_coord(v % N)
        var.append((x, y, o, blk))
    role = []
    for c, v in graph.edges:
        blk = var[v][3]
        cc = c - (L * L if sector == "xz" and blk == 1 else 0)
        table = plaq if blk == 0 else vert
        try:
            role.append(table[(cc, v % N)])
        except KeyError:
            raise ValueError("graph does not match the toric lattice") from None
    return var, role


def _param_keys(graph: TannerGraph, lattice: ToricLattice, sector: str, n_cycles: int):
    """Geometric key of every flat parameter: (group, cycle, x, y, rest...)."""
    var, role = _toric_geometry(graph, lattice, sector)
    keys = []
    for t in range(n_cycles):
        for a, b in zip(graph.pair_in, graph.pair_out):
            x, y, o, blk = var[graph.edge_v[a]]
            keys.append(("w", t, x, y, o, blk, role[a], role[b]))
        for v in range(graph.n):
            x, y, o, blk = var[v]
            keys.append(("b", t, x, y, o, blk))
    for e in range(graph.n_edges):
        x, y, o, blk = var[graph.edge_v[e]]
        keys.append(("mw", -1, x, y, o, blk, role[e]))
    for v in range(graph.n):
        x, y, o, blk = var[v]
        keys.append(("mb", -1, x, y, o, blk))
    return keys


def _reduce_key(key, gx, gy):
    return key[:2] + (key[2] % gx, key[3] % gy) + key[4:]


def tie_weights_toric(model: NbpModel, lattice: ToricLattice | None = None,
                      period: tuple[int, int] = (2, 2)) -> NbpModel:
    """Share parameters related by lattice translations that are multiples of ``period``.

    Each class takes the value of its member nearest the origin, i.e. the
    one whose variable lies in the cell [0, gx) x [0, gy).
    """
    lattice = lattice or model.lattice
    if lattice is None or model.sector is None:
        raise ValueError("weight tying needs a toric lattice and sector")
    gx, gy = int(period[0]), int(period[1])
    if gx < 1 or gy < 1 or lattice.L % gx or lattice.L % gy:
        raise ValueError(f"period {period} does not divide L={lattice.L}")
    keys = _param_keys(model.graph, lattice, model.sector, model.n_cycles)
    index = {k: i for i, k in enumerate(keys)}
    theta = model.flat()
    classes = np.empty(len(keys), dtype=np.int64)
    for i, k in enumerate(keys):
        classes[i] = index[_reduce_key(k, gx, gy)]
    out = model.copy()
    out.lattice = lattice
    out.period = (gx, gy)
    out.classes = classes
    out.set_flat(theta[classes])
    return out


def retarget_tied_model(model: NbpModel, graph: TannerGraph, lattice: ToricLattice) -> NbpModel:
    """Instantiate a tied toric model on another lattice size by tiling class values."""
    if model.period is None or model.lattice is None:
        raise ValueError("only tied toric models can be retargeted")
    gx, gy = model.period
    if lattice.L % gx or lattice.L % gy:
        raise ValueError(f"period {model.period} does not divide L={lattice.L}")
    src_keys = _param_keys(model.graph, model.lattice, model.sector, model.n_cycles)
    src_index = {k: i for i, k in enumerate(src_keys)}
    src_theta = model.flat()
    new = init_identity(graph, model.n_cycles, model.residual, model.eps, lattice, model.sector)
    keys = _param_keys(graph, lattice, model.sector, model.n_cycles)
    theta = np.empty(len(keys))
    for i, k in enumerate(keys):
        rk = _reduce_key(k, gx, gy)
        if rk not in src_index:
            raise ValueError("incompatible lattice periods")
        theta[i] = src_theta[src_index[rk]]
    new.set_flat(theta)
    return tie_weights_toric(new, lattice, (gx, gy))


# ---------------------------------------------------------------- checkpoints

def _fmt(values) -> str:
    return "[" + ",".join(format(float(x), ".17g") for x in np.ravel(values)) + "]"


def checkpoint_text(model: NbpModel) -> str:
    """Serialized checkpoint; floats printed with 17 significant digits."""
    sharing = None if model.period is None else {"period": list(model.period)}
    lattice = None if model.lattice is None else {"L": model.lattice.L, "sector": model.sector}
    head = {
        "version": FORMAT_VERSION,
        "graph_signature": model.graph_signature,
        "n_cycles": model.n_cycles,
        "residual": model.residual,
        "eps": model.eps,
        "sharing": sharing,
        "lattice": lattice,
    }
    body = ",\n".join(f"  {json.dumps(k)}: {json.dumps(v)}" for k, v in head.items())
    cvvc = "[" + ",".join(_fmt(r) for r in model.cvvc) + "]"
    pb = "[" + ",".join(_fmt(r) for r in model.prior_bias) + "]"
    params = (f'{{"cvvc": {cvvc}, "prior_bias": {pb}, '
              f'"marg_w": {_fmt(model.marg_w)}, "marg_b": {_fmt(model.marg_b)}}}')
    return "{\n" + body + f',\n  "params": {params}\n}}\n'


def save_checkpoint(model: NbpModel, path) -> None:
    Path(path).write_text(checkpoint_text(model))


def load_checkpoint(path, graph: TannerGraph, lattice: ToricLattice | None = None,
                    retarget: bool = False) -> NbpModel:
    """Load a checkpoint onto ``graph``.

    With ``retarget=True`` a tied toric checkpoint saved for another lattice
    size is tiled onto ``graph`` (``lattice`` describes ``graph``).
    """
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from None
    if obj.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {obj.get('version')!r}")
    try:
        n_cycles = int(obj["n_cycles"])
        residual = bool(obj["residual"])
        eps = float(obj.get("eps", DEFAULT_EPS))
        p = obj["params"]
        cvvc = np.asarray(p["cvvc"], dtype=np.float64).reshape(n_cycles, -1)
        pb = np.asarray(p["prior_bias"], dtype=np.float64).reshape(n_cycles, -1)
        mw = np.asarray(p["marg_w"], dtype=np.float64)
        mb = np.asarray(p["marg_b"], dtype=np.float64)
        sharing = obj.get("sharing")
        lat = obj.get("lattice")
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    src_lattice = ToricLattice(int(lat["L"])) if lat else None
    sector = lat.get("sector") if lat else None
    period = tuple(int(g) for g in sharing["period"]) if sharing else None

    if obj.get("graph_signature") == graph.signature:
        src_graph = graph
    elif retarget and period is not None and src_lattice is not None:
        src_graph = TannerGraph(toric_code(src_lattice.L).sector(sector).check)
        if src_graph.signature != obj.get("graph_signature"):
            raise CheckpointError("checkpoint signature does not match its own lattice record")
    else:
        raise CheckpointError("checkpoint graph signature does not match the code")

    if (cvvc.shape[1] != src_graph.n_pairs or pb.shape[1] != src_graph.n
            or mw.size != src_graph.n_edges or mb.size != src_graph.n):
        raise CheckpointError("parameter shapes do not match the graph")
    model = NbpModel(src_graph, n_cycles, residual, cvvc, pb, mw, mb, eps,
                     src_lattice, sector)
    if period is not None:
        tied = tie_weights_toric(model, src_lattice, period)
        if not np.array_equal(tied.flat(), model.flat()):
            raise CheckpointError("tied checkpoint holds unequal values within a class")
        model = tied
    if src_graph is not graph:
        if lattice is None:
            raise CheckpointError("retargeting needs the target lattice")
        model = retarget_tied_model(model, graph, lattice)
    return model
