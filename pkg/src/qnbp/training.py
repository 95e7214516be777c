"""Losses, gradients and the training loop for neural BP decoders."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.special import expit

from .bp import check_to_variable_backward, prior_llr
from .codes import CssCode
from .gf2 import BitMatrix
from .nbp import (ForwardTrace, NbpModel, init_identity, nbp_forward, save_checkpoint,
                  tie_weights_toric)

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-30
HISTORY_HEADER = ["minibatch", "mean_loss", "eval_p", "eval_flagged", "eval_unflagged", "eval_total"]


class NumericalAbort(RuntimeError):
    """Training produced a non-finite loss or gradient."""


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- elementwise pieces

def fermi_sigma(x):
    """σ(x) = 1/(eˣ + 1), stable for any magnitude."""
    return expit(-np.asarray(x, dtype=np.float64))


def _parity_offset(x):
    # x - 2 round(x/2), in [-1, 1]; exact zero on even integers
    x = np.asarray(x, dtype=np.float64)
    return x - 2.0 * np.round(x / 2.0)


def smooth_parity(x):
    """f(x) = |sin(πx/2)|."""
    return np.abs(np.sin(np.pi * _parity_offset(x) / 2.0))


def smooth_parity_grad(x):
    """Derivative of f with 0 at the kinks (even integers)."""
    d = _parity_offset(x)
    return np.sign(d) * (np.pi / 2.0) * np.cos(np.pi * d / 2.0)


# ---------------------------------------------------------------- losses

def _loss_dense(loss_matrix) -> np.ndarray:
    if isinstance(loss_matrix, BitMatrix):
        return loss_matrix.dense.astype(np.float64)
    return np.asarray(loss_matrix, dtype=np.float64)


def degeneracy_loss(marginals, true_error, loss_matrix):
    """Σ_i f(Σ_k G_ik (e_k + σ(μ_k))) per sample; scalar for 1-D inputs."""
    G = _loss_dense(loss_matrix)
    mu = np.asarray(marginals, dtype=np.float64)
    e = np.asarray(true_error, dtype=np.float64)
    if mu.shape != e.shape or mu.shape[-1] != G.shape[1]:
        raise ValueError("marginals, error and loss matrix dimensions disagree")
    x = (e + fermi_sigma(mu)) @ G.T
    return smooth_parity(x).sum(axis=-1)


def classical_bce_loss(marginals, true_error):
    """Binary cross entropy between σ(μ) and e, logs floored at 1e-30."""
    mu = np.asarray(marginals, dtype=np.float64)
    e = np.asarray(true_error, dtype=np.float64)
    if mu.shape != e.shape:
        raise ValueError("marginals and error dimensions disagree")
    p1 = np.maximum(fermi_sigma(mu), LOG_FLOOR)
    p0 = np.maximum(fermi_sigma(-mu), LOG_FLOOR)
    return -(e * np.log(p1) + (1 - e) * np.log(p0)).sum(axis=-1)


def _loss_grad(mu: np.ndarray, e: np.ndarray, spec: "LossSpec") -> np.ndarray:
    s = fermi_sigma(mu)
    if spec.target == "degeneracy":
        G = spec.dense
        x = (e + s) @ G.T
        g_s = smooth_parity_grad(x) @ G
        return -g_s * s * fermi_sigma(-mu) * spec.scale
    s0 = fermi_sigma(-mu)
    return (e * s0 * (s > LOG_FLOOR) - (1 - e) * s * (s0 > LOG_FLOOR)) * spec.scale


@dataclass
class LossSpec:
    kind: str = "cycle_averaged"        # or "final_cycle"
    target: str = "degeneracy"          # or "classical_bce"
    loss_matrix: BitMatrix | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("cycle_averaged", "final_cycle"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.target not in ("degeneracy", "classical_bce"):
            raise ValueError(f"unknown loss target {self.target!r}")
        if self.target == "degeneracy" and self.loss_matrix is None:
            raise ValueError("degeneracy loss needs a loss matrix")
        self.dense = None if self.loss_matrix is None else _loss_dense(self.loss_matrix)

    def per_sample(self, marginals, errors) -> np.ndarray:
        if self.target == "degeneracy":
            return self.scale * degeneracy_loss(marginals, errors, self.dense)
        return self.scale * classical_bce_loss(marginals, errors)

    def cycle_weights(self, n_cycles: int) -> np.ndarray:
        if self.kind == "final_cycle":
            w = np.zeros(n_cycles)
            w[-1] = 1.0
            return w
        return np.full(n_cycles, 1.0 / n_cycles)


def cycle_loss_per_sample(trace: ForwardTrace, errors, spec: LossSpec) -> np.ndarray:
    e = np.asarray(errors, dtype=np.float64).reshape(trace.marginals[-1].shape)
    if spec.kind == "final_cycle":
        return spec.per_sample(trace.marginals[-1], e)
    w = spec.cycle_weights(trace.n_cycles)
    return sum(wi * spec.per_sample(mu, e) for wi, mu in zip(w, trace.marginals))


def cycle_loss(trace: ForwardTrace, errors, spec: LossSpec) -> float:
    """Batch-mean of the final-cycle or cycle-averaged loss."""
    return float(np.mean(cycle_loss_per_sample(trace, errors, spec)))


# ---------------------------------------------------------------- backward

def backward(trace: ForwardTrace, model: NbpModel, errors, spec: LossSpec) -> np.ndarray:
    """Gradient of :func:`cycle_loss` w.r.t. the flat parameter vector.

    Members of a sharing class all carry the class total.
    """
    g = model.graph
    if trace.n_cycles != model.n_cycles or not trace.vc:
        raise ValueError("trace was not produced by this model (or lacks intermediates)")
    if trace.vc[0].shape[1] != g.n_edges:
        raise ValueError("trace and model graphs differ")
    pri = trace.priors
    batch = pri.shape[0]
    e = np.asarray(errors, dtype=np.float64).reshape(batch, g.n)
    wts = spec.cycle_weights(model.n_cycles) / batch

    d_cvvc = np.zeros_like(model.cvvc)
    d_pb = np.zeros_like(model.prior_bias)
    d_mw = np.zeros(g.n_edges)
    d_mb = np.zeros(g.n)
    lv = pri[:, g.edge_v]
    g_vc_next = None
    for t in range(model.n_cycles - 1, -1, -1):
        cv = trace.cv[t]
        g_cv = np.zeros_like(cv)
        if wts[t] != 0.0:
            g_mu = wts[t] * _loss_grad(trace.marginals[t], e, spec)
            d_mb += (g_mu * pri).sum(axis=0)
            g_mu_e = g_mu[:, g.edge_v]
            d_mw += (g_mu_e * cv).sum(axis=0)
            g_cv += g_mu_e * model.marg_w
        if g_vc_next is not None:
            W = g.pair_operator(model.cvvc[t + 1])
            g_cv += (W.T @ g_vc_next.T).T
        g_vc = check_to_variable_backward(g_cv, trace.vc[t], trace.caches[t], g, model.eps)
        if model.residual and g_vc_next is not None:
            g_vc = g_vc + g_vc_next
        d_pb[t] = np.bincount(g.edge_v, weights=(g_vc * lv).sum(axis=0), minlength=g.n)
        if t > 0:
            prev = trace.cv[t - 1]
            d_cvvc[t] = (g_vc[:, g.pair_out] * prev[:, g.pair_in]).sum(axis=0)
        g_vc_next = g_vc

    parts = []
    for t in range(model.n_cycles):
        parts += [d_cvvc[t], d_pb[t]]
    grad = np.concatenate(parts + [d_mw, d_mb])
    if model.classes is not None:
        totals = np.bincount(model.classes, weights=grad, minlength=grad.size)
        grad = totals[model.classes]
    return grad


# ---------------------------------------------------------------- optimizers

def _classes(model: NbpModel):
    cls = model.class_index()
    reps, pos = np.unique(cls, return_inverse=True)
    return reps, pos


def sgd_step(model: NbpModel, grads: np.ndarray, lr: float) -> None:
    """θ ← θ - lr g, once per sharing class."""
    reps, pos = _classes(model)
    theta = model.flat()[reps] - lr * grads[reps]
    model.set_flat(theta[pos])


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def for_model(cls, model: NbpModel) -> "AdamState":
        k = np.unique(model.class_index()).size
        return cls(np.zeros(k), np.zeros(k))


def adam_step(model: NbpModel, grads: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    reps, pos = _classes(model)
    g = grads[reps]
    state.step += 1
    state.m = beta1 * state.m + (1 - beta1) * g
    state.v = beta2 * state.v + (1 - beta2) * g * g
    mhat = state.m / (1 - beta1**state.step)
    vhat = state.v / (1 - beta2**state.step)
    theta = model.flat()[reps] - lr * mhat / (np.sqrt(vhat) + eps)
    model.set_flat(theta[pos])


# ---------------------------------------------------------------- sampling

@dataclass
class Minibatch:
    errors: np.ndarray     # (batch, n) uint8
    syndromes: np.ndarray  # (batch, m) uint8
    priors: np.ndarray     # (batch, n) LLRs
    rates: np.ndarray      # (batch,)

    def __len__(self):
        return self.errors.shape[0]

    def __iter__(self):
        return iter(zip(self.errors, self.syndromes, self.priors))


def default_rates(lo: float = 0.01, hi: float = 0.05, count: int = 6) -> list[float]:
    return [float(r) for r in np.linspace(lo, hi, count)]


def sample_minibatch(code: CssCode, sector: str, rates, per_rate: int, rng) -> Minibatch:
    """``per_rate`` i.i.d. Bernoulli(p) error patterns for every rate, in rate order."""
    sec = code.sector(sector)
    rates = np.asarray(rates, dtype=np.float64)
    p = np.repeat(rates, per_rate)
    errors = (rng.random((p.size, sec.n)) < p[:, None]).astype(np.uint8)
    syn = sec.syndrome(errors)
    priors = np.repeat(prior_llr(p)[:, None], sec.n, axis=1)
    return Minibatch(errors, syn, priors, p)


# ---------------------------------------------------------------- training loop

@dataclass
class TrainConfig:
    code: str | None = None
    sector: str = "xz"
    n_cycles: int = 12
    residual: bool = True
    sharing_period: list | None = None
    loss_kind: str = "cycle_averaged"
    loss_target: str = "degeneracy"
    optimizer: str = "sgd"
    lr: float = 2e-4
    batch_size: int = 120
    rates: list = field(default_factory=default_rates)
    minibatches: int = 10000
    seed: int = 0
    eps: float = 1e-4
    checkpoint_every: int = 0
    eval_every: int = 0
    eval_p: float = 0.01
    eval_trials: int = 10000

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not self.rates or self.batch_size % len(self.rates):
            raise ConfigError("batch_size must be a multiple of the number of rates")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.sector not in ("x", "z", "xz"):
            raise ConfigError(f"unknown sector {self.sector!r}")
        if self.minibatches < 0 or self.n_cycles < 1:
            raise ConfigError("minibatches must be >= 0 and n_cycles >= 1")
        self.rates = [float(r) for r in self.rates]

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _cell(v) -> str:
    if v is None:
        return ""
    return format(v, ".17g") if isinstance(v, float) else str(v)


def history_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_HEADER)
    for row in history:
        w.writerow([_cell(row.get(k)) for k in HISTORY_HEADER])
    return buf.getvalue()


def build_model(code: CssCode, config: TrainConfig) -> NbpModel:
    from .bp import TannerGraph
    graph = TannerGraph(code.sector(config.sector).check)
    model = init_identity(graph, config.n_cycles, config.residual, config.eps,
                          code.lattice, config.sector if code.lattice else None)
    if config.sharing_period:
        model = tie_weights_toric(model, code.lattice, tuple(config.sharing_period))
    return model


def train(config: TrainConfig, code: CssCode | None = None, out_dir=None,
          model: NbpModel | None = None):
    """Run the configured number of minibatches; returns (model, history).

    ``history`` has one dict per minibatch.  Held-out failure rates appear every
    ``eval_every`` minibatches (0 disables).  Checkpoints land in ``out_dir``.
    """
    from .evaluation import NBPDecoder, monte_carlo

    if code is None:
        if config.code is None:
            raise ConfigError("no code given")
        code = CssCode.load(config.code)
    model = model or build_model(code, config)
    sector = code.sector(config.sector)
    spec = LossSpec(config.loss_kind, config.loss_target,
                    sector.loss_matrix if config.loss_target == "degeneracy" else None)
    per_rate = config.batch_size // len(config.rates)
    rng = np.random.default_rng(config.seed)
    adam = AdamState.for_model(model) if config.optimizer == "adam" else None
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    history = []
    for step in range(1, config.minibatches + 1):
        mb = sample_minibatch(code, config.sector, config.rates, per_rate, rng)
        trace = nbp_forward(model, mb.syndromes, mb.priors)
        loss = cycle_loss(trace, mb.errors, spec)
        grads = backward(trace, model, mb.errors, spec)
        if not np.isfinite(loss) or not np.all(np.isfinite(grads)):
            raise NumericalAbort(f"non-finite loss/gradient at minibatch {step} (loss={loss})")
        if adam is None:
            sgd_step(model, grads, config.lr)
        else:
            adam_step(model, grads, adam, config.lr)
        row = {"minibatch": step, "mean_loss": loss, "eval_p": None,
               "eval_flagged": None, "eval_unflagged": None, "eval_total": None}
        if config.eval_every and step % config.eval_every == 0:
            tally = monte_carlo(NBPDecoder(model), code, config.sector, config.eval_p,
                                config.eval_trials, seed=(config.seed, 1, step))
            row.update(eval_p=config.eval_p, eval_flagged=tally.flagged / tally.trials,
                       eval_unflagged=tally.unflagged / tally.trials,
                       eval_total=tally.failure_rate)
            log.info("minibatch %d loss %.6g eval total %.4g", step, loss, tally.failure_rate)
        history.append(row)
        if out and config.checkpoint_every and step % config.checkpoint_every == 0:
            save_checkpoint(model, out / f"checkpoint_{step:06d}.json")
    if out:
        save_checkpoint(model, out / "checkpoint_final.json")
        (out / "history.csv").write_text(history_csv(history))
    return model, history
