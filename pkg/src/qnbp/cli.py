"""Command-line entry points.

Exit codes: 0 success, 2 usage/config error, 3 construction failure,
4 numerical abort.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .bp import DEFAULT_EPS, TannerGraph, bp_decode, prior_llr
from .codes import (CLASSICAL_CODES, ConstructionError, CssCode, bicycle_code,
                    hypergraph_product, toric_code, validate_css)
from .evaluation import (BPDecoder, NBPDecoder, classify_outcome, compare_csv, sweep)
from .nbp import CheckpointError, load_checkpoint, nbp_marginals
from .training import ConfigError, NumericalAbort, TrainConfig, train

EXIT_USAGE, EXIT_CONSTRUCTION, EXIT_NUMERICAL = 2, 3, 4

log = logging.getLogger("qnbp")


class UsageError(Exception):
    pass


def _parse_bits(text: str) -> np.ndarray:
    s = text.replace(",", "").replace(" ", "")
    if not s or set(s) - {"0", "1"}:
        raise UsageError(f"not a bit string: {text!r}")
    return np.array([int(c) for c in s], dtype=np.uint8)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _merge_config(args, keys: dict) -> dict:
    """Defaults < --config file < explicit flags; unknown config keys are rejected."""
    resolved = dict(keys)
    if args.config:
        try:
            obj = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        unknown = set(obj) - set(keys)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(obj)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            resolved[k] = v
    if args.seed is not None:
        resolved["seed"] = args.seed
    return resolved


def _load_code(path) -> CssCode:
    if not path:
        raise UsageError("--code is required")
    try:
        return CssCode.load(path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load code: {exc}") from None


def _decoders(cfg: dict, code: CssCode):
    """(model decoder or None, baseline decoder)."""
    sector = code.sector(cfg["sector"])
    graph = TannerGraph(sector.check)
    model = None
    if cfg.get("checkpoint"):
        try:
            model = load_checkpoint(cfg["checkpoint"], graph, code.lattice,
                                    retarget=bool(cfg.get("retarget")))
        except CheckpointError as exc:
            raise UsageError(str(exc)) from None
    iters = cfg.get("iters") or (model.n_cycles if model else 12)
    base = BPDecoder(graph, int(iters), float(cfg.get("eps") or DEFAULT_EPS))
    return (NBPDecoder(model) if model else None), base


# ---------------------------------------------------------------- commands

def cmd_build_code(args) -> int:
    cfg = _merge_config(args, {"family": None, "L": None, "n": None, "k": None, "w": None,
                               "c1": "hamming743", "c2": "bch1575", "seed": 0})
    fam = cfg["family"]
    need = {"toric": ["L"], "bicycle": ["n", "k", "w"], "hgp": []}
    if fam not in need:
        raise UsageError(f"family must be one of {sorted(need)}, got {fam!r}")
    missing = [k for k in need[fam] if cfg[k] is None]
    if missing:
        raise UsageError(f"{fam} needs " + ", ".join("--" + k for k in missing))
    try:
        if fam == "toric":
            code = toric_code(int(cfg["L"]))
        elif fam == "bicycle":
            code = bicycle_code(int(cfg["n"]), int(cfg["k"]), int(cfg["w"]), seed=int(cfg["seed"]))
        elif fam == "hgp":
            if cfg["c1"] not in CLASSICAL_CODES or cfg["c2"] not in CLASSICAL_CODES:
                raise UsageError(f"classical codes must be among {sorted(CLASSICAL_CODES)}")
            code = hypergraph_product(CLASSICAL_CODES[cfg["c1"]](), CLASSICAL_CODES[cfg["c2"]]())
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid parameters: {exc}") from None
    out = Path(args.out or ".")
    path = out if out.suffix == ".json" else out / f"{code.name}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    code.save(path)
    _write_json(path.with_name(path.stem + ".config.json"), cfg)
    report = validate_css(code)
    report["path"] = str(path)
    if not args.quiet:
        print(json.dumps(report, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    if not args.config:
        raise UsageError("train needs --config")
    try:
        config = TrainConfig.load(args.config)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if args.seed is not None:
        config.seed = args.seed
    code_path = Path(config.code) if config.code else None
    if code_path and not code_path.is_absolute() and not code_path.exists():
        code_path = Path(args.config).parent / code_path
    code = _load_code(code_path)
    out = Path(args.out or "train_out")
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(config.to_json())
    try:
        train(config, code, out)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if not args.quiet:
        print(str(out / "checkpoint_final.json"))
    return 0


_EVAL_KEYS = {"code": None, "checkpoint": None, "retarget": False, "sector": "xz",
              "iters": None, "eps": None, "trials": 10000, "compare": False, "seed": 0}


def _emit(args, name: str, text: str, cfg: dict) -> None:
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)
        _write_json(out / "resolved_config.json", cfg)
    else:
        sys.stdout.write(text)


def _run_sweep(args, cfg: dict, rates: list, name: str) -> int:
    code = _load_code(cfg["code"])
    model_dec, base = _decoders(cfg, code)
    threads = args.threads or os.cpu_count() or 1
    seed = int(cfg["seed"])
    trials = int(cfg["trials"])
    if model_dec is None:
        text = sweep(base, code, cfg["sector"], rates, trials, seed, threads).to_csv()
    elif cfg["compare"]:
        res = [sweep(d, code, cfg["sector"], rates, trials, seed, threads) for d in (base, model_dec)]
        text = compare_csv(res)
    else:
        text = sweep(model_dec, code, cfg["sector"], rates, trials, seed, threads).to_csv()
    _emit(args, name, text, cfg)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _merge_config(args, dict(_EVAL_KEYS, p=0.01))
    return _run_sweep(args, cfg, [float(cfg["p"])], "evaluate.csv")


def cmd_sweep(args) -> int:
    cfg = _merge_config(args, dict(_EVAL_KEYS, rates=[0.01, 0.02, 0.03, 0.04, 0.05]))
    rates = cfg["rates"]
    if isinstance(rates, str):
        rates = [float(r) for r in rates.split(",") if r.strip()]
    cfg["rates"] = [float(r) for r in rates]
    try:
        return _run_sweep(args, cfg, cfg["rates"], "sweep.csv")
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_inspect_weights(args) -> int:
    cfg = _merge_config(args, {"code": None, "checkpoint": None, "sector": "xz", "seed": 0})
    code = _load_code(cfg["code"])
    if code.lattice is None:
        raise UsageError("inspect-weights needs a toric code")
    if not cfg["checkpoint"]:
        raise UsageError("--checkpoint is required")
    graph = TannerGraph(code.sector(cfg["sector"]).check)
    try:
        model = load_checkpoint(cfg["checkpoint"], graph, code.lattice)
    except CheckpointError as exc:
        raise UsageError(str(exc)) from None
    lat = code.lattice
    N = 2 * lat.L * lat.L
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cycle", "vx", "vy", "orientation", "in_edge", "out_edge", "weight"])
    for t in range(model.n_cycles):
        for p in range(graph.n_pairs):
            v = int(graph.pair_v[p])
            x, y, o = lat.edge_coord(v % N)
            if cfg["sector"] == "xz":
                o = ("x" if v < N else "z") + o
            w.writerow([t, x, y, o, int(graph.pair_in[p]), int(graph.pair_out[p]),
                        format(float(model.cvvc[t, p]), ".17g")])
    _emit(args, "weights.csv", buf.getvalue(), cfg)
    return 0


def cmd_decode_one(args) -> int:
    cfg = _merge_config(args, {"code": None, "checkpoint": None, "retarget": False,
                               "sector": "xz", "iters": None, "eps": None, "p": 0.01,
                               "syndrome": None, "error": None, "early_stop": False, "seed": 0})
    if (cfg["syndrome"] is None) == (cfg["error"] is None):
        raise UsageError("give exactly one of --syndrome or --error")
    code = _load_code(cfg["code"])
    sector = code.sector(cfg["sector"])
    model_dec, base = _decoders(cfg, code)
    error = None
    if cfg["error"] is not None:
        error = _parse_bits(cfg["error"])
        if error.size != sector.n:
            raise UsageError(f"error length {error.size} != {sector.n}")
        syn = sector.syndrome(error)
    else:
        syn = _parse_bits(cfg["syndrome"])
        if syn.size != sector.check.rows:
            raise UsageError(f"syndrome length {syn.size} != {sector.check.rows}")
    llr = prior_llr(float(cfg["p"]))
    if model_dec is None:
        res = bp_decode(base.graph, syn, llr, base.iterations, base.eps,
                        early_stop=bool(cfg["early_stop"])).to_json_obj()
    else:
        mu = nbp_marginals(model_dec.model, syn, llr)[0]
        e = (mu < 0).astype(np.uint8)
        res = {"inferred": e.tolist(), "marginals": [float(x) for x in mu],
               "iterations_used": model_dec.model.n_cycles,
               "syndrome_matched": bool(np.array_equal(sector.syndrome(e), syn))}
    inferred = np.array(res["inferred"], dtype=np.uint8)
    truth = error if error is not None else (np.zeros(sector.n, np.uint8) if not syn.any() else None)
    if truth is not None:
        res["outcome"] = classify_outcome(truth, inferred, sector.check, sector.stabilizers).name
    else:
        res["outcome"] = None if res["syndrome_matched"] else "FLAGGED"
    print(json.dumps(res, sort_keys=True))
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    def globals_(parser, default):
        parser.add_argument("--config", default=default, help="JSON file with command options")
        parser.add_argument("--seed", type=int, default=default)
        parser.add_argument("--out", default=default,
                            help="output directory (or .json file for build-code)")
        parser.add_argument("--threads", type=int, default=default,
                            help="worker cap for Monte-Carlo blocks")
        parser.add_argument("--quiet", action="store_true", default=default or False)

    # global flags are accepted before or after the subcommand; the copies on
    # the subparsers must not overwrite values parsed at the top level
    common = argparse.ArgumentParser(add_help=False)
    globals_(common, argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="qnbp", description="Neural BP decoders for quantum LDPC codes.")
    globals_(p, None)
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-code", parents=[common], help="construct a code file")
    b.add_argument("family", nargs="?", choices=["toric", "bicycle", "hgp"])
    b.add_argument("--L", type=int, dest="L")
    b.add_argument("--n", type=int)
    b.add_argument("--k", type=int)
    b.add_argument("--w", type=int)
    b.add_argument("--c1")
    b.add_argument("--c2")
    b.set_defaults(func=cmd_build_code)

    t = sub.add_parser("train", parents=[common], help="train a neural BP decoder")
    t.set_defaults(func=cmd_train)

    def eval_opts(q):
        q.add_argument("--code")
        q.add_argument("--checkpoint")
        q.add_argument("--retarget", action="store_const", const=True)
        q.add_argument("--sector", choices=["x", "z", "xz"])
        q.add_argument("--iters", type=int, help="baseline BP iterations")
        q.add_argument("--eps", type=float)
        q.add_argument("--trials", type=int)
        q.add_argument("--compare", action="store_const", const=True)

    e = sub.add_parser("evaluate", parents=[common], help="logical error rate at one rate")
    eval_opts(e)
    e.add_argument("--p", type=float)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", parents=[common], help="logical error rate over several rates")
    eval_opts(s)
    s.add_argument("--rates", help="comma-separated increasing rates")
    s.set_defaults(func=cmd_sweep)

    i = sub.add_parser("inspect-weights", parents=[common], help="export cvvc weights with coordinates")
    i.add_argument("--code")
    i.add_argument("--checkpoint")
    i.add_argument("--sector", choices=["x", "z", "xz"])
    i.set_defaults(func=cmd_inspect_weights)

    d = sub.add_parser("decode-one", parents=[common], help="decode a single syndrome or error")
    d.add_argument("--code")
    d.add_argument("--checkpoint")
    d.add_argument("--retarget", action="store_const", const=True)
    d.add_argument("--sector", choices=["x", "z", "xz"])
    d.add_argument("--iters", type=int)
    d.add_argument("--eps", type=float)
    d.add_argument("--p", type=float)
    d.add_argument("--syndrome")
    d.add_argument("--error")
    d.add_argument("--early-stop", dest="early_stop", action="store_const", const=True)
    d.set_defaults(func=cmd_decode_one)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConstructionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONSTRUCTION
    except NumericalAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
