"""Neural belief propagation for quantum LDPC codes."""
from .bp import TannerGraph, bp_decode, bp_decode_batch, build_tanner, prior_llr
from .codes import (ClassicalCode, ConstructionError, CssCode, bicycle_code,
                    hypergraph_product, toric_code, validate_css)
from .evaluation import (BPDecoder, NBPDecoder, Outcome, OutcomeTally, classify_outcome,
                         monte_carlo, sweep, wilson_interval)
from .gf2 import BitMatrix, BitVector, gf2_nullspace, gf2_rank, gf2_rref
from .nbp import (NbpModel, init_identity, load_checkpoint, nbp_forward, retarget_tied_model,
                  save_checkpoint, tie_weights_toric)
from .training import TrainConfig, degeneracy_loss, classical_bce_loss, train

__version__ = "0.1.0"

__all__ = [
    "BPDecoder", "BitMatrix", "BitVector", "ClassicalCode", "ConstructionError", "CssCode",
    "NBPDecoder", "NbpModel", "Outcome", "OutcomeTally", "TannerGraph", "TrainConfig",
    "bicycle_code", "bp_decode", "bp_decode_batch", "build_tanner", "classical_bce_loss",
    "classify_outcome", "degeneracy_loss", "gf2_nullspace", "gf2_rank", "gf2_rref",
    "hypergraph_product", "init_identity", "load_checkpoint", "monte_carlo", "nbp_forward",
    "prior_llr", "retarget_tied_model", "save_checkpoint", "sweep", "tie_weights_toric",
    "toric_code", "train", "validate_css", "wilson_interval",
]
