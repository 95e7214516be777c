"""Why a bitwise loss is the wrong objective for a degenerate code."""
# %%
import numpy as np

from qnbp import classical_bce_loss, degeneracy_loss, toric_code
from qnbp.gf2 import gf2_nullspace, in_rowspace

code = toric_code(2)
sec = code.sector("xz")
e = np.zeros(sec.n, dtype=np.uint8)
e[[1, 12]] = 1

# %% [markdown]
# Build three confident decoders' outputs: the true error, the true error times
# a stabilizer (physically identical), and the true error times a logical
# operator (a genuine failure).  Marginals are saturated LLRs, +50 for "no flip".

# %%
stab = sec.stabilizers.dense[3]
logical = next(v for v in gf2_nullspace(sec.check).dense if not in_rowspace(sec.stabilizers, v))


def confident(v):
    return np.where(v == 1, -50.0, 50.0)


for label, guess in [("exact", e), ("e + stabilizer", e ^ stab), ("e + logical", e ^ logical)]:
    mu = confident(guess)
    print(f"{label:>15s}  degeneracy={float(degeneracy_loss(mu, e, sec.loss_matrix)):8.3g}"
          f"  bce={float(classical_bce_loss(mu, e)) + 0.0:8.3g}")

# %% [markdown]
# The bitwise loss punishes the stabilizer-equivalent answer as hard as a
# wrong one.  The degeneracy loss scores it zero and still penalises the
# logical error, so gradients only push away from real failures.
