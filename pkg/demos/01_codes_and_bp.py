"""Codes, Tanner graphs and plain belief propagation.

Run top to bottom (or cell by cell in an editor that understands ``# %%``).
"""
# %%
import numpy as np

from qnbp import TannerGraph, bp_decode, hypergraph_product, prior_llr, toric_code, validate_css
from qnbp.codes import bch_1575, bicycle_code, hamming_743
from qnbp.gf2 import in_rowspace

# %% [markdown]
# Three code families.  ``validate_css`` reports n, k and whether the X and Z
# stabilizers commute.

# %%
for code in (toric_code(4), hypergraph_product(hamming_743(), bch_1575()),
             bicycle_code(256, 32, 8, seed=0)):
    r = validate_css(code)
    print(f"{r['name']:>24s}  [[{r['n']},{r['k']}]]  commutes={r['commutes']}")

# %% [markdown]
# A single bit flip on the L=4 toric code lights up two plaquettes.  BP finds a
# correction whose difference from the true error is a stabilizer (often zero).

# %%
code = toric_code(4)
sector = code.sector("x")          # X errors, detected by plaquettes
graph = TannerGraph(sector.check)
e = np.zeros(code.n, dtype=np.uint8)
e[5] = 1
s = sector.syndrome(e)
res = bp_decode(graph, s, prior_llr(0.05), T=12)
print("syndrome weight", s.sum(), "| inferred support", np.flatnonzero(res.inferred),
      "| matched", res.syndrome_matched, "after", res.iterations_used, "iterations")
print("residual is a stabilizer:", in_rowspace(sector.stabilizers, e ^ res.inferred))

# %% [markdown]
# On L=2 every pair of plaquettes shares two edges, so the two single-flip
# explanations are equally likely and BP never breaks the tie.  That failure
# mode (symmetric degeneracy) is what the trained decoder later learns around.

# %%
small = toric_code(2)
sec2 = small.sector("x")
e2 = np.zeros(small.n, dtype=np.uint8)
e2[0] = 1
res2 = bp_decode(TannerGraph(sec2.check), sec2.syndrome(e2), prior_llr(0.05), T=12)
print("L=2 marginals:", np.round(res2.marginals, 3))
print("matched:", res2.syndrome_matched)
