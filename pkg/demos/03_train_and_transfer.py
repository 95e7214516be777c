"""Train a small neural BP decoder on the L=4 toric code and reuse it at L=6.

The run here is short (a few hundred minibatches) so it finishes in about a
minute.  The acceptance run in the test suite uses 1500 minibatches and
2x10^5 evaluation trials.
"""
# %%
from qnbp import BPDecoder, NBPDecoder, TannerGraph, TrainConfig, monte_carlo, toric_code, train
from qnbp.nbp import retarget_tied_model

small, large = toric_code(4), toric_code(6)

# %% [markdown]
# Weights are tied under translations by two lattice units, so the learned
# parameters describe a 2x2 unit cell and can be tiled onto any even L.

# %%
cfg = TrainConfig(n_cycles=12, residual=False, sharing_period=[2, 2], optimizer="adam",
                  lr=1e-3, batch_size=120, minibatches=300, seed=2)
model, history = train(cfg, small)
print("mean loss, first vs last 50 minibatches:",
      sum(h["mean_loss"] for h in history[:50]) / 50,
      sum(h["mean_loss"] for h in history[-50:]) / 50)


# %%
def report(name, tally):
    lo, hi = tally.wilson()
    print(f"{name:>14s}  failure {tally.failure_rate:.2e}  95% CI [{lo:.2e}, {hi:.2e}]"
          f"  degenerate successes {tally.success_degenerate}")


trials = 20000
report("BP L=4", monte_carlo(BPDecoder(model.graph, 12), small, "xz", 0.01, trials, seed=1))
report("NBP L=4", monte_carlo(NBPDecoder(model), small, "xz", 0.01, trials, seed=1))

# %%
g6 = TannerGraph(large.sector("xz").check)
big = retarget_tied_model(model, g6, large.lattice)
report("BP L=6", monte_carlo(BPDecoder(g6, 12), large, "xz", 0.01, trials, seed=1))
report("NBP L=4->6", monte_carlo(NBPDecoder(big), large, "xz", 0.01, trials, seed=1))
