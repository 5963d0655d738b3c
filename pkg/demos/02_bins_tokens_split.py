# %% [markdown]
# # Two views of the same spikes
#
# The GLM sees spikes as a 0/1 matrix of 1 ms bins. The transformer sees them
# as a sentence: one token per spike carrying the neuron id and the time
# since the previous spike anywhere in the network.

# %%
import numpy as np

from latentgraph import LifParams, bin_spikes, build_hub_adjacency, chronological_split, simulate, tokenize
from latentgraph.spikes import detokenize, make_windows

net = build_hub_adjacency(n=20, seed=0, hub_density=0.5)
spikes = simulate(net, LifParams(), duration_ms=2_000.0, seed=1)

binned = bin_spikes(spikes, bin_ms=1.0)
print("bins x neurons:", binned.y.shape, " occupied bins:", int(binned.y.sum()))

seq = tokenize(spikes)
print("first tokens (neuron, dt_ms):", [(i, round(d, 4)) for i, d in seq.tokens[:5]])

# %% [markdown]
# Tokens keep enough information to rebuild the spike train exactly, which is
# a cheap guard against off-by-one mistakes in the interval bookkeeping.

# %%
back = detokenize(seq, spikes.duration_ms)
print("round trip exact:", back.times.tobytes() == spikes.times.tobytes())

# %% [markdown]
# ## Chronological split and windows
#
# Training data always precede test data in time. The token stream is then
# cut into non-overlapping windows of 64 tokens.

# %%
split = chronological_split(seq, 0.8)
ids, dts = make_windows(split.train, 64)
print("train / test tokens:", len(split.train), len(split.test), " windows:", ids.shape)
