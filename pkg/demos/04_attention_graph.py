# %% [markdown]
# # A graph from attention
#
# A small causal transformer learns to predict the next spike's neuron and
# interval. Every attention map relates a query token (neuron i) to earlier
# key tokens (neuron j). Summing the attention that i-tokens pay to j-tokens
# and dividing by how often such a pairing was possible gives C[i, j], the
# average attention per available pairing.

# %%
import numpy as np

from latentgraph import LifParams, build_hub_adjacency, chronological_split, simulate, tokenize
from latentgraph.spikes import make_windows
from latentgraph.transformer import (TransformerConfig, aggregate_attention, record_attention,
                                     train_transformer)

net = build_hub_adjacency(n=20, n_hubs=2, density=0.15, hub_density=0.5, seed=3)
seq = tokenize(simulate(net, LifParams(), duration_ms=60_000.0, seed=4))
split = chronological_split(seq, 0.8)
cfg = TransformerConfig(vocab=20, d_model=32, n_heads=4, seq_len=32, epochs=3)
train_w = make_windows(split.train, cfg.seq_len)
ckpt = train_transformer(train_w, cfg, seed=0, val_windows=make_windows(split.test, cfg.seq_len))
print("validation loss per epoch:", np.round(ckpt.history.val_loss, 3))

# %% [markdown]
# Attention rows are probability distributions over strictly earlier tokens;
# the first position has nothing to look at and stays empty.

# %%
maps = record_attention(ckpt.model(), train_w[0][:2], train_w[1][:2])
rows = maps[:, :, 1:, :].sum(axis=-1)
print("maps:", maps.shape, " row sums within", float(np.abs(rows - 1).max()))

# %%
state = aggregate_attention([ckpt], train_w)
c = state.connectivity()
print("C in [0, 1]:", c.min() >= 0 and c.max() <= 1)
# do a hub's targets attend to it more than the neurons it does not reach?
for h in net.hub_ids:
    hit = net.adjacency[:, h] > 0
    miss = ~hit
    miss[h] = False
    print(f"hub {h}: C from its targets {c[hit, h].mean():.3f}, from the others {c[miss, h].mean():.3f}")
