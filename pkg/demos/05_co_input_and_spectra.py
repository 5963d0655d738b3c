# %% [markdown]
# # Scoring a graph three ways
#
# An estimate is compared with the truth as a directed graph, through its
# co-input matrix ``A @ A.T`` (how much two neurons share their inputs) and by
# magnitude alone. Correlations are signed r squared over off-diagonal
# entries. The spectral distance compares sorted singular values after
# centering and scaling, so it ignores shifts, scale and node relabelling.

# %%
import numpy as np

from latentgraph import ConnectivityEstimate, build_hub_adjacency, co_input, compare, spectral_divergence

net = build_hub_adjacency(n=40, seed=5, hub_density=0.5)
a = net.adjacency
b = co_input(a)
print("co-input min entry:", b.min(), " smallest eigenvalue:", round(float(np.linalg.eigvalsh(b).min()), 9))

# %%
rng = np.random.default_rng(0)
print("d(A, 3A + 2) =", spectral_divergence(a, 3 * a + 2))
perm = rng.permutation(40)
print("d(A, relabelled A) =", round(spectral_divergence(a, a[np.ix_(perm, perm)]), 12))

# %% [markdown]
# A noisy copy of the truth keeps most of the hub structure. Its co-input view
# tends to agree with the true co-input better than the raw edges agree,
# because shared hub input dominates both.

# %%
noisy = a + rng.normal(scale=0.5 * a.std(), size=a.shape)
rep = compare(net, [ConnectivityEstimate(noisy, "glm"), ConnectivityEstimate(a, "ground_truth")],
              ["noisy", "truth"])
print(rep.table())
