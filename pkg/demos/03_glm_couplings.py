# %% [markdown]
# # Couplings from a point-process GLM
#
# Each neuron's spike probability in a bin is a logistic function of the
# recent history of every neuron, filtered through a few raised-cosine bumps.
# The filter from j to i is summarised by its largest-magnitude value, keeping
# the sign. We first check the machinery on data drawn from a known GLM.

# %%
import numpy as np

from latentgraph.glm import (GlmWeights, TrainConfig, build_design_matrix, extract_glm_connectivity,
                             fit_glm, raised_cosine_basis, sample_glm)

basis = raised_cosine_basis(b_count=3, window_bins=20)
print("basis peaks at lags:", basis.phi.argmax(axis=1) + 1)

w = np.zeros((3, 3, 3))
w[1, 0] = [1.5, 1.0, 0.5]     # 0 excites 1
w[2, 1] = [-2.0, -1.5, -1.0]  # 1 inhibits 2
truth = GlmWeights(w, np.full(3, -3.0))
y = sample_glm(truth, basis, t_bins=30_000, seed=0)

x = build_design_matrix(y, basis)
fit = fit_glm(x[:24_000], y[:24_000], x[24_000:], y[24_000:],
              TrainConfig(optimizer="adam", lr=0.05, max_epochs=600), b_count=3)
j = extract_glm_connectivity(fit.weights, basis).matrix
print("recovered J (row = target):\n", np.round(j, 2))
print("sign of 0->1:", np.sign(j[1, 0]), " sign of 1->2:", np.sign(j[2, 1]))
