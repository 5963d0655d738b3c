"""Ground-truth benchmark for connectivity read out of trained spike models.

A leaky integrate-and-fire hub network supplies spikes and a known signed
adjacency. Two models are fit to the spikes: a point-process GLM with
raised-cosine history filters, and a small causal transformer whose
attention maps are pooled into a neuron-by-neuron graph. Both graphs are
scored against the truth edge by edge, through the co-input matrix
``A @ A.T`` and by magnitude.
"""
__version__ = "0.1.0"

from .estimate import ConnectivityEstimate, ensemble_average
from .lif import GroundTruthNetwork, LifParams, LifSimulator, SpikeTrain, build_hub_adjacency, simulate
from .metrics import MetricReport, co_input, compare, signed_r2, spectral_divergence
from .spikes import BinnedSpikes, TokenSequence, bin_spikes, chronological_split, make_windows, tokenize

__all__ = [
    "BinnedSpikes", "ConnectivityEstimate", "GroundTruthNetwork", "LifParams", "LifSimulator",
    "MetricReport", "SpikeTrain", "TokenSequence", "bin_spikes", "build_hub_adjacency",
    "chronological_split", "co_input", "compare", "ensemble_average", "make_windows",
    "signed_r2", "simulate", "spectral_divergence", "tokenize",
]
