"""Model-facing views of a spike train: binary bins, ISI tokens, splits."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lif import SpikeTrain

__all__ = [
    "BinnedSpikes",
    "TokenSequence",
    "DataSplit",
    "bin_spikes",
    "tokenize",
    "detokenize",
    "chronological_split",
    "make_windows",
]


@dataclass
class BinnedSpikes:
    y: np.ndarray  # (T_bins, N) in {0, 1}
    bin_ms: float
    n: int

    @property
    def t_bins(self) -> int:
        return self.y.shape[0]


@dataclass
class TokenSequence:
    """``neurons[k]`` fired ``dt_ms[k]`` after the previous event (any neuron)."""

    neurons: np.ndarray
    dt_ms: np.ndarray
    n: int
    start_ms: float = 0.0
    origin: str = ""

    def __len__(self):
        return len(self.neurons)

    @property
    def tokens(self) -> list[tuple[int, float]]:
        return list(zip(self.neurons.tolist(), self.dt_ms.tolist()))


@dataclass
class DataSplit:
    train: SpikeTrain | TokenSequence
    test: SpikeTrain | TokenSequence
    fraction: float
    cut_ms: float


def bin_spikes(train: SpikeTrain, bin_ms: float = 1.0) -> BinnedSpikes:
    """Binary matrix, ``y[t, i] = 1`` iff neuron i fires in ``[t*bin, (t+1)*bin)``."""
    if not bin_ms > 0:
        raise ValueError("bin_ms must be positive")
    if train.duration_ms <= 0:
        raise ValueError("cannot bin a train of zero duration")
    t_bins = math.ceil(train.duration_ms / bin_ms - 1e-9)
    y = np.zeros((t_bins, train.n), dtype=np.uint8)
    idx = np.floor(train.times / bin_ms).astype(np.int64)
    # an event exactly at duration_ms lands in the last bin
    idx = np.minimum(idx, t_bins - 1)
    y[idx, train.neurons] = 1
    return BinnedSpikes(y=y, bin_ms=bin_ms, n=train.n)


def tokenize(train: SpikeTrain, origin: str = "") -> TokenSequence:
    """Global inter-event intervals; the first token gets ``dt = 0``."""
    times = train.times
    if np.any(np.diff(times) < 0):
        raise ValueError("events must be time-sorted")
    dt = np.diff(times, prepend=times[:1]) if len(times) else np.empty(0)
    start = float(times[0]) if len(times) else 0.0
    return TokenSequence(neurons=train.neurons.copy(), dt_ms=dt, n=train.n,
                         start_ms=start, origin=origin)


def detokenize(seq: TokenSequence, duration_ms: float) -> SpikeTrain:
    """Inverse of :func:`tokenize` given the anchoring ``start_ms``.

    Cumulative summation of float intervals is not exact, so times are
    snapped back to the 4-decimal grid used by the simulator and CSV files.
    """
    times = seq.start_ms + np.cumsum(seq.dt_ms)
    times = np.round(times, 6)
    times = np.char.mod("%.4f", times).astype(float) if len(times) else times
    return SpikeTrain(times, seq.neurons.copy(), duration_ms=duration_ms, n=seq.n)


def chronological_split(x: SpikeTrain | TokenSequence, fraction: float = 0.8) -> DataSplit:
    """Cut at a time point; events strictly before it go to ``train``.

    For a spike train the cut is ``fraction * duration_ms``; for a token
    sequence it is the time quantile of the events (the sequence carries no
    duration), i.e. the first ``round(fraction * K)`` tokens.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    if isinstance(x, SpikeTrain):
        cut = fraction * x.duration_ms
        k = int(np.searchsorted(x.times, cut, side="left"))
        if k == 0 or k == len(x):
            raise ValueError("split leaves one part empty")
        train = SpikeTrain(x.times[:k], x.neurons[:k], duration_ms=cut, n=x.n)
        test = SpikeTrain(x.times[k:], x.neurons[k:], duration_ms=x.duration_ms, n=x.n)
        # test keeps absolute times; its duration is the absolute end time
        return DataSplit(train, test, fraction, cut)

    k = int(round(fraction * len(x)))
    if k == 0 or k == len(x):
        raise ValueError("split leaves one part empty")
    times = x.start_ms + np.cumsum(x.dt_ms)
    train = TokenSequence(x.neurons[:k].copy(), x.dt_ms[:k].copy(), x.n, x.start_ms, x.origin)
    # the first test token keeps its interval to the last train event
    test = TokenSequence(x.neurons[k:].copy(), x.dt_ms[k:].copy(), x.n,
                         float(times[k - 1]), x.origin)
    return DataSplit(train, test, fraction, float(times[k]))


def make_windows(seq: TokenSequence, seq_len: int = 64, stride: int | None = None):
    """Cut a token sequence into ``(n_windows, seq_len)`` id and interval arrays.

    Windows are non-overlapping by default; a trailing remainder shorter than
    ``seq_len`` is dropped.
    """
    stride = stride or seq_len
    if seq_len < 2:
        raise ValueError("seq_len must be >= 2")
    starts = np.arange(0, len(seq) - seq_len + 1, stride)
    if len(starts) == 0:
        return np.empty((0, seq_len), np.int64), np.empty((0, seq_len))
    idx = starts[:, None] + np.arange(seq_len)[None, :]
    return seq.neurons[idx], seq.dt_ms[idx]
