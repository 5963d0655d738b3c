"""Recurrent leaky integrate-and-fire network with hub neurons.

Membrane dynamics (Euler-Maruyama, dimensionless voltage, time in ms)::

    V <- V + dt * (I - V) / tau + sigma * sqrt(2 dt / tau) * xi + pulse

``pulse`` is the coupling term. The noise-driven SDE has no synaptic term of
its own, so a spike of presynaptic neuron ``j`` at step ``k`` adds the column
``A[:, j]`` to every postsynaptic voltage at step ``k + 1`` (instantaneous
delta-pulse synapse). Neurons in their refractory period are clamped to
``v_reset`` and ignore incoming pulses.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

__all__ = [
    "GroundTruthNetwork",
    "LifParams",
    "SpikeTrain",
    "RunawayError",
    "LifSimulator",
    "build_hub_adjacency",
    "simulate",
    "analytic_isi",
]


class RunawayError(RuntimeError):
    """Population activity exceeded the runaway guard."""


@dataclass
class GroundTruthNetwork:
    """Signed directed adjacency, ``adjacency[i, j]`` = weight from j onto i."""

    n: int
    adjacency: np.ndarray
    hub_ids: list[int]
    sign: np.ndarray

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=float)
        self.sign = np.asarray(self.sign, dtype=int)
        self.hub_ids = [int(h) for h in self.hub_ids]
        if self.adjacency.shape != (self.n, self.n):
            raise ValueError(f"adjacency must be {self.n}x{self.n}, got {self.adjacency.shape}")

    def outbound_mass(self) -> np.ndarray:
        """Total absolute outgoing weight of each neuron (column sums of |A|)."""
        return np.abs(self.adjacency).sum(axis=0)

    def check(self, hub_ratio: float | None = None) -> None:
        """Raise ``ValueError`` if a structural invariant is violated."""
        a = self.adjacency
        if np.any(np.diag(a) != 0):
            raise ValueError("autapse: nonzero diagonal")
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite weights")
        if np.any(a * self.sign[None, :] < 0):
            raise ValueError("column violates Dale sign")
        if hub_ratio is not None and self.hub_ids:
            mass = self.outbound_mass()
            others = np.delete(mass, self.hub_ids)
            floor = hub_ratio * np.median(others)
            if np.any(mass[self.hub_ids] < floor):
                raise ValueError("hub outbound mass below hub_ratio x median")


@dataclass
class LifParams:
    tau_ms: float = 10.0
    sigma_noise: float = 0.5
    i_drive: float = 0.9
    v_thresh: float = 1.0
    v_reset: float = 0.0
    refractory_ms: float = 2.0
    dt_ms: float = 0.1
    # runaway guard: abort when a 10 ms window exceeds
    # runaway_factor * baseline_hz of population-mean rate
    baseline_hz: float = 4.0
    runaway_factor: float = 50.0
    window_ms: float = 10.0

    def validate(self) -> None:
        for name, value in asdict(self).items():
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if self.tau_ms <= 0 or self.dt_ms <= 0:
            raise ValueError("tau_ms and dt_ms must be positive")
        if self.dt_ms > self.tau_ms / 5:
            raise ValueError("dt_ms must be <= tau_ms / 5")
        if self.v_reset >= self.v_thresh:
            raise ValueError("v_reset must be below v_thresh")
        if self.refractory_ms < 0 or self.sigma_noise < 0:
            raise ValueError("refractory_ms and sigma_noise must be non-negative")


@dataclass
class SpikeTrain:
    """Time-ordered spike events. ``times`` in ms, ``neurons`` in [0, n)."""

    times: np.ndarray
    neurons: np.ndarray
    duration_ms: float
    n: int

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.neurons = np.asarray(self.neurons, dtype=np.int64).reshape(-1)
        if self.times.shape != self.neurons.shape:
            raise ValueError("times and neurons must have the same length")
        if len(self.times):
            if np.any(np.diff(self.times) < 0):
                raise ValueError("spike times must be non-decreasing")
            if self.neurons.min() < 0 or self.neurons.max() >= self.n:
                raise ValueError("neuron index out of range")

    def __len__(self):
        return len(self.times)

    @property
    def events(self) -> list[tuple[float, int]]:
        return list(zip(self.times.tolist(), self.neurons.tolist()))

    def counts(self) -> np.ndarray:
        return np.bincount(self.neurons, minlength=self.n)

    def rates_hz(self) -> np.ndarray:
        return self.counts() / (self.duration_ms / 1000.0)

    def spikes_of(self, i: int) -> np.ndarray:
        return self.times[self.neurons == i]


def build_hub_adjacency(
    n: int,
    n_hubs: int = 3,
    density: float = 0.1,
    hub_ratio: float = 5.0,
    dale_fraction: float = 0.8,
    seed: int = 0,
    w0: float = 0.05,
    inhibitory_gain: float = 1.0,
    hub_density: float | None = None,
) -> GroundTruthNetwork:
    """Random Dale-signed network with ``n_hubs`` strong-outbound hubs.

    Each off-diagonal pair is connected with probability ``density``; weight
    magnitudes are Exponential(mean ``w0``), multiplied by ``inhibitory_gain``
    for inhibitory presynaptic neurons. Hubs are excitatory, project with
    probability ``hub_density`` (default ``min(1, 2 * density)``) and draw
    magnitudes with mean ``hub_ratio * w0``.
    A hub column whose total mass still falls below ``hub_ratio`` times the
    median non-hub outbound mass is rescaled up to that floor, and a hub that
    drew no targets at all is wired to one random neuron.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if not 0 <= n_hubs < n:
        raise ValueError(f"n_hubs must be in [0, n), got {n_hubs} with n={n}")
    if not 0 < density <= 1:
        raise ValueError(f"density must be in (0, 1], got {density}")
    if hub_ratio <= 1:
        raise ValueError("hub_ratio must exceed 1")
    if not 0 <= dale_fraction <= 1:
        raise ValueError("dale_fraction must be in [0, 1]")

    rng = np.random.default_rng(seed)
    n_exc = int(round(dale_fraction * n))
    sign = -np.ones(n, dtype=int)
    sign[rng.permutation(n)[:n_exc]] = 1
    exc = np.flatnonzero(sign > 0)
    if n_hubs > len(exc):
        raise ValueError("not enough excitatory neurons to host the hubs")
    hubs = np.sort(rng.choice(exc, size=n_hubs, replace=False)) if n_hubs else np.array([], int)

    prob = np.full((n, n), density)
    prob[:, hubs] = min(1.0, 2 * density) if hub_density is None else hub_density
    mask = rng.random((n, n)) < prob
    np.fill_diagonal(mask, False)
    mag = rng.exponential(w0, size=(n, n))
    mag[:, hubs] *= hub_ratio
    mag[:, sign < 0] *= inhibitory_gain
    a = np.where(mask, mag, 0.0) * sign[None, :]

    if n_hubs:
        mass = np.abs(a).sum(axis=0)
        floor = hub_ratio * np.median(np.delete(mass, hubs))
        for h in hubs:
            if mass[h] == 0:
                # tiny graphs can leave a hub without targets; give it one
                target = rng.choice(np.delete(np.arange(n), h))
                a[target, h] = max(floor, hub_ratio * w0)
            elif mass[h] < floor:
                a[:, h] *= floor / mass[h] * (1 + 1e-12)  # stay above after rounding
    if not np.any(a):
        raise ValueError("empty graph: raise density or n")
    net = GroundTruthNetwork(n=n, adjacency=a, hub_ids=hubs.tolist(), sign=sign)
    net.check(hub_ratio)
    return net


@numba.njit(cache=True)
def _lif_kernel(v, refr, pending, a, noise, step0, decay, drive, noise_scale,
                v_thresh, v_reset, ref_steps, window_steps, window_count,
                max_per_window, out_steps, out_neurons):
    n = v.shape[0]
    n_out = 0
    nxt = np.zeros(n)
    for k in range(noise.shape[0]):
        step = step0 + k
        for i in range(n):
            nxt[i] = 0.0
        for i in range(n):
            if refr[i] > 0:
                refr[i] -= 1
                v[i] = v_reset
                continue
            v[i] += decay * (drive - v[i]) + noise_scale * noise[k, i] + pending[i]
            if v[i] >= v_thresh:
                v[i] = v_reset
                refr[i] = ref_steps
                if n_out == out_steps.shape[0]:
                    return n_out, -1, window_count
                out_steps[n_out] = step
                out_neurons[n_out] = i
                n_out += 1
                window_count += 1
                for r in range(n):
                    nxt[r] += a[r, i]
        for i in range(n):
            pending[i] = nxt[i]
        if (step + 1) % window_steps == 0:
            if window_count > max_per_window:
                return n_out, step, window_count
            window_count = 0
    return n_out, -2, window_count


class LifSimulator:
    """Stateful simulator; successive :meth:`advance` calls continue one run.

    Splitting a run into several ``advance`` calls yields the same events as a
    single call, bit for bit, because the noise stream is drawn sequentially
    from one generator and all dynamic state is carried over.
    """

    block_steps = 20_000

    def __init__(self, net: GroundTruthNetwork, params: LifParams | None = None, seed: int = 0):
        self.net = net
        self.params = params or LifParams()
        self.params.validate()
        if not np.all(np.isfinite(net.adjacency)):
            raise ValueError("adjacency has non-finite entries")
        p = self.params
        self.rng = np.random.default_rng(seed)
        self.v = self.rng.uniform(p.v_reset, p.v_thresh, size=net.n)
        self.refr = np.zeros(net.n, dtype=np.int64)
        self.pending = np.zeros(net.n)
        self.step = 0
        self.window_count = 0
        self._a = np.ascontiguousarray(net.adjacency, dtype=float)

    @property
    def time_ms(self) -> float:
        return self.step * self.params.dt_ms

    def advance(self, duration_ms: float) -> SpikeTrain:
        """Integrate for ``duration_ms`` and return the spikes emitted."""
        p = self.params
        if not duration_ms > 0 or not math.isfinite(duration_ms):
            raise ValueError("duration_ms must be positive and finite")
        n_steps = int(round(duration_ms / p.dt_ms))
        ref_steps = int(round(p.refractory_ms / p.dt_ms))
        window_steps = max(1, int(round(p.window_ms / p.dt_ms)))
        max_per_window = p.runaway_factor * p.baseline_hz * self.net.n * p.window_ms / 1000.0
        decay = p.dt_ms / p.tau_ms
        noise_scale = p.sigma_noise * math.sqrt(2.0 * p.dt_ms / p.tau_ms)
        start_ms = self.time_ms

        steps, neurons = [], []
        done = 0
        while done < n_steps:
            m = min(self.block_steps, n_steps - done)
            noise = self.rng.standard_normal((m, self.net.n))
            # every neuron can fire at most once per refractory cycle
            cap = m * self.net.n // (ref_steps + 1) + self.net.n
            out_s = np.empty(cap, dtype=np.int64)
            out_n = np.empty(cap, dtype=np.int64)
            cnt, flag, self.window_count = _lif_kernel(
                self.v, self.refr, self.pending, self._a, noise, self.step, decay,
                p.i_drive, noise_scale, p.v_thresh, p.v_reset, ref_steps,
                window_steps, self.window_count, max_per_window, out_s, out_n)
            if flag == -1:
                raise RuntimeError("spike buffer overflow")
            if flag >= 0:
                raise RunawayError(
                    f"population rate exceeded {p.runaway_factor}x baseline in the "
                    f"{p.window_ms} ms window ending at {(flag + 1) * p.dt_ms:.1f} ms")
            steps.append(out_s[:cnt])
            neurons.append(out_n[:cnt])
            self.step += m
            done += m

        steps = np.concatenate(steps) if steps else np.empty(0, np.int64)
        times = _fixed_ms((steps + 1) * p.dt_ms)
        return SpikeTrain(times, np.concatenate(neurons) if neurons else steps,
                          duration_ms=_fixed_ms(np.array([n_steps * p.dt_ms]))[0], n=self.net.n)


def _fixed_ms(t: np.ndarray, decimals: int = 4) -> np.ndarray:
    # canonical fixed-precision times, identical to what a CSV round trip yields
    return np.char.mod(f"%.{decimals}f", np.asarray(t, dtype=float)).astype(float)


def simulate(net: GroundTruthNetwork, params: LifParams | None = None,
             duration_ms: float = 1000.0, seed: int = 0) -> SpikeTrain:
    return LifSimulator(net, params, seed).advance(duration_ms)


def concatenate(trains: list[SpikeTrain]) -> SpikeTrain:
    """Join consecutive segments produced by one :class:`LifSimulator`."""
    return SpikeTrain(np.concatenate([t.times for t in trains]),
                      np.concatenate([t.neurons for t in trains]),
                      duration_ms=float(sum(t.duration_ms for t in trains)),
                      n=trains[0].n)


def analytic_isi(params: LifParams) -> float:
    """Noise-free, uncoupled ISI: tau ln((I - v_reset)/(I - v_thresh)) + refractory."""
    p = params
    if p.i_drive <= p.v_thresh:
        return math.inf
    return p.tau_ms * math.log((p.i_drive - p.v_reset) / (p.i_drive - p.v_thresh)) + p.refractory_ms
