import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latentgraph.lif import (GroundTruthNetwork, LifParams, LifSimulator, RunawayError,
                             analytic_isi, build_hub_adjacency, concatenate, simulate)


def uncoupled(n):
    return GroundTruthNetwork(n=n, adjacency=np.zeros((n, n)), hub_ids=[], sign=np.ones(n))


def test_two_neuron_full_density():
    net = build_hub_adjacency(n=2, n_hubs=0, density=1.0, hub_ratio=5.0, dale_fraction=0.8, seed=3)
    a = net.adjacency
    assert a.shape == (2, 2)
    assert np.all(np.diag(a) == 0)
    assert a[0, 1] != 0 and a[1, 0] != 0


def test_three_hubs_exceed_outbound_criterion():
    net = build_hub_adjacency(n=300, n_hubs=3, density=0.1, hub_ratio=5.0, seed=0)
    mass = net.outbound_mass()
    median = np.median(np.delete(mass, net.hub_ids))
    above = np.flatnonzero(mass >= 5.0 * median)
    assert sorted(above.tolist()) == sorted(net.hub_ids)
    assert len(above) == 3


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(5, 60))
def test_network_invariants(seed, n):
    net = build_hub_adjacency(n=n, n_hubs=min(3, n // 3), density=0.2, seed=seed)
    net.check(hub_ratio=5.0)
    a = net.adjacency
    assert np.all(np.diag(a) == 0)
    for j in range(n):
        col = a[:, j]
        assert np.all(col * net.sign[j] >= 0)


def test_adjacency_deterministic():
    a1 = build_hub_adjacency(50, seed=11).adjacency
    a2 = build_hub_adjacency(50, seed=11).adjacency
    assert a1.tobytes() == a2.tobytes()


@pytest.mark.parametrize("kwargs", [dict(n=5, n_hubs=5), dict(n=5, n_hubs=7),
                                    dict(n=5, n_hubs=1, density=0.0),
                                    dict(n=5, n_hubs=1, hub_ratio=1.0)])
def test_adjacency_rejects_bad_arguments(kwargs):
    with pytest.raises(ValueError):
        build_hub_adjacency(**kwargs)


def test_subthreshold_noise_free_is_silent():
    p = LifParams(sigma_noise=0.0, i_drive=0.9)
    train = simulate(uncoupled(4), p, duration_ms=2000.0, seed=0)
    assert len(train) == 0


@pytest.mark.parametrize("drive", [1.5, 2.0, 3.0])
def test_noise_free_isi_matches_closed_form(drive):
    p = LifParams(sigma_noise=0.0, i_drive=drive)
    expected = analytic_isi(p)
    # 100 ISIs after the first (randomly initialised) spike
    train = simulate(uncoupled(1), p, duration_ms=expected * 103, seed=0)
    isi = np.diff(train.times)
    assert len(isi) >= 100
    assert np.all(np.abs(isi[:100] - expected) <= p.dt_ms)


def test_simulation_deterministic():
    net = build_hub_adjacency(30, seed=1)
    a = simulate(net, LifParams(), 2000.0, seed=5)
    b = simulate(net, LifParams(), 2000.0, seed=5)
    assert a.times.tobytes() == b.times.tobytes()
    assert a.neurons.tobytes() == b.neurons.tobytes()
    c = simulate(net, LifParams(), 2000.0, seed=6)
    assert len(c) != len(a) or not np.array_equal(c.times, a.times)


def test_refractory_respected():
    net = build_hub_adjacency(40, seed=2, hub_density=0.5)
    p = LifParams()
    train = simulate(net, p, 5000.0, seed=0)
    assert len(train) > 1000
    for i in range(net.n):
        gaps = np.diff(train.spikes_of(i))
        assert np.all(gaps >= p.refractory_ms)


def test_count_scales_with_duration():
    net = build_hub_adjacency(40, seed=3)
    short = len(simulate(net, LifParams(), 4000.0, seed=9))
    long = len(simulate(net, LifParams(), 8000.0, seed=9))
    assert 0.8 * 2 <= long / short <= 1.2 * 2


def test_chunked_equals_single_run():
    net = build_hub_adjacency(30, seed=4)
    whole = LifSimulator(net, LifParams(), seed=8).advance(3000.0)
    sim = LifSimulator(net, LifParams(), seed=8)
    parts = concatenate([sim.advance(1500.0), sim.advance(1500.0)])
    assert whole.times.tobytes() == parts.times.tobytes()
    assert whole.neurons.tobytes() == parts.neurons.tobytes()


def test_runaway_guard():
    n = 20
    a = np.full((n, n), 0.8)
    np.fill_diagonal(a, 0)
    net = GroundTruthNetwork(n=n, adjacency=a, hub_ids=[], sign=np.ones(n))
    with pytest.raises(RunawayError):
        simulate(net, LifParams(), 2000.0, seed=0)


@pytest.mark.parametrize("field,value", [("tau_ms", math.nan), ("sigma_noise", math.inf),
                                         ("dt_ms", 5.0), ("v_reset", 2.0)])
def test_bad_params_rejected(field, value):
    p = LifParams(**{field: value})
    with pytest.raises(ValueError):
        simulate(uncoupled(2), p, 10.0)


def test_rejects_nonpositive_duration():
    with pytest.raises(ValueError):
        simulate(uncoupled(2), LifParams(), 0.0)


def test_spike_times_on_fixed_grid():
    train = simulate(build_hub_adjacency(10, seed=0), LifParams(), 500.0, seed=1)
    text = np.char.mod("%.4f", train.times).astype(float)
    assert np.array_equal(text, train.times)
