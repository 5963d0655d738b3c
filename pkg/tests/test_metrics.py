import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from latentgraph.estimate import ConnectivityEstimate, ensemble_average
from latentgraph.lif import build_hub_adjacency
from latentgraph.metrics import (MetricReport, build_views, co_input, compare, correlation,
                                 signed_r2, spectral_divergence)


def rand_matrix(seed, n=8):
    return np.random.default_rng(seed).normal(size=(n, n))


# -- co-input ------------------------------------------------------------

def test_co_input_identity():
    np.testing.assert_array_equal(co_input(np.eye(4)), np.eye(4))


def test_co_input_hand_example():
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    # B[i, k] = sum_j a[i, j] a[k, j]
    expected = np.array([[0 * 0 + 1 * 1, 0 * 0 + 1 * 0], [0 * 0 + 0 * 1, 0.0]])
    np.testing.assert_array_equal(co_input(a), expected)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_co_input_dale_nonnegative_psd(seed):
    net = build_hub_adjacency(30, seed=seed, density=0.3)
    b = co_input(net.adjacency)
    assert b.min() >= -1e-12
    assert np.abs(b - b.T).max() <= 1e-9
    assert np.linalg.eigvalsh(b).min() >= -1e-9 * np.linalg.norm(b, 2)


# -- correlations --------------------------------------------------------

def test_affine_gives_one():
    x = rand_matrix(0)
    assert signed_r2(x, 2 * x + 3) == pytest.approx(1.0, abs=1e-12)
    assert signed_r2(x, 2 * x + 3, "spearman") == pytest.approx(1.0, abs=1e-12)


def test_negation_gives_minus_one():
    x = rand_matrix(1)
    assert signed_r2(x, -x) == pytest.approx(-1.0, abs=1e-12)
    assert signed_r2(x, -x, "spearman") == pytest.approx(-1.0, abs=1e-12)


def brute_rank(v):
    # average ranks, 1-based, by counting
    return np.array([np.sum(v < e) + (np.sum(v == e) + 1) / 2 for e in v])


def brute_pearson(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((p - ma) * (q - mb) for p, q in zip(a, b))
    va = sum((p - ma) ** 2 for p in a)
    vb = sum((q - mb) ** 2 for q in b)
    return cov / math.sqrt(va * vb)


def test_integer_matrices_against_brute_force():
    x = np.array([[0, 3, 1], [2, 0, 2], [5, 1, 0]], float)
    y = np.array([[9, 1, 4], [4, 7, 4], [0, 2, 8]], float)
    off = ~np.eye(3, dtype=bool)
    xs, ys = x[off], y[off]
    r_p = brute_pearson(xs, ys)
    r_s = brute_pearson(brute_rank(xs), brute_rank(ys))
    assert signed_r2(x, y, "pearson") == pytest.approx(math.copysign(r_p ** 2, r_p), abs=1e-12)
    assert signed_r2(x, y, "spearman") == pytest.approx(math.copysign(r_s ** 2, r_s), abs=1e-12)


def test_diagonal_excluded_by_default():
    x = rand_matrix(2, 5)
    y = x.copy()
    np.fill_diagonal(y, 100.0)
    assert signed_r2(x, y) == pytest.approx(1.0)
    assert signed_r2(x, y, exclude_diagonal=False) < 0.9


def test_constant_input_is_missing():
    x = rand_matrix(3, 4)
    assert math.isnan(signed_r2(x, np.ones((4, 4))))


def test_too_few_pairs():
    with pytest.raises(ValueError):
        signed_r2(np.eye(1), np.eye(1))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 100), st.floats(-50, 50))
def test_correlation_invariances(seed, alpha, c):
    x, y = rand_matrix(seed), rand_matrix(seed + 1)
    base_p = signed_r2(x, y, "pearson")
    assert signed_r2(alpha * x + c, y, "pearson") == pytest.approx(base_p, abs=1e-9)
    base_s = signed_r2(x, y, "spearman")
    assert signed_r2(np.exp(x / 3), y, "spearman") == base_s
    assert signed_r2(x, y ** 3, "spearman") == base_s


# -- spectral divergence -------------------------------------------------

def test_self_distance_zero():
    a = rand_matrix(4)
    assert spectral_divergence(a, a) == 0.0


def test_diag_example_against_dense_svd():
    a = np.array([[2.0, 0.0], [0.0, 1.0]])
    b = np.eye(2)

    def norm_spectrum(m):
        s = np.linalg.svd(m - m.sum() / m.size, compute_uv=False)
        s = np.sort(s)[::-1]
        return s / s[0] if s[0] > 0 else s

    expected = float(np.sqrt(np.sum((norm_spectrum(a) - norm_spectrum(b)) ** 2)))
    assert spectral_divergence(a, b) == pytest.approx(expected, abs=1e-10)
    assert spectral_divergence(a, b) > 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(1e-3, 1e3), st.floats(-1e3, 1e3))
def test_shift_scale_invariance(seed, alpha, c):
    a = rand_matrix(seed, 10)
    assert spectral_divergence(a, alpha * a + c * np.ones((10, 10))) <= 1e-9


def test_zero_matrix_guard():
    assert spectral_divergence(np.zeros((3, 3)), np.zeros((3, 3))) == 0.0
    assert math.isfinite(spectral_divergence(np.zeros((3, 3)), rand_matrix(0, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_pseudometric(seed):
    a, b, c = rand_matrix(seed), rand_matrix(seed + 1), rand_matrix(seed + 2)
    dab = spectral_divergence(a, b)
    assert dab >= 0
    assert dab == pytest.approx(spectral_divergence(b, a), abs=1e-14)
    assert spectral_divergence(a, c) <= dab + spectral_divergence(b, c) + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_permutation_invariance(seed):
    a, b = rand_matrix(seed), rand_matrix(seed + 7)
    p = np.random.default_rng(seed).permutation(8)
    pa, pb = a[np.ix_(p, p)], b[np.ix_(p, p)]
    assert spectral_divergence(pa, pb) == pytest.approx(spectral_divergence(a, b), abs=1e-12)


def test_truncation():
    a, b = rand_matrix(5), rand_matrix(6)
    assert spectral_divergence(a, b, k=1) == 0.0
    assert spectral_divergence(a, b, k=3) <= spectral_divergence(a, b)


# -- views and report ----------------------------------------------------

def test_views():
    net = build_hub_adjacency(10, seed=0)
    est = ConnectivityEstimate(np.random.default_rng(0).normal(size=(10, 10)), "glm")
    views = build_views(net, est)
    assert set(views) == {"true_conn", "co_input", "abs_mag"}
    a, c = views["co_input"]
    np.testing.assert_allclose(a, net.adjacency @ net.adjacency.T)
    assert np.all(views["abs_mag"][1] >= 0)
    with pytest.raises(ValueError):
        build_views(net, ConnectivityEstimate(np.zeros((3, 3)), "glm"))


def test_self_comparison_is_perfect():
    net = build_hub_adjacency(20, seed=1)
    rep = compare(net, [ConnectivityEstimate(net.adjacency, "ground_truth")], ["self"])
    for view in rep.scores["self"].values():
        assert view["pearson_r2_signed"] == pytest.approx(1.0)
        assert view["spearman_r2_signed"] == pytest.approx(1.0)
        assert view["spectral_dist"] == pytest.approx(0.0, abs=1e-12)


def test_scale_does_not_change_report():
    net = build_hub_adjacency(20, seed=2)
    c = np.random.default_rng(1).normal(size=(20, 20))
    r1 = compare(net, [ConnectivityEstimate(c, "glm")])
    r2 = compare(net, [ConnectivityEstimate(7.5 * c, "glm")])
    for view in r1.scores["glm"]:
        for m, v in r1.scores["glm"][view].items():
            assert r2.scores["glm"][view][m] == pytest.approx(v, abs=1e-9)


def test_report_serialization():
    net = build_hub_adjacency(12, seed=3)
    ests = [ConnectivityEstimate(np.random.default_rng(s).normal(size=(12, 12)), "glm") for s in (0, 1)]
    rep = compare(net, ests, ["a", "b"])
    assert rep.n_cells() == 18
    obj = json.loads(json.dumps(rep.to_json()))
    assert MetricReport.from_json(obj).scores == rep.scores
    rows = rep.to_csv().strip().splitlines()
    assert len(rows) == 3 and rows[0].startswith("estimator,true_conn:pearson_r2_signed")
    assert len(rows[1].split(",")) == 10


def test_missing_metric_serializes_as_null():
    rep = MetricReport({"x": {"true_conn": {"pearson_r2_signed": math.nan}}})
    assert rep.to_json()["scores"]["x"]["true_conn"]["pearson_r2_signed"] is None


# -- ensemble ------------------------------------------------------------

def test_ensemble_average():
    a = ConnectivityEstimate(np.ones((3, 3)), "transformer", {"seed": 0})
    b = ConnectivityEstimate(np.zeros((3, 3)), "transformer", {"seed": 1})
    np.testing.assert_array_equal(ensemble_average([a, a]).matrix, a.matrix)
    mid = ensemble_average([a, b])
    np.testing.assert_array_equal(mid.matrix, np.full((3, 3), 0.5))
    assert mid.meta["seeds"] == [0, 1]
    rng = np.random.default_rng(0)
    ests = [ConnectivityEstimate(rng.random((4, 4)), "transformer", {"seed": s}) for s in range(4)]
    assert ensemble_average(ests).matrix.tobytes() == ensemble_average(ests[::-1]).matrix.tobytes()
    with pytest.raises(ValueError):
        ensemble_average([a, ConnectivityEstimate(np.ones((2, 2)), "transformer")])
