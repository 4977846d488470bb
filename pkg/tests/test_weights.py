import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_connected_adjacency
from tncspatial.geo import Adjacency
from tncspatial.weights import WeightsError, build_weights, from_triplet_csv, log_det, spatial_lag, to_triplet_csv


def test_path_rows(path3):
    assert np.allclose(path3.dense, [[0, 1, 0], [0.5, 0, 0.5], [0, 1, 0]], atol=0)


def test_path_spectrum(path3):
    assert np.allclose(path3.spectrum.eigenvalues, [-1.0, 0.0, 1.0], atol=1e-12)
    assert path3.spectrum.rho_interval() == pytest.approx((-1.0, 1.0))


def test_complete_graph():
    k4 = build_weights(Adjacency.from_pairs(4, [(i, j) for i in range(4) for j in range(i + 1, 4)]))
    off = k4.dense[~np.eye(4, dtype=bool)]
    assert np.allclose(off, 1 / 3, atol=0, rtol=1e-15)
    assert np.allclose(k4.spectrum.eigenvalues, [-1 / 3] * 3 + [1.0], atol=1e-12)


def test_lag_of_constant(path3):
    assert np.allclose(spatial_lag(path3, np.full(3, 7.5)), 7.5)


def test_lag_path(path3):
    assert np.allclose(spatial_lag(path3, [1.0, 2.0, 3.0]), [2.0, 2.0, 2.0])


def test_isolated_zero_row():
    with pytest.warns(UserWarning, match="isolated"):
        w = build_weights(Adjacency.from_pairs(3, [(0, 1)]))
    assert w.isolated == (2,)
    assert spatial_lag(w, [1.0, 2.0, 3.0])[2] == 0.0


def test_lag_dimension_mismatch(path3):
    with pytest.raises(WeightsError):
        spatial_lag(path3, [1.0, 2.0])


def test_logdet_zero(path3):
    assert log_det(path3, 0.0) == 0.0


def test_logdet_path_half(path3):
    assert log_det(path3, 0.5) == pytest.approx(math.log(0.75), abs=1e-12)
    assert log_det(path3, 0.5) == pytest.approx(-0.28768, abs=1e-5)


def test_logdet_outside_interval(path3):
    with pytest.raises(WeightsError):
        log_det(path3, 1.0)


def test_logdet_dense_oracle_8_nodes():
    rng = np.random.default_rng(3)
    w = build_weights(random_connected_adjacency(8, rng))
    lo, hi = w.spectrum.rho_interval()
    for rho in np.linspace(0.9 * lo, 0.9 * hi, 9):
        sign, ref = np.linalg.slogdet(np.eye(8) - rho * w.dense)
        assert sign > 0
        assert log_det(w, rho) == pytest.approx(ref, abs=1e-10)


@pytest.mark.parametrize(
    "bad",
    [np.zeros((0, 0)), np.zeros((2, 3)), np.eye(2), np.array([[0.0, 1.0], [0.0, 0.0]])],
    ids=["empty", "nonsquare", "reflexive", "asymmetric"],
)
def test_invalid_adjacency(bad):
    with pytest.raises(WeightsError):
        build_weights(bad)


graph_seeds = st.integers(0, 10_000)
graph_sizes = st.integers(2, 40)


@settings(max_examples=40, deadline=None)
@given(graph_sizes, graph_seeds)
def test_rows_sum_to_one(n, seed):
    w = build_weights(random_connected_adjacency(n, np.random.default_rng(seed)))
    assert np.allclose(w.dense.sum(axis=1), 1.0, atol=1e-14)
    assert np.all(np.diag(w.dense) == 0)


@settings(max_examples=40, deadline=None)
@given(graph_sizes, graph_seeds)
def test_spectrum_matches_dense_eigenvalues(n, seed):
    w = build_weights(random_connected_adjacency(n, np.random.default_rng(seed)))
    dense = np.sort(np.linalg.eigvals(w.dense).real)
    assert np.allclose(w.spectrum.eigenvalues, dense, atol=1e-9)
    assert w.spectrum.lambda_max == pytest.approx(1.0, abs=1e-12)
    lo, hi = w.spectrum.rho_interval()
    assert lo <= -1.0 + 1e-12 and hi == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(graph_sizes, graph_seeds)
def test_eigendecomposition_reconstructs_w(n, seed):
    w = build_weights(random_connected_adjacency(n, np.random.default_rng(seed)))
    v, d = w.eigvecs, w.scaling
    rebuilt = (v / d[:, None]) @ np.diag(w.spectrum.eigenvalues) @ (v.T * d[None, :])
    assert np.allclose(rebuilt, w.dense, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(graph_sizes, graph_seeds)
def test_triplet_round_trip(n, seed):
    w = build_weights(random_connected_adjacency(n, np.random.default_rng(seed)))
    back = from_triplet_csv(to_triplet_csv(w), n)
    assert np.array_equal(back.dense, w.dense)
    assert back.fingerprint() == w.fingerprint()


def test_fingerprint_distinguishes_graphs(path3):
    other = build_weights(Adjacency.from_pairs(3, [(0, 1), (1, 2), (0, 2)]))
    assert other.fingerprint() != path3.fingerprint()
