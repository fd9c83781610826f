import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from normalcy.errors import ConfigError, DataError, ValidationError
from normalcy.swdbn import (LinearModel, SharedLevelModel, SomConfig, SomWeights, SwdbnConfig,
                            build_vocabulary, dwell_times, grid_neighbors, kf_predict,
                            learn_transitions, som_train, ukf_filter, validity_radius,
                            weighted_distance)

# -- linear model and unmotivated filter -----------------------------------------------


def test_model_matrices():
    m = LinearModel(dt=2.0)
    assert np.array_equal(m.A @ np.array([1, 2, 3, 4.0]), [1, 2, 0, 0])
    assert np.array_equal(m.B, [[2, 0], [0, 2], [1, 0], [0, 1]])
    assert np.array_equal(m.H, [[1, 0, 0, 0], [0, 1, 0, 0]])


def test_motivated_prediction():
    m = LinearModel()
    x, _ = kf_predict(np.array([5, 5, 9, 9.0]), np.eye(4), m.A, m.Q, m.B, np.array([2, -1.0]))
    assert np.array_equal(x, [7, 4, 2, -1])


def test_static_observations_fixed_point():
    z = np.full((50, 2), 5.0)
    res = ukf_filter(z, LinearModel(r=1e-12))
    assert np.max(np.abs(res.innovations)) < 1e-12
    assert np.max(np.abs(res.velocities)) < 1e-12


def scalar_riccati_innovations(z, q, r):
    """Per-axis position filter: velocity is annihilated, so positions decouple."""
    x, p = z[0], r
    out = [0.0]
    for zk in z[1:]:
        p_pred = p + q
        k = p_pred / (p_pred + r)
        e = zk - x
        out.append(e)
        x = x + k * e
        p = (1 - k) * p_pred
    return np.array(out)


@pytest.mark.parametrize("r", [1e-4, 1e-2, 1e-10])
def test_moving_observations_match_riccati_oracle(r):
    z = np.column_stack([np.arange(200.0), np.zeros(200)])
    q = 1e-4
    res = ukf_filter(z, LinearModel(q=q, r=r))
    ref = scalar_riccati_innovations(z[:, 0], q, r)
    assert np.allclose(res.velocities[:, 0], ref, rtol=1e-9, atol=1e-12)
    assert np.max(np.abs(res.velocities[:, 1])) < 1e-12


def test_moving_observations_velocity_converges():
    z = np.column_stack([np.arange(100.0), np.zeros(100)])
    res = ukf_filter(z, LinearModel(q=1e-4, r=1e-12))
    assert np.allclose(res.velocities[-1], [1.0, 0.0], atol=1e-6)


def test_velocity_scales_with_dt():
    z = np.column_stack([np.arange(30.0), np.zeros(30)])
    a = ukf_filter(z, LinearModel(dt=1.0))
    b = ukf_filter(z, LinearModel(dt=2.0))
    assert np.allclose(b.velocities, a.velocities / 2)


def test_covariances_stay_psd(normal_training_run):
    _, xy, _ = normal_training_run
    res = ukf_filter(xy, SwdbnConfig().ukf_model())
    assert np.allclose(res.covariances, np.swapaxes(res.covariances, 1, 2))
    assert np.linalg.eigvalsh(res.covariances).min() >= -1e-9


def test_ukf_errors():
    with pytest.raises(ValidationError):
        ukf_filter(np.zeros((1, 2)), LinearModel())
    z = np.zeros((5, 2))
    z[3, 1] = np.nan
    with pytest.raises(ValidationError, match="step 3"):
        ukf_filter(z, LinearModel())
    with pytest.raises(ConfigError):
        LinearModel(q=np.eye(3)).Q


# -- weighted distance and SOM -----------------------------------------------------------


def test_distance_example():
    d = weighted_distance(np.array([0, 0, 1, 0.0]), np.zeros(4), SomWeights(0.75, 0.25))
    assert d == pytest.approx(math.sqrt(0.75), abs=1e-15)


def test_weights_validation():
    for a, b in [(0.5, 0.5), (0.25, 0.75), (0.8, 0.3)]:
        with pytest.raises(ConfigError):
            SomWeights(a, b)


vec4 = arrays(np.float64, 4, elements=st.floats(-100, 100))


@settings(max_examples=200, deadline=None)
@given(vec4, vec4, vec4)
def test_metric_axioms(x, y, z):
    w = SomWeights()
    assert weighted_distance(x, x, w) == 0
    assert weighted_distance(x, y, w) == weighted_distance(y, x, w)
    assert weighted_distance(x, z, w) <= weighted_distance(x, y, w) + \
        weighted_distance(y, z, w) + 1e-9


def brute_two_means(X, diag):
    """Exhaustive search over 2-partitions of a small set under the weighted distance."""
    n = len(X)
    best = (math.inf, None)
    for mask in range(1, 2 ** (n - 1)):
        lab = np.array([(mask >> i) & 1 for i in range(n)], dtype=bool)
        cost = 0.0
        means = []
        for g in (lab, ~lab):
            mu = X[g].mean(0)
            means.append(mu)
            cost += np.sum(((X[g] - mu) ** 2) @ diag)
        if cost < best[0]:
            best = (cost, means)
    return best[1]


def test_two_cluster_som_matches_brute_force_two_means():
    rng = np.random.default_rng(0)
    a = np.column_stack([rng.normal(0, 0.1, (7, 2)), rng.normal([1, 0], 0.02, (7, 2))])
    b = np.column_stack([rng.normal(0, 0.1, (7, 2)), rng.normal([-1, 0], 0.02, (7, 2))])
    X = np.vstack([a, b])
    w = SomWeights()
    res = som_train(X, SomConfig(1, 2, epochs=10), w)
    ref = brute_two_means(X, w.diag)
    got = sorted(res.weights.tolist(), key=lambda v: v[2])
    exp = sorted([m.tolist() for m in ref], key=lambda v: v[2])
    assert np.max(np.abs(np.array(got) - np.array(exp))) < 1e-6


def test_som_objective_non_increasing(normal_training_run):
    _, xy, _ = normal_training_run
    states = ukf_filter(xy, SwdbnConfig().ukf_model()).generalized_states()
    res = som_train(states, SomConfig(), SomWeights())
    obj = res.objective
    assert all(b <= a + 1e-12 for a, b in zip(obj, obj[1:]))


def test_som_deterministic():
    X = np.random.default_rng(1).normal(size=(100, 4))
    a = som_train(X, SomConfig(3, 3, seed=4))
    b = som_train(X, SomConfig(3, 3, seed=4))
    assert np.array_equal(a.weights, b.weights)


def test_som_degenerate_input_single_effective_neuron():
    X = np.tile([1.0, 2.0, 0.1, 0.0], (30, 1))
    res = som_train(X, SomConfig(2, 2))
    vocab = build_vocabulary(X, res.assignments, res)
    assert (~vocab.empty).sum() == 1
    assert np.array_equal(vocab.U[vocab.empty], np.zeros((3, 2)))


# -- vocabulary ---------------------------------------------------------------------------


def test_validity_radius_examples():
    assert validity_radius([1.0, 1.0, 1.0]) == 1.0
    assert validity_radius([1.0, 3.0]) == 5.0
    assert validity_radius([]) == math.inf


def test_grid_neighbors():
    assert sorted(grid_neighbors(3, 3, 4)) == [1, 3, 5, 7]
    assert sorted(grid_neighbors(3, 3, 0)) == [1, 3]
    assert grid_neighbors(1, 1, 0) == []


def test_vocabulary_contents():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 4))
    res = som_train(X, SomConfig(3, 4))
    vocab = build_vocabulary(X, res.assignments, res)
    for j, s in enumerate(vocab.superstates):
        members = X[res.assignments == j]
        if len(members):
            assert np.allclose(s.xi, members.mean(0))
            assert np.array_equal(s.U, s.xi[2:])
            assert np.linalg.eigvalsh(s.Q).min() >= -1e-12
        assert s.psi >= 0
    with pytest.raises(ConfigError):
        build_vocabulary(X, res.assignments, res, adjacency="ring")


def test_calibration_property(shared_level):
    assert shared_level.calibration_fraction() >= 0.99


# -- transitions -------------------------------------------------------------------------


def test_transitions_hand_count():
    tm = learn_transitions([1, 1, 2, 2], 3, dwell_edges=(), smoothing=0.0)
    P = tm.matrices[0]
    assert P[1, 1] == 0.5 and P[1, 2] == 0.5
    assert P[2, 2] == 1.0


def test_constant_sequence_self_transition():
    tm = learn_transitions([0] * 30, 2)
    assert all(tm.matrices[b, 0, 0] == 1.0 for b in range(len(tm.matrices)))


def test_dummy_row_uniform_over_valid():
    tm = learn_transitions([0, 0, 2, 2], 4)
    assert tm.matrices[0, tm.dummy].tolist() == [0.5, 0, 0.5, 0, 0]


def test_dwell_times_and_bins():
    assert dwell_times(np.array([3, 3, 3, 1, 1, 3])).tolist() == [1, 2, 3, 1, 2, 1]
    tm = learn_transitions([0, 1], 2)
    assert tm.dwell_bin([1, 5, 6, 20, 21]).tolist() == [0, 0, 1, 1, 2]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=2, max_size=80), st.floats(0, 3))
def test_rows_stochastic(seq, smoothing):
    tm = learn_transitions(seq, 6, smoothing=smoothing)
    for P in list(tm.matrices) + [tm.pooled]:
        assert (P >= 0).all()
        assert np.allclose(P.sum(1), 1, atol=1e-12)
    pi = tm.stationary()
    assert pi.sum() == pytest.approx(1.0) and (pi >= 0).all()


def test_transition_errors():
    with pytest.raises(ValidationError):
        learn_transitions([0], 2)
    with pytest.raises(ValidationError):
        learn_transitions([0, 3], 2)
    with pytest.raises(ConfigError):
        learn_transitions([0, 1], 2, dwell_edges=(20, 5))


# -- shared level -----------------------------------------------------------------------


def test_shared_level_json_round_trip(shared_level):
    text = shared_level.to_json()
    back = SharedLevelModel.from_json(text)
    assert back.to_json() == text
    d = json.loads(text)
    d["kind"] = "itq"
    with pytest.raises(DataError):
        SharedLevelModel.from_dict(d)


def test_config_validation():
    with pytest.raises(ConfigError):
        SwdbnConfig(dt=0)
    with pytest.raises(ConfigError):
        SwdbnConfig(alpha=0.4, beta=0.6)
