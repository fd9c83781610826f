import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from normalcy.errors import ConfigError, DataError, RankDeficientError, ValidationError
from normalcy.itq import (ItqModel, codes_to_int, encode, fit, format_code_grid, int_to_codes,
                          parse_code_grid, principal_directions, procrustes, random_rotation)


def loss_oracle(V, R):
    # elementwise recomputation, independent of the vectorised implementation
    total = 0.0
    VR = V @ R
    for row in VR:
        for v in row:
            b = 1.0 if v > 0 else -1.0
            total += (b - v) ** 2
    return total


def rotations_per_round(X, k, iters, seed):
    """Replay the alternation and return every intermediate rotation."""
    rng = np.random.default_rng(seed)
    mean = X.mean(0)
    P, _ = principal_directions(X - mean, k)
    V = (X - mean) @ P
    R = random_rotation(k, rng)
    out = [R]
    for _ in range(iters):
        R = procrustes(np.where(V @ R > 0, 1.0, -1.0), V)
        out.append(R)
    return V, out


def test_loss_non_increasing_and_matches_oracle():
    X = np.random.default_rng(0).normal(size=(500, 16))
    m = fit(X, 7, iters=50, seed=0)
    V, Rs = rotations_per_round(X, 7, 50, 0)
    assert len(m.loss_history) == 51
    for h, R in zip(m.loss_history, Rs):
        assert h == pytest.approx(loss_oracle(V, R), rel=1e-12)
        assert np.max(np.abs(R.T @ R - np.eye(7))) <= 1e-8
    assert all(b <= a + 1e-9 for a, b in zip(m.loss_history, m.loss_history[1:]))
    assert np.array_equal(Rs[-1], m.rotation)


def test_projection_orthonormal():
    X = np.random.default_rng(1).normal(size=(200, 10))
    m = fit(X, 4)
    assert np.max(np.abs(m.projection.T @ m.projection - np.eye(4))) <= 1e-8


def test_hypercube_fixed_point():
    # rows are the +-1 corners of the square: PCA projection is already +-1 valued
    corners = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
    X = np.repeat(corners, 5, axis=0)
    m = fit(X, 2, iters=10, init="identity")
    assert m.loss_history[0] == pytest.approx(0.0, abs=1e-20)
    R = m.rotation
    assert np.allclose(np.abs(R), np.round(np.abs(R)), atol=1e-12)
    assert np.allclose(np.abs(R).sum(0), 1) and np.allclose(np.abs(R).sum(1), 1)


def test_codebook_size():
    X = np.random.default_rng(2).normal(size=(300, 16))
    m = fit(X, 7)
    assert 2 ** m.k == 128


def identity_model(mean):
    return ItqModel(np.asarray(mean, float), np.eye(2), np.eye(2))


def test_encode_examples():
    m = identity_model([1.0, 2.0])
    assert encode(m, [1.5, 1.8]).tolist() == [True, False]
    assert not encode(m, [1.0, 2.0]).any()
    x = np.array([3.0, -1.0])
    assert np.array_equal(encode(m, x), encode(m, x))


def test_encode_dimension_mismatch():
    with pytest.raises(ValidationError):
        encode(identity_model([0, 0]), [1.0, 2.0, 3.0])


def test_rank_deficient_names_achievable_k():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 2)) @ rng.normal(size=(2, 6))
    with pytest.raises(RankDeficientError) as e:
        fit(X, 4)
    assert e.value.achievable == 2


def test_fit_preconditions():
    with pytest.raises(ConfigError):
        fit(np.zeros((10, 3)), 4)
    with pytest.raises(ValidationError):
        fit(np.random.default_rng(0).normal(size=(3, 5)), 3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6))
def test_null_space_invariance(coef):
    rng = np.random.default_rng(4)
    X = rng.normal(size=(100, 6))
    m = fit(X, 3)
    null = np.linalg.svd(m.projection.T)[2][3:]  # rows orthogonal to projection
    x = rng.normal(size=6)
    shift = np.asarray(coef)[:3] @ null
    assert np.array_equal(encode(m, x), encode(m, x + shift)) or \
        np.min(np.abs(m.response(x))) < 1e-9


def test_deterministic_fit():
    X = np.random.default_rng(5).normal(size=(120, 8))
    a, b = fit(X, 5, seed=9), fit(X, 5, seed=9)
    assert a.to_json() == b.to_json()


def test_subsample_cap():
    X = np.random.default_rng(6).normal(size=(400, 5))
    m = fit(X, 3, max_vectors=100)
    assert m.dim == 5


def test_json_round_trip():
    X = np.random.default_rng(7).normal(size=(60, 5))
    m = fit(X, 3)
    m2 = ItqModel.from_dict(json.loads(m.to_json()))
    assert np.array_equal(encode(m, X), encode(m2, X))


def test_code_packing_round_trip():
    bits = np.random.default_rng(8).random((5, 4, 7)) > 0.5
    ints = codes_to_int(bits)
    assert ints.max() < 128
    assert np.array_equal(int_to_codes(ints, 7), bits)
    assert codes_to_int(np.array([True, False, False])) == 4


def test_code_grid_text_round_trip():
    grid = np.arange(12).reshape(3, 4) * 10
    line = format_code_grid(grid, 7)
    assert line.split("|")[0] == "00 0a 14 1e"
    assert np.array_equal(parse_code_grid(line), grid)
    with pytest.raises(DataError):
        parse_code_grid("00 01|02")
    with pytest.raises(DataError):
        parse_code_grid("zz")
