import json

import numpy as np
import pytest

import qp_oracle
from normalcy.errors import ConfigError, DataError, ValidationError
from normalcy.ocsvm import (OcSvmConfig, OcSvmModel, classify, kernel_matrix, score, solve_dual,
                            train)


def oracle_decision(X_train, X_eval, nu, gamma):
    mean, sd = X_train.mean(0), X_train.std(0)
    Z, E = (X_train - mean) / sd, (X_eval - mean) / sd
    a, rho = qp_oracle.solve(kernel_matrix(Z, Z, "rbf", gamma), nu)
    return kernel_matrix(E, Z, "rbf", gamma) @ a - rho, rho


def test_matches_dense_qp_oracle():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 2))
    probe = rng.normal(size=(50, 2)) * 1.5
    m = train(X, OcSvmConfig(nu=0.1, gamma=0.5))
    ref, rho = oracle_decision(X, np.vstack([X, probe]), 0.1, 0.5)
    assert np.max(np.abs(m.decision_function(np.vstack([X, probe])) - ref)) < 1e-4
    assert m.rho == pytest.approx(rho, abs=1e-4)


def test_dual_feasible():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(60, 3))
    m = train(X, OcSvmConfig(nu=0.2))
    C = 1.0 / (0.2 * 60)
    assert m.coef.sum() == pytest.approx(1.0, abs=1e-12)
    assert (m.coef >= 0).all() and (m.coef <= C + 1e-15).all()


def test_duplicated_dataset_same_function():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(30, 2))
    probe = rng.normal(size=(40, 2))
    a = train(X, OcSvmConfig(nu=0.1, gamma=0.5))
    b = train(np.vstack([X, X]), OcSvmConfig(nu=0.1, gamma=0.5))
    assert np.max(np.abs(a.decision_function(probe) - b.decision_function(probe))) < 1e-6


def test_nu_one_all_bounded():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(25, 2))
    m = train(X, OcSvmConfig(nu=1.0))
    assert len(m.coef) == 25
    assert np.allclose(m.coef, 1 / 25)


def test_free_support_vector_scores_zero():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(50, 2))
    m = train(X, OcSvmConfig(nu=0.2, gamma=0.5))
    C = 1.0 / (0.2 * 50)
    Z = m.support_vectors
    free = (m.coef > 1e-9) & (m.coef < C - 1e-9)
    assert free.any()
    x = Z[free] * m.scale + m.mean
    assert np.max(np.abs(m.decision_function(x))) < 1e-6


@pytest.mark.parametrize("nu", [0.05, 0.1, 0.3])
def test_nu_property(nu):
    rng = np.random.default_rng(5)
    X = rng.normal(size=(200, 4))
    m = train(X, OcSvmConfig(nu=nu))
    # free support vectors sit on the boundary up to the solver tolerance
    d = m.decision_function(X)
    assert np.mean(d < -1e-6) <= nu
    assert np.count_nonzero(m.coef > 0) / 200 >= nu - 1e-12


def test_far_point_scores_minus_rho():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(40, 2))
    m = train(X, OcSvmConfig(nu=0.1))
    far = np.array([10 * np.abs(X).max() * 10, 0.0])
    assert score(m, far) == pytest.approx(-m.rho, abs=1e-9)
    assert classify(m, far) == "abnormal"


def test_linear_kernel_trains():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(40, 3)) + 5
    m = train(X, OcSvmConfig(nu=0.1, kernel="linear"))
    assert m.coef.sum() == pytest.approx(1.0)


def test_solver_kkt_on_random_kernel():
    rng = np.random.default_rng(8)
    A = rng.normal(size=(30, 5))
    K = kernel_matrix(A, A, "rbf", 0.3)
    alpha, rho, _ = solve_dual(K, 0.25, tol=1e-10)
    G = K @ alpha
    C = 1 / (0.25 * 30)
    assert np.all(G[alpha < 1e-12] >= rho - 1e-8)
    assert np.all(G[alpha > C - 1e-12] <= rho + 1e-8)


def test_json_round_trip():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(30, 2))
    m = train(X)
    m2 = OcSvmModel.from_json(m.to_json())
    assert np.array_equal(m.decision_function(X), m2.decision_function(X))


def test_json_version_check():
    rng = np.random.default_rng(9)
    d = json.loads(train(rng.normal(size=(10, 2))).to_json())
    d["format_version"] = 99
    with pytest.raises(DataError):
        OcSvmModel.from_dict(d)


def test_errors():
    with pytest.raises(ConfigError):
        OcSvmConfig(nu=0)
    with pytest.raises(ValidationError):
        train(np.array([[np.nan, 1.0], [0.0, 1.0]]))
    m = train(np.random.default_rng(0).normal(size=(10, 2)))
    with pytest.raises(ValidationError):
        m.decision_function(np.zeros((1, 3)))
