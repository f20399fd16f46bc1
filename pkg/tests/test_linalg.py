import numpy as np
import pytest

from varorder.exceptions import DomainError, NonStationaryError
from varorder.linalg import (
    denman_beavers,
    mvn_logpdf,
    solve_discrete_lyapunov,
    spectral_radius,
    svd,
    sym_inv_sqrt,
    sym_sqrt,
)

from conftest import random_spd

METHODS = ["eig", "db"]


@pytest.mark.parametrize("method", METHODS)
def test_sym_sqrt_examples(method):
    np.testing.assert_allclose(sym_sqrt(np.eye(3), method), np.eye(3), atol=1e-14)
    np.testing.assert_allclose(sym_sqrt(np.diag([4.0, 9.0]), method), np.diag([2.0, 3.0]), atol=1e-13)


@pytest.mark.parametrize("method", METHODS)
def test_sym_sqrt_multiply_back(rng, method):
    for _ in range(20):
        M = random_spd(rng, 3)
        S = sym_sqrt(M, method)
        assert np.array_equal(S, S.T)
        assert np.linalg.norm(S @ S - M) / np.linalg.norm(M) < 1e-10


@pytest.mark.parametrize("method", METHODS)
def test_sym_inv_sqrt(rng, method):
    np.testing.assert_allclose(sym_inv_sqrt(np.eye(2), method), np.eye(2), atol=1e-14)
    np.testing.assert_allclose(sym_inv_sqrt(np.array([[4.0]]), method), [[0.5]], atol=1e-14)
    for _ in range(20):
        M = random_spd(rng, 4)
        T = sym_inv_sqrt(M, method)
        assert np.linalg.norm(T @ M @ T - np.eye(4)) < 1e-10
        S = sym_sqrt(M, method)
        assert np.linalg.norm(S @ T @ S @ T - np.eye(4)) < 1e-9


@pytest.mark.parametrize("method", METHODS)
def test_non_spd_rejected(method):
    with pytest.raises(DomainError):
        sym_sqrt(np.diag([1.0, -1.0]), method)
    with pytest.raises(DomainError):
        sym_inv_sqrt(np.array([[1.0, 2.0], [0.0, 1.0]]), method)
    with pytest.raises(DomainError):
        sym_sqrt(np.array([[np.nan]]), method)


def test_db_matches_eig_on_100_matrices(rng):
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 9))
        M = random_spd(rng, n, cond=100.0)
        worst = max(worst, np.linalg.norm(sym_sqrt(M, "db") - sym_sqrt(M, "eig")))
        worst = max(worst, np.linalg.norm(sym_inv_sqrt(M, "db") - sym_inv_sqrt(M, "eig")))
    assert worst < 1e-9


def test_db_iteration_count_is_bounded(rng):
    M = random_spd(rng, 5, cond=1e6)
    _, _, n_iter = denman_beavers(M)
    assert 1 <= n_iter <= 100
    _, _, n_iter = denman_beavers(np.eye(3))
    assert n_iter == 1


def test_svd_examples(rng):
    _, s, _ = svd(np.zeros((3, 3)))
    np.testing.assert_array_equal(s, 0.0)
    _, s, _ = svd(np.diag([3.0, -2.0]))
    np.testing.assert_allclose(s, [3.0, 2.0])
    M = rng.standard_normal((5, 5))
    U, s, V = svd(M)
    assert np.all(np.diff(s) <= 0)
    np.testing.assert_allclose(U.T @ U, np.eye(5), atol=1e-10)
    np.testing.assert_allclose(V.T @ V, np.eye(5), atol=1e-10)
    assert np.linalg.norm(U @ np.diag(s) @ V.T - M) / np.linalg.norm(M) < 1e-10
    with pytest.raises(DomainError):
        svd(np.array([[np.inf]]))


@pytest.mark.parametrize("method", ["kron", "doubling"])
def test_lyapunov_examples(rng, method):
    V = solve_discrete_lyapunov(np.array([[0.5]]), np.array([[1.0]]), method)
    assert V[0, 0] == pytest.approx(4.0 / 3.0, abs=1e-14)
    E = random_spd(rng, 3)
    np.testing.assert_allclose(solve_discrete_lyapunov(np.zeros((3, 3)), E, method), E, atol=1e-15)
    for _ in range(20):
        F = rng.standard_normal((6, 6))
        F *= rng.uniform(0.1, 0.95) / spectral_radius(F)
        E = random_spd(rng, 6)
        V = solve_discrete_lyapunov(F, E, method)
        assert np.linalg.norm(V - F @ V @ F.T - E) < 1e-8


def test_lyapunov_methods_agree(rng):
    F = rng.standard_normal((8, 8))
    F *= 0.9 / spectral_radius(F)
    E = random_spd(rng, 8)
    a = solve_discrete_lyapunov(F, E, "kron")
    b = solve_discrete_lyapunov(F, E, "doubling")
    assert np.linalg.norm(a - b) / np.linalg.norm(a) < 1e-10


def test_lyapunov_rejects_unstable():
    with pytest.raises(NonStationaryError):
        solve_discrete_lyapunov(np.array([[1.0]]), np.array([[1.0]]))


def test_mvn_logpdf_examples(rng):
    assert mvn_logpdf(np.zeros(1), np.zeros(1), np.eye(1)) == pytest.approx(-0.9189385, abs=1e-7)
    assert mvn_logpdf(np.ones(1), np.zeros(1), np.eye(1)) == pytest.approx(-1.4189385, abs=1e-7)
    S = random_spd(rng, 4)
    x, mu = rng.standard_normal(4), rng.standard_normal(4)
    d = x - mu
    direct = -0.5 * (np.log(np.linalg.det(2 * np.pi * S)) + d @ np.linalg.inv(S) @ d)
    assert abs(mvn_logpdf(x, mu, S) - direct) < 1e-12
    with pytest.raises(DomainError):
        mvn_logpdf(x, mu, -S)
