import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from varorder.exceptions import DomainError, NonStationaryError
from varorder.linalg import solve_discrete_lyapunov
from varorder.reparam import (
    VarModel,
    a_to_pacf,
    autocovariances,
    build_initial_variance,
    check_stationary,
    companion_matrix,
    pacf_to_a,
    pacf_to_var,
    var_to_pacf,
)

from conftest import random_spd


def _random_pacf(rng, p, m, scale=1.0):
    return a_to_pacf(scale * rng.standard_normal((p, m, m)))


def _lyapunov_state(model):
    m, p = model.m, model.p
    E = np.zeros((m * p, m * p))
    E[:m, :m] = model.sigma
    return solve_discrete_lyapunov(companion_matrix(model.phi), E, "kron")


# -- A <-> P --------------------------------------------------------------

def test_a_to_pacf_examples(rng):
    np.testing.assert_array_equal(a_to_pacf(np.zeros((2, 3, 3))), 0.0)
    assert a_to_pacf(np.array([[[1.0]]]))[0, 0, 0] == pytest.approx(0.7071068, abs=1e-7)
    A = rng.standard_normal((1, 3, 3))
    np.testing.assert_allclose(pacf_to_a(a_to_pacf(A)), A, atol=1e-10)


def test_pacf_to_a_examples(rng):
    np.testing.assert_array_equal(pacf_to_a(np.zeros((1, 2, 2))), 0.0)
    assert pacf_to_a(np.array([[[0.7071068]]]))[0, 0, 0] == pytest.approx(1.0, abs=1e-6)
    P = rng.standard_normal((1, 3, 3))
    P *= 0.9 / np.linalg.norm(P[0], 2)
    np.testing.assert_allclose(a_to_pacf(pacf_to_a(P)), P, atol=1e-10)


def test_singular_values_mapped(rng):
    A = rng.standard_normal((1, 3, 3))
    r = np.linalg.svd(A[0], compute_uv=False)
    s = np.linalg.svd(a_to_pacf(A)[0], compute_uv=False)
    np.testing.assert_allclose(s, r / np.sqrt(1 + r**2), rtol=1e-12)
    assert np.all(s < 1)


def test_pacf_to_a_rejects_unit_singular_value():
    with pytest.raises(DomainError):
        pacf_to_a(np.array([[[1.0]]]))
    with pytest.raises(DomainError):
        pacf_to_a(np.array([[[1.0 - 1e-13]]]))
    with pytest.raises(DomainError):
        a_to_pacf(np.array([[[np.nan]]]))


# -- P <-> (Sigma, phi) ---------------------------------------------------

def test_scalar_ar1():
    model, _ = pacf_to_var(np.eye(1), np.array([[[0.5]]]))
    assert model.phi[0, 0, 0] == pytest.approx(0.5, abs=1e-14)
    assert model.gamma[0, 0, 0] == pytest.approx(4.0 / 3.0, abs=1e-12)


def test_scalar_ar2_durbin_levinson():
    model, _ = pacf_to_var(np.eye(1), np.array([[[0.5]], [[0.3]]]))
    np.testing.assert_allclose(model.phi.ravel(), [0.35, 0.3], atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_scalar_matches_textbook_recursion(seed):
    rng = np.random.default_rng(seed)
    p = 5
    pac = rng.uniform(-0.95, 0.95, p)
    s2 = rng.uniform(0.5, 2.0)
    model, _ = pacf_to_var(np.array([[s2]]), pac.reshape(p, 1, 1))
    # textbook Durbin-Levinson on the coefficients
    phi = np.zeros(0)
    for k in range(p):
        new = np.empty(k + 1)
        new[k] = pac[k]
        new[:k] = phi - pac[k] * phi[::-1]
        phi = new
    np.testing.assert_allclose(model.phi.ravel(), phi, atol=1e-12)
    gamma0 = s2 / np.prod(1 - pac**2)
    assert model.gamma[0, 0, 0] == pytest.approx(gamma0, rel=1e-10)


def test_autocovariances_match_lyapunov(rng):
    sigma = random_spd(rng, 3)
    model, _ = pacf_to_var(sigma, _random_pacf(rng, 3, 3))
    V = _lyapunov_state(model)
    for h in range(3):
        np.testing.assert_allclose(model.gamma[h], V[:3, 3 * h:3 * h + 3], atol=1e-8)


def test_stage_variances(rng):
    sigma = random_spd(rng, 2)
    P = _random_pacf(rng, 3, 2)
    model, st_ = pacf_to_var(sigma, P)
    np.testing.assert_allclose(st_.sigma_fwd[0], model.gamma[0], atol=1e-12)
    np.testing.assert_allclose(st_.sigma_bwd[0], model.gamma[0], atol=1e-12)
    np.testing.assert_allclose(st_.sigma_fwd[-1], sigma, atol=1e-12)
    for s in range(3):
        w, U = np.linalg.eigh(st_.sigma_fwd[s])
        R = (U * np.sqrt(w)) @ U.T
        fwd = R @ (np.eye(2) - P[s] @ P[s].T) @ R
        np.testing.assert_allclose(fwd, st_.sigma_fwd[s + 1], atol=1e-9)
        assert np.all(np.linalg.eigvalsh(st_.sigma_bwd[s + 1]) > 0)


def test_yule_walker_residual(rng):
    sigma = random_spd(rng, 3)
    model, _ = pacf_to_var(sigma, _random_pacf(rng, 4, 3))
    gam = autocovariances(model, 8)
    lag = lambda h: gam[h] if h >= 0 else gam[-h].T  # noqa: E731
    for h in range(1, 8):
        res = gam[h] - sum(model.phi[j] @ lag(h - j - 1) for j in range(4))
        assert np.linalg.norm(res) < 1e-8
    np.testing.assert_allclose(gam[:4], model.gamma, atol=1e-8)
    # lag-0 equation gives Sigma back
    g0 = gam[0] - sum(model.phi[j] @ gam[j + 1].T for j in range(4))
    np.testing.assert_allclose(g0, sigma, atol=1e-8)


def test_var_to_pacf_examples():
    sig, P = var_to_pacf(VarModel(sigma=np.eye(1), phi=np.array([[[0.5]]]), gamma=np.array([[[4 / 3]]])))
    assert P[0, 0, 0] == pytest.approx(0.5, abs=1e-12)
    assert sig[0, 0] == pytest.approx(1.0, abs=1e-12)
    phi = np.array([[[0.35]], [[0.3]]])
    _, P = var_to_pacf(VarModel(sigma=np.eye(1), phi=phi, gamma=np.zeros((2, 1, 1))))
    np.testing.assert_allclose(P.ravel(), [0.5, 0.3], atol=1e-12)


def test_var_to_pacf_roundtrip(rng):
    sigma = random_spd(rng, 2)
    P = _random_pacf(rng, 3, 2)
    model, _ = pacf_to_var(sigma, P)
    sig2, P2 = var_to_pacf(model)
    np.testing.assert_allclose(sig2, sigma, atol=1e-8)
    np.testing.assert_allclose(P2, P, atol=1e-8)


def test_var_to_pacf_rejects_nonstationary():
    with pytest.raises(NonStationaryError):
        var_to_pacf(VarModel(sigma=np.eye(1), phi=np.array([[[1.1]]]), gamma=np.zeros((1, 1, 1))))


def test_full_roundtrip(rng):
    for _ in range(20):
        m, p = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        A = rng.standard_normal((p, m, m))
        sigma = random_spd(rng, m)
        model, _ = pacf_to_var(sigma, a_to_pacf(A))
        _, P2 = var_to_pacf(model)
        np.testing.assert_allclose(pacf_to_a(P2), A, atol=1e-8)


def test_eig_and_db_paths_agree(rng):
    sigma = random_spd(rng, 3)
    P = _random_pacf(rng, 3, 3)
    a, _ = pacf_to_var(sigma, P, method="eig")
    b, _ = pacf_to_var(sigma, P, method="db")
    np.testing.assert_allclose(a.phi, b.phi, atol=1e-10)
    np.testing.assert_allclose(a.gamma, b.gamma, atol=1e-10)


def test_stationarity_always_holds():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(500):
        m, p = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        model, _ = pacf_to_var(random_spd(rng, m), a_to_pacf(rng.standard_normal((p, m, m))))
        stable, rho = check_stationary(model.phi)
        assert stable
        worst = max(worst, rho)
    assert worst < 1.0


@settings(max_examples=40, deadline=None)
@given(k=st.integers(1, 3), p=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
def test_order_nesting(k, p, seed):
    if k > p:
        k = p
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((p, 2, 2))
    A[k:] = 0.0
    model, _ = pacf_to_var(random_spd(rng, 2), a_to_pacf(A))
    assert np.abs(model.phi[k:]).max(initial=0.0) < 1e-10
    assert np.abs(model.phi[k - 1]).max() > 0


# -- G and stationarity ---------------------------------------------------

def test_initial_variance_examples():
    model, _ = pacf_to_var(np.eye(1), np.array([[[0.5]]]))
    np.testing.assert_allclose(build_initial_variance(model, 1), [[4 / 3]], atol=1e-12)
    np.testing.assert_allclose(build_initial_variance(model, 2), [[4 / 3, 2 / 3], [2 / 3, 4 / 3]], atol=1e-12)


def test_initial_variance_matches_state_variance(rng):
    model, _ = pacf_to_var(random_spd(rng, 2), _random_pacf(rng, 3, 2))
    np.testing.assert_allclose(build_initial_variance(model, 3), _lyapunov_state(model), atol=1e-8)


def test_initial_variance_beyond_order(rng):
    # p_max larger than the model order uses the Yule-Walker extension
    model, _ = pacf_to_var(random_spd(rng, 2), _random_pacf(rng, 1, 2))
    G = build_initial_variance(model, 4)
    big = VarModel(sigma=model.sigma, phi=np.concatenate([model.phi, np.zeros((3, 2, 2))]), gamma=None)
    np.testing.assert_allclose(G, _lyapunov_state(big), atol=1e-8)


def test_check_stationary_examples():
    assert check_stationary(np.array([[[0.9]]])) == (True, pytest.approx(0.9))
    stable, rho = check_stationary(np.array([[[1.0]], [[-0.5]]]))
    assert stable and rho == pytest.approx(0.7071068, abs=1e-7)
    stable, rho = check_stationary(np.array([[[1.1]]]))
    assert not stable and rho == pytest.approx(1.1)
