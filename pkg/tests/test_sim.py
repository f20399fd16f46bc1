import json

import numpy as np
import pytest
from scipy import stats

from varorder.exceptions import UsageError
from varorder.model import ModelConfig
from varorder.nuts import SamplerConfig
from varorder.reparam import VarModel, build_initial_variance, check_stationary
from varorder.sim import (
    SimSpec,
    dumps_model,
    model_from_json,
    model_to_json,
    random_model,
    run_study,
    simulate,
    simulate_spec,
    study_table,
)


def test_random_models_stationary():
    for seed in range(50):
        for m, p in ((1, 4), (3, 2), (5, 3)):
            _, model = random_model(m, p, seed)
            assert check_stationary(model.phi)[0]


def test_random_model_deterministic():
    A1, M1 = random_model(3, 2, 123)
    A2, M2 = random_model(3, 2, 123)
    np.testing.assert_array_equal(A1, A2)
    np.testing.assert_array_equal(M1.phi, M2.phi)
    A3, _ = random_model(3, 2, 124)
    assert not np.array_equal(A1, A3)


def test_scalar_model_composition():
    for seed in range(5):
        A, model = random_model(1, 1, seed)
        a = A[0, 0, 0]
        assert model.phi[0, 0, 0] == pytest.approx(a / np.sqrt(1 + a * a), abs=1e-14)


def test_iid_case():
    model = VarModel(sigma=np.eye(2), phi=np.zeros((1, 2, 2)), gamma=np.eye(2)[None])
    n = 100_000
    y = simulate(model, n, seed=1).y
    cov = np.cov(y.T)
    assert np.all(np.abs(cov - np.eye(2)) < 5 * np.sqrt(2 / n))


def test_ar1_autocorrelation():
    model = VarModel(sigma=np.eye(1), phi=np.array([[[0.5]]]), gamma=np.array([[[4 / 3]]]))
    y = simulate(model, 100_000, seed=2).y[:, 0]
    r1 = np.corrcoef(y[1:], y[:-1])[0, 1]
    assert r1 == pytest.approx(0.5, abs=0.02)


def test_simulation_deterministic():
    _, model = random_model(2, 2, 0)
    a = simulate(model, 200, seed=5).y
    b = simulate(model, 200, seed=5).y
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, simulate(model, 200, seed=6).y)


def test_exact_start_distribution():
    # y_1..y_p jointly N(0, G): the Mahalanobis sums over replications follow chi-square
    _, model = random_model(2, 3, 9)
    G = build_initial_variance(model, 3)
    Gi = np.linalg.inv(G)
    reps = 3000
    total = 0.0
    for r in range(reps):
        y = simulate(model, 3, seed=1000 + r).y
        x = y[::-1].reshape(-1)
        total += x @ Gi @ x
    dof = reps * 6
    lo, hi = stats.chi2.ppf([0.0005, 0.9995], dof)
    assert lo < total < hi


def test_burn_in_start():
    _, model = random_model(1, 2, 3)
    d = simulate(model, 100, seed=1, start="burn-in", burn_in=50)
    assert d.y.shape == (100, 1)


def test_spec_validation():
    with pytest.raises(UsageError):
        SimSpec(m=1, p=3, n=2)
    with pytest.raises(UsageError):
        SimSpec(m=0, p=1, n=10)
    with pytest.raises(UsageError):
        SimSpec(m=1, p=1, n=10, start="warm")


def test_truth_json_roundtrip():
    A, model, _ = simulate_spec(SimSpec(m=3, p=2, n=50, seed=4))
    d = json.loads(dumps_model(A, model))
    A2, P2, model2 = model_from_json(d)
    np.testing.assert_array_equal(A2, A)
    np.testing.assert_array_equal(model2.phi, model.phi)
    np.testing.assert_array_equal(model2.sigma, model.sigma)
    np.testing.assert_array_equal(P2, np.array(model_to_json(A, model)["P"]))


SMALL = SamplerConfig(chains=2, warmup=100, samples=100, seed=1)


def test_one_cell_study():
    res = run_study([SimSpec(m=1, p=1, n=1000, seed=0)], SMALL, ModelConfig(p_max=2))
    assert len(res) == 1 and res[0].ok
    assert len(res[0].pmf) == 3
    assert res[0].diagnostics is not None and "max_rhat" in res[0].diagnostics
    rows = study_table(res)
    assert rows[0]["ok"] == 1 and rows[0]["modal_order"] == res[0].modal_order


def test_study_reproducible_and_quarantined():
    grid = [SimSpec(m=1, p=1, n=200, seed=0), SimSpec(m=2, p=1, n=200, seed=1)]

    def model_for(m):
        if m == 2:
            raise RuntimeError("boom")
        return ModelConfig(p_max=2)

    a = run_study(grid, SMALL, model_for)
    b = run_study(grid, SMALL, model_for)
    assert [r.ok for r in a] == [True, False]
    assert "boom" in a[1].error
    assert a[0].pmf == b[0].pmf and a[0].diagnostics == b[0].diagnostics
