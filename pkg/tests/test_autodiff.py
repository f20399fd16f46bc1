import time

import numpy as np
import pytest

from varorder import autodiff as ad
from varorder.linalg import denman_beavers
from varorder.model import Dataset, LogPosterior, ModelConfig

from conftest import random_spd


def test_simple_gradients():
    v, g = ad.gradient(lambda x: ad.sum(x * x), np.array([1.0, 2.0]))
    assert v == 5.0
    np.testing.assert_array_equal(g, [2.0, 4.0])
    _, g = ad.gradient(lambda x: x[0] * x[1], np.array([3.0, 5.0]))
    np.testing.assert_array_equal(g, [5.0, 3.0])


def _directional_check(f, x, rng, rtol=1e-6):
    """Compare the reverse-mode directional derivative with a central difference."""
    d = rng.standard_normal(x.shape)
    _, g = ad.gradient(f, x)
    h = 1e-6
    fd = (f(x + h * d) - f(x - h * d)) / (2 * h)
    an = float(np.sum(g * d))
    assert abs(an - fd) <= rtol * max(1.0, abs(fd)), (an, fd)


def _spd_from(x, n):
    B = np.reshape(x, (n, n)) if not ad.is_var(x) else ad.reshape(x, (n, n))
    return B @ ad.transpose(B) + n * np.eye(n)


PRIMITIVES = {
    "add": (lambda x: ad.sum((x + 2.0 * x[::-1]) ** 2), 6),
    "mul": (lambda x: ad.sum(x * x[::-1] * 3.0), 6),
    "div": (lambda x: ad.sum(1.0 / (2.0 + x * x) + x / 3.0), 6),
    "log": (lambda x: ad.sum(ad.log(1.5 + x * x)), 6),
    "exp": (lambda x: ad.sum(ad.exp(0.3 * x)), 6),
    "sqrt": (lambda x: ad.sum(ad.sqrt(1.0 + x * x)), 6),
    "matmul": (lambda x: ad.sum(ad.reshape(x, (3, 3)) @ ad.reshape(x[::-1], (3, 3)) @ np.ones(3)), 9),
    "inv": (lambda x: ad.sum(ad.inv(_spd_from(x, 3)) @ np.arange(3.0)), 9),
    "solve": (lambda x: ad.sum(ad.solve(_spd_from(x, 3), np.arange(1.0, 4.0))), 9),
    "cholesky": (lambda x: ad.sum(ad.cholesky(_spd_from(x, 3)) * np.arange(9.0).reshape(3, 3)), 9),
    "solve_triangular": (
        lambda x: ad.sum(ad.solve_triangular(ad.cholesky(_spd_from(x, 3)), np.arange(1.0, 4.0), lower=True)), 9),
    "trace_diag": (lambda x: ad.trace(_spd_from(x, 3)) + ad.sum(ad.diagonal(_spd_from(x, 3)) ** 2), 9),
    "concat": (lambda x: ad.sum(ad.concatenate([ad.reshape(x, (3, 3)), ad.reshape(x, (3, 3)).T], axis=1)
                                @ np.arange(6.0)), 9),
    "denman_beavers": (lambda x: ad.sum(denman_beavers(_spd_from(x, 3))[0] * np.arange(9.0).reshape(3, 3))
                       + ad.sum(denman_beavers(_spd_from(x, 3))[1]), 9),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_directional_derivatives(rng, name):
    f, n = PRIMITIVES[name]
    for _ in range(3):
        _directional_check(f, rng.standard_normal(n), rng)


def test_values_identical_with_and_without_tape(rng):
    y = rng.standard_normal((40, 2))
    lp = LogPosterior(Dataset(y), ModelConfig(p_max=2), backend="tape")
    for _ in range(5):
        th = rng.uniform(-1, 1, lp.dim)
        v, _ = lp.value_and_grad_tape(th)
        assert v == lp(th)


def test_nonfinite_location_reported():
    f = lambda x: ad.sum(ad.log(x))  # noqa: E731
    v, _ = ad.gradient(f, np.array([1.0, -1.0]))
    assert not np.isfinite(v)
    idx, op = ad.locate_nonfinite(f, np.array([1.0, -1.0]))
    assert op == "log"
    assert ad.locate_nonfinite(f, np.array([1.0, 2.0])) is None


def test_matrix_sqrt_gradient_symmetric_input(rng):
    M0 = random_spd(rng, 3)

    def f(x):
        M = M0 + ad.reshape(x, (3, 3)) + ad.transpose(ad.reshape(x, (3, 3)))
        return ad.sum(denman_beavers(M)[0])

    _directional_check(f, 0.01 * rng.standard_normal(9), rng)


def test_tape_gradient_cost_within_budget(rng):
    y = rng.standard_normal((50, 2))
    lp = LogPosterior(Dataset(y), ModelConfig(p_max=3), backend="tape")
    th = rng.uniform(-1, 1, lp.dim)

    def best_of(fn, reps=5):
        out = []
        for _ in range(reps):
            t = time.perf_counter()
            fn()
            out.append(time.perf_counter() - t)
        return min(out)

    plain = best_of(lambda: lp(th))
    grad = best_of(lambda: lp.value_and_grad_tape(th))
    assert grad <= 50 * plain
