from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wingopt.config import OptimizerConfig
from wingopt.optimizer import (MMA, TABLE_PAYLOAD_FACTORS, Continuation, continuation_step,
                               optimize)

TABLE_BETA = (0.01, 1, 2, 3, 4, 5, 6, 7, 8, 16)
TABLE_PAYLOAD_KN = (9.52, 9.04, 8.60, 8.17, 7.75, 7.37, 7.00, 6.65, 6.32, 6.00)
TABLE_OFFSETS = (0, 5, 45, 85, 115, 145, 175, 205, 235, 265)


def run_benchmark(n, iterations=200):
    """min sum x^2 s.t. sum x >= 1, written as g = 1 - sum x <= 0."""
    mma = MMA(n, 1, 0.0, 1.0, move=0.2)
    x = np.full(n, 0.9)
    for it in range(iterations):
        xn = mma.update(x, x @ x, [1 - x.sum()], 2 * x, -np.ones((1, n)))
        if np.abs(xn - x).max() < 1e-9:
            return xn, it + 1
        x = xn
    return x, iterations


@pytest.mark.parametrize("n", [4, 10])
def test_symmetric_quadratic_benchmark(n):
    x, its = run_benchmark(n)
    np.testing.assert_allclose(x, 1 / n, atol=1e-4)
    assert its <= 200


def test_first_step_toward_minimum_within_move_limit():
    mma = MMA(5, 1, move=0.05)
    x = np.full(5, 0.5)
    xn = mma.update(x, 0.0, [-1.0], 2 * (x - 0.6), np.zeros((1, 5)))
    assert np.all(xn > x) and np.all(xn - x <= 0.05 + 1e-15)


def test_zero_gradient_keeps_point():
    mma = MMA(3, 2)
    x = np.array([0.1, 0.5, 0.9])
    np.testing.assert_array_equal(mma.update(x, 1.0, [-1, -1], np.zeros(3), np.zeros((2, 3))), x)
    with pytest.raises(ValueError):
        mma.update(x, 1.0, [-1, -1], np.full(3, np.nan), np.zeros((2, 3)))


@settings(max_examples=40)
@given(st.integers(0, 100_000))
def test_iterates_respect_box_and_move_limits(seed):
    rng = np.random.default_rng(seed)
    n, m = 12, 3
    move = np.r_[np.full(8, 0.1), np.full(4, 0.05)]
    mma = MMA(n, m, 0.0, 1.0, move)
    x = rng.random(n)
    H = rng.standard_normal((n, n))
    H = H @ H.T / n
    for _ in range(4):
        xn = mma.update(x, 0.5 * x @ H @ x, rng.standard_normal(m), H @ x + rng.standard_normal(n),
                        rng.standard_normal((m, n)))
        assert np.all(xn >= 0) and np.all(xn <= 1)
        assert np.all(np.abs(xn - x) <= move + 1e-12)
        x = xn


def test_asymptotes_bracket_iterate():
    mma = MMA(4, 1)
    x = np.full(4, 0.9)
    for _ in range(5):
        xn = mma.update(x, x @ x, [1 - x.sum()], 2 * x, -np.ones((1, 4)))
        assert np.all(mma.state.low < x) and np.all(x < mma.state.upp)
        x = xn


def test_table_schedule_values():
    c = Continuation()
    assert c.betas == TABLE_BETA and c.offsets == TABLE_OFFSETS
    np.testing.assert_allclose(np.round(np.array(c.payloads()) / 1000, 2), TABLE_PAYLOAD_KN)
    assert c.payloads()[-1] == pytest.approx(6000.0)
    assert np.all(np.diff(c.payloads()) < 0) and np.all(np.diff(c.betas) >= 0)


def test_payloads_are_a_five_percent_relaxation():
    assert 9.52 / 6.00 == pytest.approx(0.95**-9, rel=3e-3)
    geo = Continuation(factors=None).payloads()
    np.testing.assert_allclose(np.array(geo) / 1000, TABLE_PAYLOAD_KN, rtol=6e-3)
    np.testing.assert_allclose(geo, 6000 * 0.95 ** -np.arange(9, -1, -1.0))
    assert len(TABLE_PAYLOAD_FACTORS) == 10


def test_continuation_step_examples():
    c = Continuation()
    assert continuation_step(c, 30, None) == (0.01, pytest.approx(9520.0))
    assert continuation_step(c, 20 + 45, 20) == (2.0, pytest.approx(8600.0))
    assert continuation_step(c, 20 + 44, 20)[0] == 1.0
    assert continuation_step(c, 20 + 265, 20) == (16.0, pytest.approx(6000.0))
    assert continuation_step(c, 10_000, 20) == (16.0, pytest.approx(6000.0))


def test_trigger_uses_first_near_feasible_iterate():
    c = Continuation()
    c.observe(0, [0.3, -1, -1])
    assert c.feasible_at is None
    c.observe(7, [0.05, 0.01, -0.2])
    c.observe(9, [0.0, 0.0, 0.0])
    assert c.feasible_at == 7
    assert c.current(7) == (0.01, pytest.approx(9520.0))
    assert c.current(12)[0] == 1.0


def test_schedule_validation():
    with pytest.raises(ValueError):
        Continuation(offsets=(0, 5), betas=(1.0,))
    with pytest.raises(ValueError):
        Continuation(offsets=(5, 0), betas=(1.0, 2.0), factors=None)
    with pytest.raises(ValueError):
        Continuation(offsets=(0, 5), betas=(2.0, 1.0), factors=None)


class ToyProblem:
    """Two-variable problem with the evaluation interface of the wing problem."""

    n_gamma, n_shape, n = 1, 1, 2

    def __init__(self):
        self.cfg = SimpleNamespace(optimizer=OptimizerConfig())
        self.betas = []

    def initial_point(self):
        return np.array([0.9, 0.9])

    def evaluate(self, x, beta, payload=None, gradient=True, load_state=None):
        self.betas.append(beta)
        g = np.array([1 - x.sum(), -1.0, -1.0])
        dg = np.zeros((3, 2))
        dg[0] = -1.0
        return SimpleNamespace(f=float(x @ x), g=g, df=2 * x, dg=dg)


def test_optimize_loop_records_history():
    prob = ToyProblem()
    cont = Continuation(offsets=(0, 2, 4), betas=(0.01, 1.0, 2.0), factors=None)
    calls = []
    res = optimize(prob, 30, cont, callback=lambda rec, ev, new: calls.append((rec, new)))
    assert len(res.history) == 31 and len(calls) == 31
    assert [r.iteration for r in res.history] == list(range(31))
    np.testing.assert_allclose(res.x, 0.5, atol=1e-4)
    assert cont.feasible_at is not None
    assert prob.betas[-1] == 2.0
    assert sum(new for _, new in calls) == 3
    assert all(np.isfinite(r.seconds) for r in res.history)
