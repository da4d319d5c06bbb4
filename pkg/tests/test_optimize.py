import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fgmddo.bench import Dataset, gen_quadratic_cycle, gen_rbf_mixture
from fgmddo.numkit import make_rng
from fgmddo.optimize import (GaussianPolicy, OptimizationError, OptimizationTrace, STD_FLOOR, TraceRecord,
                             argmax_discrete, ascend_policy, best_in_dataset, coordinate_ascent, policy_value,
                             regret, rwr_baseline)
from fgmddo.surrogate import fit_onehot


class Quadratic:
    """f(x) = -|x|^2 with its exact gradient."""

    def predict(self, X):
        return -np.sum(X ** 2, axis=1)

    def gradient(self, X):
        return -2 * X


class Zero:
    def predict(self, X):
        return np.zeros(len(X))

    def gradient(self, X):
        return np.zeros_like(X)


class Table:
    """Discrete model backed by a callable."""

    def __init__(self, f):
        self.f = f

    def predict(self, X):
        return self.f(np.asarray(X))


# -- best in dataset ----------------------------------------------------------

def test_best_in_dataset_examples():
    X = np.array([[0, 0], [1, 1], [1, 0]])
    x, v = best_in_dataset(Dataset(X, np.array([0.0, 2.0, 1.0]), (2, 2)))
    assert np.array_equal(x, [1, 1]) and v == 2.0
    # ties resolve to the first row
    x, _ = best_in_dataset(Dataset(X, np.array([1.0, 1.0, 0.0]), (2, 2)))
    assert np.array_equal(x, [0, 0])
    with pytest.raises(ValueError):
        best_in_dataset(Dataset(np.zeros((0, 2)), np.zeros(0)))


def test_best_in_dataset_d12_hit_frequency():
    b = gen_quadratic_cycle(12)
    hits = [best_in_dataset(b.sample(1000, make_rng(s, 1)))[1] == 12 for s in range(50)]
    expected = 1 - (1 - 2.0 ** -12) ** 1000
    assert abs(expected - 0.217) < 1e-3
    assert abs(np.mean(hits) - expected) <= 0.15


# -- discrete argmax ------------------------------------------------------------

def test_constant_model_all_zeros():
    x = argmax_discrete(Table(lambda X: np.zeros(len(X))), (2, 3, 2))
    assert np.array_equal(x, [0, 0, 0])


def _cycle_model(d=4):
    b = gen_quadratic_cycle(d)
    X = np.array(list(product([0, 1], repeat=d)))
    return fit_onehot(Dataset(X, b(X), b.cardinalities), b.cliques, lam=1e-9), b


def test_onehot_cycle_argmax_all_ones():
    m, b = _cycle_model()
    assert np.array_equal(argmax_discrete(m, b.cardinalities), np.ones(4))


def test_coordinate_ascent_success_rate():
    m, b = _cycle_model()
    rng = make_rng(1)
    hits = sum(np.array_equal(argmax_discrete(m, b.cardinalities, mode="coordinate", rng=rng), np.ones(4))
               for _ in range(100))
    assert hits >= 95


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), card=st.lists(st.integers(1, 4), min_size=1, max_size=5))
def test_exhaustive_equals_brute_force(seed, card):
    # random lookup table with distinct values, so the maximiser is unique
    rng = make_rng(seed)
    vals = rng.permutation(math.prod(card)).astype(float)
    f = lambda X: vals[np.ravel_multi_index(tuple(X.T), tuple(card))]
    m = Table(f)
    best = max(product(*[range(k) for k in card]), key=lambda x: f(np.array([x]))[0])
    assert tuple(argmax_discrete(m, card, chunk=7)) == best
    local = coordinate_ascent(m, card, 3, 50, rng)
    assert f(local[None])[0] <= f(np.array([best]))[0]


def test_exhaustive_tie_break_lexicographic():
    m = Table(lambda X: -np.abs(X.sum(axis=1) - 1.0))
    assert np.array_equal(argmax_discrete(m, (2, 2, 2)), [0, 0, 1])


def test_exhaustive_limit():
    with pytest.raises(ValueError):
        argmax_discrete(Table(lambda X: np.zeros(len(X))), (2,) * 21, mode="exhaustive")
    with pytest.raises(ValueError):
        argmax_discrete(Table(lambda X: np.zeros(len(X))), (2,) * 21, allow_heuristic=False)


# -- policy ascent ------------------------------------------------------------

def test_quadratic_converges_to_origin():
    init = GaussianPolicy.from_std(np.full(3, 3.0), 0.1)
    pol, trace = ascend_policy(Quadratic(), init, 500, 0.05, rng=make_rng(0), learn_std=False)
    assert np.linalg.norm(pol.mean) <= 0.1
    assert len(trace.records) == 501
    assert trace.surrogate_values[-1] > trace.surrogate_values[0]


def test_quadratic_converges_with_sgd():
    init = GaussianPolicy.from_std(np.full(3, 3.0), 0.1)
    pol, _ = ascend_policy(Quadratic(), init, 500, 0.05, rng=make_rng(0), learn_std=False, optimizer="sgd")
    # plain ascent contracts by (1 - 2 lr) per step, up to sampling noise in the batch gradient
    assert np.linalg.norm(pol.mean) <= 0.05


def test_zero_model_leaves_policy():
    init = GaussianPolicy.from_std(np.array([1.0, -2.0]), np.array([0.5, 2.0]))
    pol, _ = ascend_policy(Zero(), init, 20, 0.1, rng=make_rng(1))
    assert np.array_equal(pol.mean, init.mean) and np.array_equal(pol.log_std, init.log_std)


def test_zero_lr_flat_trace():
    init = GaussianPolicy.from_std(np.ones(2), 0.3)
    pol, trace = ascend_policy(Quadratic(), init, 10, 0.0, rng=make_rng(2))
    assert np.array_equal(pol.mean, init.mean)
    assert all(np.array_equal(r.mean, init.mean) for r in trace.records)


def test_non_finite_gradient_reports_step():
    class Bad(Quadratic):
        def gradient(self, X):
            return np.full_like(X, np.nan)

    with pytest.raises(OptimizationError, match="step 0"):
        ascend_policy(Bad(), GaussianPolicy.from_std(np.zeros(2), 1.0), 5, 0.1)
    with pytest.raises(ValueError):
        ascend_policy(Zero(), GaussianPolicy.from_std(np.zeros(2), 1.0), 0, 0.1)


def test_on_step_sees_every_batch():
    seen = []
    ascend_policy(Zero(), GaussianPolicy.from_std(np.zeros(2), 1.0), 4, 0.1, batch=8,
                  on_step=lambda k, X: seen.append((k, X.shape)))
    assert seen == [(k, (8, 2)) for k in range(5)]


def test_oracle_column_filled():
    _, tr = ascend_policy(Quadratic(), GaussianPolicy.from_std(np.ones(2), 0.1), 3, 0.1,
                          oracle=lambda X: -np.sum(X ** 2, axis=1))
    np.testing.assert_allclose(tr.true_values, tr.surrogate_values)


def test_ascent_improves_true_rbf_value():
    b = gen_rbf_mixture(7, "triangle-chain", 0)

    class Exact:
        def predict(self, X):
            return b(X)

        def gradient(self, X, h=1e-5):
            G = np.empty_like(X)
            for k in range(X.shape[1]):
                e = np.zeros(X.shape[1])
                e[k] = h
                G[:, k] = (b(X + e) - b(X - e)) / (2 * h)
            return G

    init = GaussianPolicy.from_std(np.zeros(7), 0.5)
    pol, tr = ascend_policy(Exact(), init, 50, 0.1, rng=make_rng(3))
    assert policy_value(pol, b) > policy_value(init, b) + 0.5


# -- reward-weighted regression -------------------------------------------------

def test_rwr_limits_and_hand_value():
    rng = make_rng(4)
    X = rng.standard_normal((30, 2))
    y = rng.standard_normal(30)
    data = Dataset(X, y)
    np.testing.assert_allclose(rwr_baseline(data, 1e6).mean, X.mean(axis=0), atol=1e-3)
    np.testing.assert_allclose(rwr_baseline(data, 1e-6).mean, X[np.argmax(y)], atol=1e-12)
    two = Dataset(np.array([[0.0], [2.0]]), np.array([0.0, 1.0]))
    assert rwr_baseline(two, 1.0).mean[0] == pytest.approx(2 / (math.exp(-1) + 1))
    assert rwr_baseline(two, 1.0).mean[0] == pytest.approx(1.462, abs=1e-3)
    with pytest.raises(ValueError):
        rwr_baseline(two, 0.0)


def test_std_floor():
    pol = rwr_baseline(Dataset(np.ones((4, 2)), np.arange(4.0)), 1.0)
    np.testing.assert_allclose(pol.std, STD_FLOOR, rtol=1e-12)


# -- regret and traces ---------------------------------------------------------

def test_regret_examples():
    b4 = gen_quadratic_cycle(4)
    assert regret(np.ones(4), b4) == 0.0
    assert regret(np.zeros(4), b4) == 4.0
    assert regret(np.array([1, 0] * 4), gen_quadratic_cycle(8)) == 8.0
    with pytest.raises(ValueError):
        regret(np.zeros(7), gen_rbf_mixture(7, "triangle-chain", 0))


def test_policy_regret_point_mass():
    b = gen_quadratic_cycle(4)
    assert regret(GaussianPolicy.from_std(np.ones(4), 0.0), b) == pytest.approx(0.0, abs=1e-4)


def test_trace_csv_and_order():
    tr = OptimizationTrace()
    tr.append(TraceRecord(0, 1.0, float("nan"), np.array([3.0, 4.0])))
    with pytest.raises(ValueError):
        tr.append(TraceRecord(0, 1.0, 1.0, np.zeros(2)))
    lines = tr.to_csv().splitlines()
    assert lines[0] == "step,surrogate_value,true_value,policy_mean_norm"
    assert lines[1] == "0,1.0,nan,5.0"
