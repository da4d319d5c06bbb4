import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fgmddo.bench import gen_rbf_mixture
from fgmddo.discovery import (EmaPseudoHessian, PseudoHessian, critical_value, edge_test, ema_update,
                              estimate_pseudo_hessian, whiten_fit)
from fgmddo.fgm import ged
from fgmddo.numkit import make_rng


def test_zero_target():
    X = make_rng(0).standard_normal((100, 3))
    ph = estimate_pseudo_hessian(X, np.zeros(100))
    assert np.all(ph.H == 0) and np.all(ph.sigma == 0)
    assert edge_test(ph).edges == frozenset()


def test_needs_two_samples():
    with pytest.raises(ValueError):
        estimate_pseudo_hessian(np.zeros((1, 2)), np.zeros(1))


def test_product_function_moment():
    M = 10**6
    X = make_rng(1).standard_normal((M, 2))
    ph = estimate_pseudo_hessian(X, X[:, 0] * X[:, 1])
    assert abs(ph.H[0, 1] - 1.0) <= 3 * ph.sigma[0, 1] / np.sqrt(M)


def test_matches_direct_formula_and_symmetry():
    rng = make_rng(2)
    X = rng.standard_normal((500, 4))
    y = rng.standard_normal(500)
    ph = estimate_pseudo_hessian(X, y)
    yc = y - y.mean()
    P = X[:, :, None] * X[:, None, :] * yc[:, None, None]
    np.testing.assert_allclose(ph.H, P.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(ph.sigma, P.std(axis=0, ddof=1), atol=1e-10)
    assert np.array_equal(ph.H, ph.H.T) and np.array_equal(ph.sigma, ph.sigma.T)


def stein_trial(seed, M=10**6, d=5):
    rng = make_rng(seed, 55)
    Q = rng.standard_normal((d, d))
    X = rng.standard_normal((M, d))
    ph = estimate_pseudo_hessian(X, np.einsum("ni,ij,nj->n", X, Q, X))
    iu = np.triu_indices(d, 1)
    return (np.abs(ph.H - (Q + Q.T)) * np.sqrt(M) / ph.sigma)[iu]


def test_stein_quadratic_example():
    assert np.all(stein_trial(0) <= 3.0)


def test_stein_consistency_failure_rate():
    z = np.concatenate([stein_trial(s) for s in range(50)])
    assert np.mean(z > 3.0) <= 0.02


def test_edge_threshold_arithmetic():
    H = np.array([[0.0, 1.0], [1.0, 0.0]])
    S = np.ones((2, 2))
    assert edge_test(PseudoHessian(H, S, 100), 0.05).edges == {(0, 1)}
    assert abs(critical_value(0.05) - 1.959963984540054) < 1e-12
    # a coefficient just below the threshold is dropped
    H2 = H * (1.95 / 10)
    assert edge_test(PseudoHessian(H2, S, 100), 0.05).edges == frozenset()


def test_edge_zero_sigma_rules():
    H = np.array([[0, 0.5, 0], [0.5, 0, 0], [0, 0, 0]], dtype=float)
    S = np.zeros((3, 3))
    assert edge_test(PseudoHessian(H, S, 10)).edges == {(0, 1)}


def test_alpha_validation():
    ph = PseudoHessian(np.zeros((2, 2)), np.ones((2, 2)), 10)
    for a in (0.0, 1.0, -0.1, 2.0):
        with pytest.raises(ValueError):
            edge_test(ph, a)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), a1=st.floats(1e-4, 0.99), a2=st.floats(1e-4, 0.99))
def test_edge_monotone_in_alpha(seed, a1, a2):
    rng = make_rng(seed)
    X = rng.standard_normal((200, 5))
    y = X[:, 0] * X[:, 1] + 0.3 * rng.standard_normal(200)
    ph = estimate_pseudo_hessian(X, y)
    lo, hi = sorted((a1, a2))
    assert edge_test(ph, lo).edges <= edge_test(ph, hi).edges


def test_unit_sigma_variant():
    H = np.array([[0.0, 0.3], [0.3, 0.0]])
    S = np.full((2, 2), 100.0)
    ph = PseudoHessian(H, S, 100)
    assert edge_test(ph).edges == frozenset()
    assert edge_test(ph, unit_sigma=True).edges == {(0, 1)}


def test_csv_roundtrip(tmp_path):
    rng = make_rng(3)
    X = rng.standard_normal((50, 3))
    ph = estimate_pseudo_hessian(X, rng.standard_normal(50))
    text = ph.to_csv()
    assert text.splitlines()[0] == "i,j,H,sigma,M"
    assert len(text.splitlines()) == 1 + 6
    back = PseudoHessian.from_csv(text)
    assert np.array_equal(back.H, ph.H) and np.array_equal(back.sigma, ph.sigma) and back.M == ph.M
    ph.save(tmp_path / "ph.csv")
    assert np.array_equal(PseudoHessian.load(tmp_path / "ph.csv").H, ph.H)


def test_rbf_graph_recovery_7d():
    geds = []
    for s in range(3):
        b = gen_rbf_mixture(7, "triangle-chain", s)
        data = b.sample(100_000, make_rng(s, 1))
        geds.append(ged(b.graph, edge_test(estimate_pseudo_hessian(data.X, data.y))))
    assert np.mean(geds) <= 0.2


def test_non_edges_have_small_entries():
    inside, total = 0, 0
    for s in range(20):
        b = gen_rbf_mixture(7, "triangle-chain", s)
        data = b.sample(20_000, make_rng(s, 9))
        ph = estimate_pseudo_hessian(data.X, data.y)
        for i in range(7):
            for j in range(i + 1, 7):
                if not b.graph.has_edge(i, j):
                    total += 1
                    inside += abs(ph.H[i, j]) <= 4 * ph.sigma[i, j] / np.sqrt(ph.M)
    assert inside / total >= 0.95


# -- EMA --------------------------------------------------------------------

def _batch(seed, n=64, d=3):
    rng = make_rng(seed)
    X = rng.standard_normal((n, d))
    return X, X[:, 0] * X[:, 1] + rng.standard_normal(n)


def test_ema_zero_momentum_is_latest_batch():
    st_ = EmaPseudoHessian(3, momentum=0.0)
    for s in range(3):
        X, y = _batch(s)
        ema_update(st_, X, y)
    ref = estimate_pseudo_hessian(X, y)
    np.testing.assert_allclose(st_.result().H, ref.H, atol=1e-12)


def test_ema_identical_batches_fixed_point():
    X, y = _batch(4)
    st_ = EmaPseudoHessian(3, momentum=0.7)
    st_.update(X, y).update(X, y).update(X, y)
    np.testing.assert_allclose(st_.result().H, estimate_pseudo_hessian(X, y).H, atol=1e-12)
    assert st_.result().M == 3 * len(y)


def test_ema_geometric_convergence():
    st_ = EmaPseudoHessian(2, momentum=0.99, center=False)
    X0 = np.array([[1.0, 1.0], [1.0, 1.0]])
    st_.update(X0, np.zeros(2))  # start at 0
    X = np.array([[1.0, 1.0], [-1.0, -1.0]])
    for _ in range(2000):
        st_.update(X, np.array([1.0, 1.0]))  # products are all 1
    assert abs(st_.result().H[0, 1] - 1.0) <= 1e-6 + 0.99 ** 2000


def test_ema_momentum_validation():
    with pytest.raises(ValueError):
        EmaPseudoHessian(2, momentum=1.0)
    with pytest.raises(ValueError):
        EmaPseudoHessian(2).update(np.zeros((0, 2)), np.zeros(0))


# -- whitening --------------------------------------------------------------

def test_whiten_standard_normal_near_identity():
    X = make_rng(5).standard_normal((100_000, 5))
    wt = whiten_fit(X)
    assert np.linalg.norm(wt.transform - np.eye(5)) <= 0.05


def test_whiten_scaling():
    X = 2 * make_rng(6).standard_normal((100_000, 3))
    assert np.linalg.norm(whiten_fit(X).transform - 0.5 * np.eye(3)) <= 0.02


def test_whiten_constant_column_errors():
    X = make_rng(7).standard_normal((100, 3))
    X[:, 1] = 4.0
    with pytest.raises(ValueError, match="rank deficient"):
        whiten_fit(X)
    with pytest.raises(ValueError):
        whiten_fit(np.zeros((2, 3)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), d=st.integers(1, 6))
def test_whiten_invariants(seed, d):
    rng = make_rng(seed)
    A = rng.standard_normal((d, d)) + 2 * np.eye(d)
    X = rng.standard_normal((200, d)) @ A.T + rng.standard_normal(d)
    wt = whiten_fit(X)
    Z = wt.apply(X)
    assert np.abs(Z.mean(axis=0)).max() <= 1e-10
    assert np.linalg.norm(np.cov(Z, rowvar=False).reshape(d, d) - np.eye(d)) <= 1e-6
    back = wt.invert(Z)
    assert np.max(np.abs(back - X)) <= 1e-8 * max(1.0, np.abs(X).max())
