import numpy as np
import pytest
from hypothesis import given, strategies as st

from dagbnb.score import (GramData, LocalScoreCache, Penalty, all_subset_rss, bic_lambda, ols,
                          score)


def _data(seed, n=50, m=5):
    return np.random.default_rng(seed).normal(size=(n, m))


@given(st.integers(0, 10**6), st.floats(0, 3), st.floats(0, 5))
def test_score_matches_direct_residuals(seed, mu, lam):
    X = _data(seed)
    gd = GramData.from_data(X)
    rng = np.random.default_rng(seed + 1)
    support = {(0, 2), (1, 2), (3, 4)}
    beta = {a: float(rng.normal()) for a in support}
    B = np.zeros((5, 5))
    for (j, k), w in beta.items():
        B[j, k] = w
    direct = np.sum((X - X @ B) ** 2) + mu * np.sum(B ** 2) + lam * len(support)
    assert score(beta, support, gd, Penalty(lam, mu)) == pytest.approx(direct, rel=1e-9)


def test_score_rejects_beta_outside_support():
    gd = GramData.from_data(_data(0))
    with pytest.raises(ValueError):
        score({(0, 1): 1.0}, [], gd, Penalty(1.0))
    with pytest.raises(ValueError):
        score({}, [(1, 1)], gd, Penalty(1.0))


def test_penalty_and_bic_validation():
    with pytest.raises(ValueError):
        Penalty(-1.0)
    with pytest.raises(ValueError):
        bic_lambda(1)
    assert bic_lambda(100) == pytest.approx(np.log(100))


def test_gram_rejects_nonfinite():
    X = _data(1)
    X[0, 0] = np.inf
    with pytest.raises(ValueError):
        GramData.from_data(X)


@given(st.integers(0, 10**6), st.floats(0, 2))
def test_ols_is_stationary(seed, mu):
    X = _data(seed)
    gd = GramData.from_data(X)
    b, rss = ols(4, [0, 2, 3], gd, mu)
    A = X[:, [0, 2, 3]]
    grad = A.T @ (A @ b - X[:, 4]) + mu * b
    assert np.allclose(grad, 0, atol=1e-8)
    r = X[:, 4] - A @ b
    assert rss == pytest.approx(r @ r + mu * b @ b, rel=1e-9)


def test_ols_collinear_warns_and_uses_min_norm(caplog):
    X = _data(3)
    X[:, 1] = X[:, 0]
    gd = GramData.from_data(X)
    b, rss = ols(2, [0, 1], gd)
    assert "degenerate" in caplog.text
    assert b[0] == pytest.approx(b[1])
    b0, rss0 = ols(2, [0], gd)
    assert rss == pytest.approx(rss0, rel=1e-9)


def test_all_subset_rss_matches_ols():
    gd = GramData.from_data(_data(5, m=6))
    cands = [0, 2, 3, 5]
    tab = all_subset_rss(gd, 1, cands, 0.3)
    for mask in range(16):
        P = [c for i, c in enumerate(cands) if mask >> i & 1]
        assert tab[mask] == pytest.approx(ols(1, P, gd, 0.3)[1], rel=1e-9, abs=1e-9)


def test_cache_refit_matches_score():
    gd = GramData.from_data(_data(7))
    cache = LocalScoreCache(gd, 0.0)
    arcs = [(0, 1), (2, 1), (1, 4)]
    beta, val = cache.refit(arcs, 2.0)
    assert val == pytest.approx(score(beta, arcs, gd, Penalty(2.0)), rel=1e-9)
    n = len(cache)
    cache.refit(arcs, 2.0)
    assert len(cache) == n
