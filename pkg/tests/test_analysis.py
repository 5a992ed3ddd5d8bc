import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from intense.analysis import (_project_subsimplex, centered_mean_residual, convex_instance,
                              grid_minimize, lemma1_closed_form, lemma2_closed_form, pearson,
                              prop3_closed_form, prop3_numeric, run_verification,
                              theorem1_equivalence, theorem2_identity_check)
from intense.errors import ContractError, OracleFailure

ps = st.sampled_from([1.0, 1.5, 2.0, 4.0])
positive = st.floats(1e-3, 10.0)


def test_lemma1_examples():
    assert lemma1_closed_form(1.0, 1.0, 1.0) == pytest.approx((1.0, 2.0))
    for p in (1.0, 2.0, 3.5):
        assert lemma1_closed_form(2.7, 2.7, p)[0] == pytest.approx(1.0)
    with pytest.raises(ContractError):
        lemma1_closed_form(-1.0, 1.0, 1.0)
    with pytest.raises(ContractError):
        lemma1_closed_form(1.0, 1.0, 0.5)


def test_lemma2_examples():
    x, v = lemma2_closed_form(2.0, 1.0, 0.5)
    assert x == pytest.approx(1.0) and v == pytest.approx(1.0)
    with pytest.raises(ContractError):
        lemma2_closed_form(1.0, 1.0, 1.0)


@given(st.floats(0.5, 2.0), st.floats(0.5, 2.0), ps)
def test_lemma1_against_grid(u, lam, p):
    x, v = lemma1_closed_form(u, lam, p)
    gx, gv = grid_minimize(lambda t: u / t + lam / p * t ** p, 1e-6, 10.0)
    assert gx == pytest.approx(x, abs=1e-6) and gv == pytest.approx(v, rel=1e-6)


def test_prop3_examples():
    v, b = prop3_closed_form([1.0, 1.0], 1.0)
    assert v == pytest.approx(4.0) and b == pytest.approx([0.5, 0.5])
    v, b = prop3_closed_form([1.0, 4.0], 1.0)
    assert v == pytest.approx(9.0) and b == pytest.approx([1 / 3, 2 / 3])
    assert 1 / b[0] + 4 / b[1] == pytest.approx(9.0)
    v, b = prop3_closed_form([2.5], 3.0)
    assert v == pytest.approx(2.5) and b == pytest.approx([1.0])
    with pytest.raises(ContractError):
        prop3_closed_form([1.0, 0.0], 1.0)
    assert prop3_numeric([1.0, 1.0], 1.0)[0] == pytest.approx(4.0, abs=1e-4)


@given(st.lists(positive, min_size=1, max_size=8), ps)
def test_prop3_closed_form_feasible_and_tight(a, p):
    v, b = prop3_closed_form(a, p)
    assert abs(np.sum(b ** p) - 1.0) < 1e-12
    assert np.sum(np.array(a) / b) == pytest.approx(v, rel=1e-12)


@given(st.lists(positive, min_size=1, max_size=8), ps)
def test_prop3_numeric_agrees(a, p):
    v, _ = prop3_closed_form(a, p)
    assert prop3_numeric(a, p)[0] == pytest.approx(v, rel=1e-4)


def test_prop3_numeric_reports_non_convergence():
    with pytest.raises(OracleFailure):
        prop3_numeric([1.0, 2.0, 3.0], 1.0, max_iter=2)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6))
def test_subsimplex_projection(v):
    v = np.array(v)
    w = _project_subsimplex(v)
    assert np.all(w >= 0) and w.sum() <= 1 + 1e-12
    # optimality against random feasible points
    rng = np.random.default_rng(0)
    for _ in range(20):
        z = rng.dirichlet(np.ones(len(v))) * rng.uniform()
        assert np.sum((v - w) ** 2) <= np.sum((v - z) ** 2) + 1e-9


def test_theorem1_single_modality():
    feats, labels = convex_instance(1, 100, 3, seed=0)
    rep = theorem1_equivalence(feats, labels)
    assert rep.beta_direct == pytest.approx([1.0]) and rep.beta_recovered == pytest.approx([1.0])


def test_theorem1_duplicated_modalities_get_equal_beta():
    feats, labels = convex_instance(1, 150, 3, seed=1)
    rep = theorem1_equivalence([feats[0], feats[0].copy()], labels)
    assert rep.beta_direct[0] == pytest.approx(rep.beta_direct[1], rel=1e-4)
    assert rep.beta_recovered[0] == pytest.approx(rep.beta_recovered[1], rel=1e-4)


@pytest.mark.parametrize("p", [1.0, 2.0])
def test_theorem1_gap_and_monotone_history(p):
    feats, labels = convex_instance(3, 200, 4, seed=2)
    rep = theorem1_equivalence(feats, labels, 0.05, p)
    assert rep.relative_gap < 1e-3 and rep.beta_gap < 5e-2
    assert all(b <= a * (1 + 1e-12) for a, b in zip(rep.history, rep.history[1:]))


def test_theorem2_examples_and_errors():
    rng = np.random.default_rng(0)
    feats = {1: rng.normal(size=(32, 1)), 2: rng.normal(size=(32, 1)), 3: rng.normal(size=(32, 1))}
    assert theorem2_identity_check(feats, (1, 2)) < 1e-9
    for r in range(3):
        for sub in itertools.combinations((1, 2, 3), r):
            assert theorem2_identity_check(feats, (1, 2, 3), sub) < 1e-9
    assert theorem2_identity_check(feats, (1,)) < 1e-12
    with pytest.raises(ContractError):
        theorem2_identity_check(feats, (1, 2), (1, 2))


def test_theorem2_detects_wrong_coefficients(monkeypatch):
    """The residual is not vacuous: perturbing the moments breaks it."""
    import intense.analysis as A
    rng = np.random.default_rng(1)
    feats = {1: rng.normal(1, 1, size=(16, 2)), 2: rng.normal(1, 1, size=(16, 2))}
    real = A.compute_moments

    def skewed(batches, inter):
        cache = real(batches, inter)
        cache.moments[(1,)] = cache.moments[(1,)] * 1.1
        return cache

    monkeypatch.setattr(A, "compute_moments", skewed)
    assert theorem2_identity_check(feats, (1, 2)) > 1e-3
    assert centered_mean_residual(feats, (1, 2)) > 1e-3


def test_pearson():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert np.isnan(pearson([1, 1, 1], [1, 2, 3]))


@pytest.mark.parametrize("seed", [1, 2])
def test_verification_suites_pass_for_other_seeds(seed):
    results = run_verification(seed=seed)
    assert all(r.passed for r in results), [r.to_dict() for r in results if not r.passed]
    with pytest.raises(ContractError):
        run_verification(["nope"])
