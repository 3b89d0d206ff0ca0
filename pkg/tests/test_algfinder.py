import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daesparse.algfinder import (
    AlgebraicConfig,
    choose_pivot,
    fit_all_candidates,
    refine_library,
    run_algebraic_finder,
    select_best_relation,
    svd_diagnostics,
)
from daesparse.benchgen import CrnSpec, simulate_crn
from daesparse.dynfinder import relation_residuals
from daesparse.errors import ConfigError, LibraryError, NoRelationFound
from daesparse.sparsereg import SparseFitConfig
from daesparse.termlib import (
    AlgebraicRelation,
    CandidateLibrary,
    Term,
    build_polynomial_library,
    evaluate_library,
)
from daesparse.timeseries import TimeSeriesTable

T = Term.parse
CRN1 = ("A", "B", "E1", "AE1")


def _tab(cols: dict):
    names = tuple(cols)
    vals = np.column_stack([cols[n] for n in names])
    return TimeSeriesTable(np.arange(len(vals), dtype=float), names, vals)


def planted(p: int, free: int = 10, n: int = 500, seed: int = 0):
    """Degree-1 library over ``free`` random states plus ``p`` exact combinations of disjoint triples."""
    rng = np.random.default_rng(seed)
    cols = {f"z{i:02d}": rng.normal(size=n) for i in range(free)}
    for k in range(p):
        w = rng.normal(size=3)
        cols[f"zz{k}"] = sum(w[j] * cols[f"z{3 * k + j:02d}"] for j in range(3))
    tab = _tab(cols)
    return build_polynomial_library(tab.names, 1), tab


@pytest.fixture(scope="module")
def crn1_table():
    return simulate_crn(CrnSpec(), "crn1", 10.0, 400)


@pytest.fixture(scope="module")
def crn1_result(crn1_table):
    return run_algebraic_finder(build_polynomial_library(CRN1, 2), crn1_table)


# ---------------------------------------------------------------------------
# SVD diagnostics
# ---------------------------------------------------------------------------

def test_orthonormal_columns():
    q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(100, 5)))
    d = svd_diagnostics(q)
    assert np.allclose(d.variance_ratios, 0.2)
    assert d.nullity_estimate == 0 and d.numeric_rank == 5
    assert d.log_condition == pytest.approx(0.0, abs=1e-12)


def test_planted_dependency_nullity_one():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 6))
    X[:, 5] = X[:, 0] + X[:, 1]
    assert svd_diagnostics(X).nullity_estimate == 1


@given(st.integers(2, 20), st.integers(1, 12), st.integers(0, 2 ** 31 - 1))
def test_variance_ratios_sum_to_one(n, j, seed):
    X = np.random.default_rng(seed).normal(size=(n, j))
    d = svd_diagnostics(X)
    assert abs(d.variance_ratios.sum() - 1.0) <= 1e-12
    assert np.all(np.diff(d.singular_values) <= 0)
    assert d.nullity_estimate >= 0


def test_log_condition_is_finite_on_exact_dependency():
    X = np.ones((10, 2))
    d = svd_diagnostics(X)
    assert d.nullity_estimate == 1
    assert d.log_condition == pytest.approx(math.log(1e14))


def test_svd_rejects_empty():
    with pytest.raises(LibraryError):
        svd_diagnostics(np.zeros((0, 3)))


# ---------------------------------------------------------------------------
# candidate fits and selection
# ---------------------------------------------------------------------------

def test_exact_pair_both_fit():
    a = np.random.default_rng(2).normal(size=50)
    lib = CandidateLibrary((T("[a]"), T("[b]")))
    m = evaluate_library(lib, _tab({"a": a, "b": 3 * a}))
    fits = fit_all_candidates(m, SparseFitConfig())
    assert [f.index for f in fits] == [0, 1]
    assert all(f.fit.r2 == pytest.approx(1.0) for f in fits)
    rel = fits[1].relation
    assert rel.coefficients[T("[a]")] == pytest.approx(3.0)
    assert rel.coefficients[T("[b]")] == -1.0


def test_orthogonal_columns_give_no_relation():
    n = 64
    t = np.arange(n)
    cols = {f"c{k}": np.sqrt(2) * np.cos(2 * np.pi * (k + 1) * t / n) for k in range(5)}
    m = evaluate_library(build_polynomial_library(list(cols), 1, include_constant=False), _tab(cols))
    fits = fit_all_candidates(m, SparseFitConfig())
    assert all(f.fit.empty and f.score == -math.inf and f.relation is None for f in fits)
    with pytest.raises(NoRelationFound):
        select_best_relation(fits)


def test_fits_skip_degenerate_and_need_two_columns():
    tab = _tab({"p": np.linspace(0, 1, 20), "q": np.zeros(20)})
    lib = CandidateLibrary((T("[p]"), T("[q]")))
    with pytest.raises(LibraryError):
        fit_all_candidates(evaluate_library(lib, tab), SparseFitConfig())


def test_fits_independent_of_thread_count(crn1_table):
    m = evaluate_library(build_polynomial_library(CRN1, 2), crn1_table)
    cfg = SparseFitConfig(solver="stlsq")
    serial = fit_all_candidates(m, cfg, n_jobs=1)
    threaded = fit_all_candidates(m, cfg, n_jobs=4)
    assert [f.index for f in serial] == [f.index for f in threaded]
    for a, b in zip(serial, threaded):
        assert np.array_equal(a.fit.coefficients, b.fit.coefficients)


def test_crn1_best_fit_support(crn1_table):
    m = evaluate_library(build_polynomial_library(CRN1, 2), crn1_table)
    _, rel = select_best_relation(fit_all_candidates(m, SparseFitConfig()), universe=m.library)
    allowed = {T("[E1]"), T("[AE1]"), T("[A]*[E1]"), T("[A]*[AE1]"), T("[A]"), T("1"),
               T("[E1]^2"), T("[AE1]*[E1]"), T("[AE1]^2"), T("[B]*[E1]"), T("[B]*[AE1]"), T("[B]")}
    assert set(rel.coefficients) <= allowed


class _Fit:
    def __init__(self, index, term, score, coeffs):
        self.index, self.term, self.score = index, term, score
        self.relation = AlgebraicRelation(coeffs, term, score) if coeffs else None


def test_select_single_and_argmax():
    one = _Fit(0, T("[a]"), 1.0, {T("[a]"): -1.0, T("[b]"): 2.0})
    assert select_best_relation([one])[0] == 0
    hi = _Fit(0, T("[a]"), 0.99, {T("[a]"): -1.0, T("[b]"): 2.0})
    lo = _Fit(1, T("[b]"), 0.97, {T("[b]"): -1.0, T("[a]"): 0.5})
    assert select_best_relation([hi, lo])[0] == 0


def test_select_tie_prefers_smaller_support():
    big = _Fit(0, T("[a]"), 1.0, {T("[a]"): -1, T("[b]"): 1, T("[c]"): 1, T("[d]"): 1})
    small = _Fit(3, T("[d]"), 1.0, {T("[d]"): -1, T("[c]"): 2})
    assert select_best_relation([big, small])[0] == 3


def test_select_tie_falls_back_to_target_encoding():
    a = _Fit(1, T("[b]"), 1.0, {T("[b]"): -1, T("[c]"): 1})
    b = _Fit(0, T("[a]"), 1.0, {T("[a]"): -1, T("[c]"): 1})
    assert select_best_relation([a, b])[0] == 0


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------

def test_conservation_relation_refines_on_e1():
    lib = build_polynomial_library(CRN1, 2)
    rel = AlgebraicRelation({T("[E1]"): -1.0, T("[AE1]"): -1.0, T("1"): 1.0}, T("[AE1]"))
    step = refine_library(lib, rel)
    assert step.removed_pivot == T("[E1]")
    assert len(step.removed_set) == 5
    assert len(step.library_after) == 10


def test_pivot_is_highest_complexity():
    rel = AlgebraicRelation({T("[x]^2"): 1.0, T("[y]"): 1.0}, T("[y]"))
    assert choose_pivot(rel) == T("[x]^2")


def test_pivot_never_constant():
    rel = AlgebraicRelation({T("1"): 1.0, T("[y]"): 1.0}, T("[y]"))
    assert choose_pivot(rel) == T("[y]")


def test_pivot_tiebreak_policies():
    rel = AlgebraicRelation({T("[E1]"): 1.0, T("[AE1]"): 1.0, T("1"): -1.0}, T("[E1]"))
    assert choose_pivot(rel, "lex") == T("[E1]")
    assert choose_pivot(rel, ["[AE1]"]) == T("[AE1]")
    picks = {choose_pivot(rel, "random", np.random.default_rng(s)) for s in range(20)}
    assert picks == {T("[E1]"), T("[AE1]")}
    a = choose_pivot(rel, "random", np.random.default_rng(5))
    assert a == choose_pivot(rel, "random", np.random.default_rng(5))
    with pytest.raises(ConfigError):
        choose_pivot(rel, "widest")


def test_refine_reduces_common_factor():
    lib = build_polynomial_library(CRN1, 2)
    rel = AlgebraicRelation({T("[A]*[E1]"): 1.0, T("[A]*[AE1]"): 1.0, T("[A]"): -1.0}, T("[A]*[E1]"))
    step = refine_library(lib, rel)
    assert set(step.relation.coefficients) == {T("[E1]"), T("[AE1]"), T("1")}


def test_degree4_refinement_keeps_dominant_directions(crn1_table):
    lib = build_polynomial_library(CRN1, 4)
    full = evaluate_library(lib, crn1_table)
    before = svd_diagnostics(full)
    rel = AlgebraicRelation({T("[E1]"): 1.0, T("[AE1]"): 1.0, T("1"): -1.0}, T("[E1]"))
    step = refine_library(lib, rel)
    after = svd_diagnostics(full.subset(step.library_after))
    assert after.numeric_rank == before.numeric_rank
    assert after.nullity_estimate == before.nullity_estimate - len(step.removed_set)


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------

def test_k0_eps_inf_runs_no_iterations(crn1_table):
    lib = build_polynomial_library(CRN1, 2)
    res = run_algebraic_finder(lib, crn1_table, AlgebraicConfig(K=0, eps=math.inf))
    assert res.relations == () and res.trace == ()
    assert res.refined_library.terms == lib.terms
    assert res.stop_reason == "reached_K"


def test_crn1_two_relations(crn1_result, crn1_table):
    res = crn1_result
    assert len(res.relations) == len(res.trace) == 2
    assert res.stop_reason == "condition_stagnation"
    removed = {t for s in res.trace for t in s.removed_set}
    assert set(res.refined_library.terms) == set(res.initial_library.terms) - removed
    assert max(relation_residuals(res.relations, crn1_table)) <= 1e-6


def test_accepted_steps_beat_eps(crn1_result):
    for s in crn1_result.trace:
        assert s.diagnostics_after.log_condition <= s.diagnostics_before.log_condition - 2.0
    assert crn1_result.rejected.improvement <= 2.0


def test_refined_library_has_no_collinear_pair(crn1_result, crn1_table):
    m = evaluate_library(crn1_result.refined_library, crn1_table)
    X = m.values[:, m.usable()]
    X = X - X.mean(axis=0)
    keep = np.std(X, axis=0) > 0
    C = np.corrcoef(X[:, keep], rowvar=False)
    np.fill_diagonal(C, 0.0)
    assert np.max(np.abs(C)) < 1 - 1e-9


def test_known_k_is_mandatory_and_shortfall_reported(crn1_table):
    lib = build_polynomial_library(CRN1, 2)
    res = run_algebraic_finder(lib, crn1_table, AlgebraicConfig(K=1, eps=math.inf))
    assert len(res.relations) == 1 and res.stop_reason == "reached_K" and not res.shortfall
    res = run_algebraic_finder(lib, crn1_table, AlgebraicConfig(K=12, eps=math.inf, score_floor=0.999999))
    assert res.shortfall and len(res.relations) < 12


def test_eps_schedule(crn1_table):
    lib = build_polynomial_library(CRN1, 2)
    res = run_algebraic_finder(lib, crn1_table, AlgebraicConfig(eps=(2.0, 1000.0)))
    assert len(res.relations) == 1 and res.stop_reason == "condition_stagnation"
    assert AlgebraicConfig(eps=(1.0, 3.0)).eps_at(7) == 3.0


def test_config_validation():
    with pytest.raises(ConfigError):
        AlgebraicConfig(K=-1)
    with pytest.raises(ConfigError):
        AlgebraicConfig(eps=-1.0)
    with pytest.raises(ConfigError):
        AlgebraicConfig(score_fn="mae")


@pytest.mark.parametrize("p", [1, 2, 3])
def test_planted_dependencies_removed_one_per_step(p):
    lib, tab = planted(p)
    res = run_algebraic_finder(lib, tab)
    assert res.initial_diagnostics.nullity_estimate == p
    assert len(res.relations) == p
    for s in res.trace:
        assert s.diagnostics_after.nullity_estimate == s.diagnostics_before.nullity_estimate - 1
        assert s.diagnostics_after.numeric_rank == s.diagnostics_before.numeric_rank
    assert res.trace[-1].diagnostics_after.nullity_estimate == 0


@settings(max_examples=15)
@given(st.integers(1, 3), st.integers(0, 10_000))
def test_planted_nullity_property(p, seed):
    lib, tab = planted(p, free=int(9 + seed % 20), seed=seed)
    assert len(lib) <= 40
    assert svd_diagnostics(evaluate_library(lib, tab)).nullity_estimate == p
