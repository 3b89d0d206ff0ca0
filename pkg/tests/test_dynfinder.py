import numpy as np
import pytest

from daesparse.benchgen import CrnSpec, PendulumSpec, crn_truth, simulate_crn, simulate_pendulum
from daesparse.dynfinder import (
    DiscoveredModel,
    OdeEquation,
    VariableRoles,
    assemble_dae,
    assign_variable_roles,
    discover_dynamics,
    dynamic_range,
    refit_coefficients,
)
from daesparse.errors import ConfigError, ModelError, RoleConflict
from daesparse.sparsereg import SparseFitConfig
from daesparse.termlib import (
    AlgebraicRelation,
    CandidateLibrary,
    Term,
    build_polynomial_library,
    evaluate_library,
    multiples_of,
    remove_terms,
)
from daesparse.timeseries import TimeSeriesTable, differentiate_table, inject_noise, smooth_table

T = Term.parse
CRN1 = ("A", "B", "E1", "AE1")
SPEC = CrnSpec()

G1 = AlgebraicRelation({T("[E1]"): 1.0, T("[AE1]"): 1.0, T("1"): -1.0}, T("[E1]"))
G2 = AlgebraicRelation({T("[A]*[AE1]"): 1.0, T("[AE1]"): 1.25, T("[A]"): -1.0}, T("[A]*[AE1]"))


@pytest.fixture(scope="module")
def crn1():
    return simulate_crn(SPEC, "crn1", 10.0, 400)


@pytest.fixture(scope="module")
def exact_derivs(crn1):
    ae1 = crn1.values[:, crn1.names.index("AE1")]
    return {1: {"A": -SPEC.k3 * ae1, "B": SPEC.k3 * ae1}}


@pytest.fixture(scope="module")
def refined():
    lib = build_polynomial_library(CRN1, 2)
    lib = remove_terms(lib, multiples_of(T("[E1]"), lib))
    return remove_terms(lib, multiples_of(T("[A]*[AE1]"), lib))


def _crn_model(crn1, derivs, refined):
    roles = assign_variable_roles(CRN1, [G1, G2], data=dict(zip(crn1.names, crn1.values.T)))
    odes = discover_dynamics(evaluate_library(refined, crn1), derivs, roles)
    return assemble_dae([G1, G2], odes, roles, refined.terms, crn1)


# ---------------------------------------------------------------------------
# roles
# ---------------------------------------------------------------------------

def test_crn1_roles(crn1):
    roles = assign_variable_roles(CRN1, [G1, G2], data=dict(zip(crn1.names, crn1.values.T)))
    assert roles.differential == ("A", "B")
    assert roles.algebraic == ("E1", "AE1")
    assert roles.rationale["E1"] == "pivot_elimination"
    assert roles.rationale["B"] == "no_relation_membership"
    assert roles.claims == (("E1",), ("AE1",))


def test_no_relations_all_differential():
    roles = assign_variable_roles(CRN1, [])
    assert roles.differential == CRN1 and roles.algebraic == ()
    assert set(roles.rationale.values()) == {"no_relation_membership"}


def test_preference_forces_differential(crn1):
    roles = assign_variable_roles(CRN1, [G1, G2], preference=["AE1"],
                                  data=dict(zip(crn1.names, crn1.values.T)))
    assert "AE1" in roles.differential
    assert set(roles.algebraic) == {"E1", "A"}
    assert roles.rationale["A"] == "user_preference"


def test_preference_unknown_state():
    with pytest.raises(ConfigError):
        assign_variable_roles(CRN1, [G1], preference=["Z"])


def test_roles_reject_unknown_relation_states():
    with pytest.raises(ModelError):
        assign_variable_roles(("A",), [G1])


def test_role_sets_disjoint():
    with pytest.raises(RoleConflict):
        VariableRoles(("A",), ("A",))


def test_dynamic_range():
    assert dynamic_range(np.ones(5)) == 0.0
    x = np.array([0.0, 1.0])
    assert dynamic_range(x) == pytest.approx(2.0)


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

def test_crn1_supports_from_exact_derivatives(crn1, exact_derivs, refined):
    model = _crn_model(crn1, exact_derivs, refined)
    assert set(model.odes["A"].coefficients) == {T("[AE1]")}
    assert set(model.odes["B"].coefficients) == {T("[AE1]")}
    assert model.odes["A"].coefficients[T("[AE1]")] == pytest.approx(-1.5, rel=1e-10)
    assert all(e.score >= 0.999 for e in model.odes.values())


def test_zero_derivative_gives_empty_support(crn1, refined):
    roles = assign_variable_roles(CRN1, [G1, G2], data=dict(zip(crn1.names, crn1.values.T)))
    zero = {1: {"A": np.zeros(crn1.n_samples), "B": np.zeros(crn1.n_samples)}}
    odes = discover_dynamics(evaluate_library(refined, crn1), zero, roles)
    assert not odes["A"].discovered and not odes["B"].discovered
    model = assemble_dae([G1, G2], odes, roles, refined.terms)
    assert "<not found>" in model.equations()[2]


def test_missing_derivative_order(crn1, refined):
    roles = VariableRoles(("A",), ())
    with pytest.raises(ModelError):
        discover_dynamics(evaluate_library(refined, crn1), {1: {}}, roles, orders={"A": 2})


def test_damped_pendulum_in_angle_coordinates():
    spec = PendulumSpec(alpha=0.5, initial=((2.0, 0.0), (1.0, 1.0)))
    tab = simulate_pendulum(spec, "single", 10.0, 2000, include_angles=True)
    z = np.zeros((tab.n_samples, 1))
    tab = TimeSeriesTable(tab.times, tab.names + ("z",), np.hstack([tab.values, z]), tab.segment_ids)
    lib = CandidateLibrary((Term.state("dtheta"), Term.trig("sin", "theta", "z")))
    d2 = {"theta": differentiate_table(tab, 1, 11, 4, names=["dtheta"]).column("dtheta")}
    roles = VariableRoles(("theta",), ())
    odes = discover_dynamics(evaluate_library(lib, tab), {2: d2}, roles,
                             SparseFitConfig(solver="stlsq", threshold=0.01), orders={"theta": 2})
    c = odes["theta"].coefficients
    assert c[Term.state("dtheta")] == pytest.approx(-0.5, rel=0.05)
    assert c[Term.trig("sin", "theta", "z")] == pytest.approx(-9.81, rel=0.05)


# ---------------------------------------------------------------------------
# refit
# ---------------------------------------------------------------------------

def test_refit_idempotent(crn1, exact_derivs, refined):
    once = refit_coefficients(_crn_model(crn1, exact_derivs, refined), crn1, exact_derivs)
    twice = refit_coefficients(once, crn1, exact_derivs)
    for a, b in zip(once.algebraic, twice.algebraic):
        for t in a.coefficients:
            assert b.coefficients[t] == pytest.approx(a.coefficients[t], rel=1e-12)
    assert twice.odes["A"].coefficients[T("[AE1]")] == pytest.approx(-1.5, rel=1e-10)


def test_refit_invariant_to_duplicated_data(crn1, exact_derivs, refined):
    model = _crn_model(crn1, exact_derivs, refined)
    a = refit_coefficients(model, crn1, exact_derivs)
    dup = crn1.concat(crn1)
    dd = {1: {s: np.concatenate([v, v]) for s, v in exact_derivs[1].items()}}
    b = refit_coefficients(model, dup, dd)
    for ra, rb in zip(a.algebraic, b.algebraic):
        for t in ra.coefficients:
            assert rb.coefficients[t] == pytest.approx(ra.coefficients[t], rel=1e-9)


def test_refit_on_noisy_crn(crn1, refined):
    noisy = smooth_table(inject_noise(crn1, 0.01, 3), 21, 3)
    d = differentiate_table(noisy, 1, 21, 3, names=["A", "B"])
    model = assemble_dae(
        [G1, G2],
        {"A": OdeEquation("A", {T("[AE1]"): -1.0}), "B": OdeEquation("B", {T("[AE1]"): 1.0})},
        VariableRoles(("A", "B"), ("E1", "AE1"), claims=(("E1",), ("AE1",))),
    )
    out = refit_coefficients(model, noisy, d)
    assert out.odes["A"].coefficients[T("[AE1]")] == pytest.approx(-1.5, rel=0.05)
    assert out.odes["B"].coefficients[T("[AE1]")] == pytest.approx(1.5, rel=0.05)
    assert out.algebraic[0].coefficients[T("1")] == pytest.approx(-1.0, rel=0.05)
    assert out.algebraic[1].coefficients[T("[AE1]")] == pytest.approx(1.25, rel=0.05)


# ---------------------------------------------------------------------------
# assembly and serialisation
# ---------------------------------------------------------------------------

def test_ode_for_algebraic_state_conflicts():
    roles = VariableRoles(("A", "B"), ("E1", "AE1"), claims=(("E1",), ("AE1",)))
    odes = {s: OdeEquation(s, {T("[AE1]"): 1.0}) for s in ("A", "B", "E1")}
    with pytest.raises(RoleConflict):
        assemble_dae([G1, G2], odes, roles)


def test_claim_of_differential_state_conflicts():
    roles = VariableRoles(("A", "B", "AE1"), ("E1",), claims=(("E1",), ("AE1",)))
    with pytest.raises(RoleConflict):
        assemble_dae([G1, G2], {s: OdeEquation(s, {}) for s in ("A", "B", "AE1")}, roles)


def test_missing_ode():
    roles = VariableRoles(("A", "B"), ("E1", "AE1"), claims=(("E1",), ("AE1",)))
    with pytest.raises(ModelError):
        assemble_dae([G1, G2], {"A": OdeEquation("A", {})}, roles)


def test_ode_outside_library():
    roles = VariableRoles(("A",), ())
    with pytest.raises(ModelError):
        assemble_dae([], {"A": OdeEquation("A", {T("[E1]"): 1.0})}, roles, (T("[A]"),))


def test_plain_ode_model():
    roles = VariableRoles(("A", "B"), ())
    model = assemble_dae([], {"A": OdeEquation("A", {T("[B]"): 1.0}),
                              "B": OdeEquation("B", {T("[A]"): -1.0})}, roles)
    assert model.algebraic == ()
    assert model.equations() == ["d(A)/dt = [B]", "d(B)/dt = -[A]"]


def test_json_round_trip(crn1, exact_derivs, refined):
    model = _crn_model(crn1, exact_derivs, refined)
    text = model.to_json()
    back = DiscoveredModel.from_json(text)
    assert back.to_json() == text
    assert back.structurally_equal(model)
    truth = crn_truth(SPEC)
    assert DiscoveredModel.from_json(truth.to_json()).to_json() == truth.to_json()


def test_malformed_model_json():
    with pytest.raises(ModelError):
        DiscoveredModel.from_json("{not json")
    with pytest.raises(ModelError):
        DiscoveredModel.from_json('{"states": []}')
