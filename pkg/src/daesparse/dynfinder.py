"""Variable roles, ODE discovery on the refined library, and DAE assembly."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ModelError, RoleConflict
from .sparsereg import SparseFitConfig, _r2
from .termlib import (
    AlgebraicRelation,
    CandidateLibrary,
    LibraryMatrix,
    Term,
    complexity_score,
    evaluate_library,
)
from .timeseries import DerivativeTable

RATIONALES = ("no_relation_membership", "user_preference", "pivot_elimination", "dynamic_range")


def fmt_num(x: float) -> float:
    """Round to 12 significant digits (the canonical output precision)."""
    x = float(x)
    if not math.isfinite(x):
        return x
    return float(f"{x:.12g}")


# ---------------------------------------------------------------------------
# variable roles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VariableRoles:
    differential: tuple[str, ...]
    algebraic: tuple[str, ...]
    rationale: dict = field(default_factory=dict)
    claims: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        both = set(self.differential) & set(self.algebraic)
        if both:
            raise RoleConflict(f"states both differential and algebraic: {sorted(both)}",
                               module="dynfinder", op="VariableRoles")

    @property
    def states(self) -> tuple[str, ...]:
        return self.differential + self.algebraic


def dynamic_range(x: np.ndarray) -> float:
    """``(max - min) / std``; 0 for a constant signal."""
    sd = float(np.std(x))
    return float((np.max(x) - np.min(x)) / sd) if sd > 0 else 0.0


def assign_variable_roles(states: Sequence[str], relations: Sequence[AlgebraicRelation],
                          preference: Sequence[str] | None = None, data=None) -> VariableRoles:
    """Split states into differential and algebraic sets.

    Relations are visited in discovery order and each claims one state not
    yet algebraic.  A pivot that is a power of a single state claims that
    state.  Otherwise states listed in ``preference`` (wanted as
    differential) are avoided, and among the rest the one with the smallest
    dynamic range in ``data`` is claimed.  States outside every relation are
    differential.
    """
    states = tuple(states)
    preference = tuple(preference or ())
    unknown = [p for p in preference if p not in states]
    if unknown:
        raise ConfigError(f"preference list names unknown states {unknown}", module="dynfinder",
                          op="assign_variable_roles")
    in_rel = {s for r in relations for s in r.states}
    missing = in_rel - set(states)
    if missing:
        raise ModelError(f"relations reference unknown states {sorted(missing)}", module="dynfinder",
                         op="assign_variable_roles")

    def rng_of(s):
        if data is None:
            return 0.0
        return dynamic_range(np.asarray(data[s], dtype=float))

    algebraic: list[str] = []
    rationale: dict[str, str] = {}
    claims = []
    for rel in relations:
        cands = [s for s in rel.states if s not in algebraic]
        if not cands:
            claims.append(())
            continue
        pure = rel.pivot.pure_state
        if pure in cands and pure not in preference:
            pick, why = pure, "pivot_elimination"
        elif preference:
            free = [s for s in cands if s not in preference]
            if free:
                pick = min(free, key=lambda s: (rng_of(s), s))
            else:
                pick = max(cands, key=preference.index)
            why = "user_preference"
        else:
            pick, why = min(cands, key=lambda s: (rng_of(s), s)), "dynamic_range"
        algebraic.append(pick)
        rationale[pick] = why
        claims.append((pick,))
        for s in cands:
            if s != pick:
                rationale.setdefault(s, why)
    differential = tuple(s for s in states if s not in algebraic)
    for s in differential:
        if s not in in_rel:
            rationale[s] = "no_relation_membership"
    return VariableRoles(differential, tuple(s for s in states if s in algebraic),
                         {s: rationale[s] for s in states}, tuple(claims))


# ---------------------------------------------------------------------------
# equations and model
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OdeEquation:
    """``d^order(state)/dt^order = sum_j c_j theta_j``; empty ``coefficients`` means not found."""

    state: str
    coefficients: dict
    order: int = 1
    score: float = float("nan")

    @property
    def support(self) -> tuple[Term, ...]:
        return tuple(self.coefficients)

    @property
    def discovered(self) -> bool:
        return bool(self.coefficients)


@dataclass(frozen=True, eq=False)
class DiscoveredModel:
    states: tuple[str, ...]
    algebraic: tuple[AlgebraicRelation, ...]
    odes: dict
    roles: VariableRoles
    library: tuple[Term, ...] = ()
    trace: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    @property
    def fit_scores(self) -> dict:
        out = {f"g{k + 1}": r.score for k, r in enumerate(self.algebraic)}
        out.update({s: e.score for s, e in self.odes.items()})
        return out

    # serialisation ---------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "states": list(self.states),
            "roles": {
                "differential": list(self.roles.differential),
                "algebraic": list(self.roles.algebraic),
                "rationale": dict(self.roles.rationale),
                "claims": [list(c) for c in self.roles.claims],
            },
            "algebraic": [_relation_dict(r) for r in self.algebraic],
            "odes": {s: {
                "order": e.order,
                "terms": [t.encoding for t in e.coefficients],
                "coeffs": [fmt_num(c) for c in e.coefficients.values()],
                "score": fmt_num(e.score),
            } for s, e in self.odes.items()},
            "library": [t.encoding for t in self.library],
            "trace": list(self.trace),
            "diagnostics": _round_tree(self.diagnostics),
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: Mapping) -> "DiscoveredModel":
        try:
            roles = d["roles"]
            rels = tuple(_relation_from_dict(r) for r in d.get("algebraic", []))
            odes = {s: OdeEquation(s, {Term.parse(t): float(c) for t, c in zip(e["terms"], e["coeffs"])},
                                   int(e.get("order", 1)), _float(e.get("score")))
                    for s, e in d.get("odes", {}).items()}
            return cls(
                states=tuple(d["states"]),
                algebraic=rels,
                odes=odes,
                roles=VariableRoles(tuple(roles["differential"]), tuple(roles["algebraic"]),
                                    dict(roles.get("rationale", {})),
                                    tuple(tuple(c) for c in roles.get("claims", []))),
                library=tuple(Term.parse(t) for t in d.get("library", [])),
                trace=tuple(d.get("trace", [])),
                diagnostics=dict(d.get("diagnostics", {})),
            )
        except (KeyError, TypeError) as exc:
            raise ModelError(f"malformed model document: {exc}", module="dynfinder", op="parse_model") from None

    @classmethod
    def from_json(cls, text: str | bytes) -> "DiscoveredModel":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelError(f"model is not valid JSON: {exc}", module="dynfinder", op="parse_model") from None
        return cls.from_dict(d)

    def structurally_equal(self, other: "DiscoveredModel") -> bool:
        return self.to_json() == other.to_json()

    # text ------------------------------------------------------------------
    def equations(self) -> list[str]:
        lines = [f"0 = {format_relation(r)}" for r in self.algebraic]
        for s in self.roles.differential:
            e = self.odes.get(s)
            lhs = f"d({s})/dt" if e is None or e.order == 1 else f"d^{e.order}({s})/dt^{e.order}"
            rhs = format_expression(e.coefficients) if e is not None and e.discovered else "<not found>"
            lines.append(f"{lhs} = {rhs}")
        return lines


def _float(x) -> float:
    return float("nan") if x is None else float(x)


def _round_tree(x):
    if isinstance(x, float):
        return fmt_num(x)
    if isinstance(x, dict):
        return {k: _round_tree(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round_tree(v) for v in x]
    return x


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"not serialisable: {type(x)}")


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, 12 significant digits, NaN and inf as null."""
    def clean(v):
        if isinstance(v, (float, np.floating)):
            v = float(v)
            return fmt_num(v) if math.isfinite(v) else None
        if isinstance(v, dict):
            return {str(k): clean(u) for k, u in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(u) for u in v]
        if isinstance(v, np.ndarray):
            return [clean(u) for u in v.tolist()]
        if isinstance(v, np.integer):
            return int(v)
        return v
    return json.dumps(clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _relation_dict(r: AlgebraicRelation) -> dict:
    return {
        "terms": [t.encoding for t in r.coefficients],
        "coeffs": [fmt_num(c) for c in r.coefficients.values()],
        "pivot": r.pivot.encoding,
        "score": fmt_num(r.score),
        "iteration": r.iteration,
    }


def _relation_from_dict(d: Mapping) -> AlgebraicRelation:
    coeffs = {Term.parse(t): float(c) for t, c in zip(d["terms"], d["coeffs"])}
    return AlgebraicRelation(coeffs, Term.parse(d["pivot"]), _float(d.get("score")), int(d.get("iteration", 0)))


def _num(c: float) -> str:
    return f"{c:.12g}"


def format_expression(coeffs: Mapping[Term, float], lead: Term | None = None) -> str:
    """``c1*[A] + c2*[B]*[C] - c3`` with unit coefficients omitted."""
    terms = sorted(coeffs, key=lambda t: (t != lead, t.is_constant, -complexity_score(t), t.encoding))
    out = []
    for k, t in enumerate(terms):
        c = coeffs[t]
        mag = _num(abs(c))
        body = mag if t.is_constant else (t.encoding if mag == "1" else f"{mag}*{t.encoding}")
        if k == 0:
            out.append(("-" if c < 0 else "") + body)
        else:
            out.append(("- " if c < 0 else "+ ") + body)
    return " ".join(out) if out else "0"


def format_relation(rel: AlgebraicRelation) -> str:
    """Relation scaled so the pivot has coefficient 1, pivot first."""
    return format_expression(rel.scaled_to(rel.pivot), rel.pivot)


# ---------------------------------------------------------------------------
# ODE discovery
# ---------------------------------------------------------------------------

def _derivative_column(derivatives, state: str, order: int) -> np.ndarray:
    if isinstance(derivatives, DerivativeTable):
        if derivatives.order != order:
            raise ModelError(f"no order-{order} derivative for {state}", module="dynfinder",
                             op="discover_dynamics")
        return derivatives.column(state)
    try:
        src = derivatives[order]
    except (KeyError, IndexError, TypeError):
        raise ModelError(f"no order-{order} derivatives supplied", module="dynfinder",
                         op="discover_dynamics") from None
    return src.column(state) if isinstance(src, DerivativeTable) else np.asarray(src[state], dtype=float)


def _fit_ode(libmat: LibraryMatrix, y: np.ndarray, cfg: SparseFitConfig, cols: Sequence[int]):
    lib = libmat.library
    s_y = float(np.sqrt(np.mean(y ** 2)))
    if s_y == 0.0 or not cols:
        return {}, float("nan")
    X = libmat.values[:, cols]
    fit = cfg.fit(X, y / s_y)
    coeffs = {lib.terms[cols[k]]: float(fit.coefficients[k]) * s_y / libmat.column_scales[cols[k]]
              for k in fit.support}
    return coeffs, fit.r2


def discover_dynamics(refined: LibraryMatrix, derivatives, roles: VariableRoles,
                      cfg: SparseFitConfig | None = None, orders: Mapping[str, int] | None = None,
                      libraries: Mapping[str, CandidateLibrary] | None = None,
                      n_jobs: int = 1) -> dict:
    """Sparse fit of each differential state's derivative against the refined library.

    Parameters
    ----------
    derivatives : a :class:`DerivativeTable`, or a mapping ``order -> table``.
    orders : derivative order per state (default 1).
    libraries : optional per-state sub-library of ``refined.library``.

    Returns
    -------
    dict mapping state to :class:`OdeEquation`; an equation with no
    surviving term is returned with empty coefficients.
    """
    cfg = cfg or SparseFitConfig(solver="stlsq", threshold=0.05)
    orders = dict(orders or {})
    libraries = dict(libraries or {})
    usable = set(int(j) for j in refined.usable())

    def one(state):
        order = int(orders.get(state, 1))
        y = _derivative_column(derivatives, state, order)
        if state in libraries:
            cols = [refined.library.index(t) for t in libraries[state].terms]
        else:
            cols = list(range(len(refined.library)))
        cols = [j for j in cols if j in usable]
        coeffs, r2 = _fit_ode(refined, np.asarray(y, dtype=float), cfg, cols)
        return OdeEquation(state, coeffs, order, r2)

    states = list(roles.differential)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            eqs = list(pool.map(one, states))
    else:
        eqs = [one(s) for s in states]
    return {e.state: e for e in eqs}


# ---------------------------------------------------------------------------
# refit and assembly
# ---------------------------------------------------------------------------

def _ols_fixed(A: np.ndarray, y: np.ndarray):
    scale = np.sqrt(np.mean(A ** 2, axis=0))
    scale[scale == 0] = 1.0
    An = A / scale
    sol, _, rank, _ = np.linalg.lstsq(An, y, rcond=None)
    return sol / scale, rank < A.shape[1]


def refit_coefficients(model: DiscoveredModel, table, derivatives) -> DiscoveredModel:
    """Re-estimate every coefficient by OLS on the fixed supports.

    Relations keep their pivot coefficient and regress the pivot on the
    remaining support terms.  Rank-deficient supports fall back to the
    minimum-norm solution and are listed in ``diagnostics['rank_deficient_refit']``.
    """
    cols = {n: table.values[:, j] for j, n in enumerate(table.names)}
    n = table.n_samples
    flagged = []
    rels = []
    for k, rel in enumerate(model.algebraic):
        others = [t for t in rel.coefficients if t != rel.pivot]
        if not others:
            rels.append(rel)
            continue
        y = rel.pivot.evaluate(cols, n)
        A = np.column_stack([t.evaluate(cols, n) for t in others])
        sol, deficient = _ols_fixed(A, y)
        if deficient:
            flagged.append(f"g{k + 1}")
        cp = rel.coefficients[rel.pivot]
        coeffs = {rel.pivot: cp}
        coeffs.update({t: -cp * float(c) for t, c in zip(others, sol)})
        coeffs = {t: coeffs[t] for t in rel.coefficients}
        rels.append(rel.replace(coefficients=coeffs, score=_r2(y, A @ sol)))
    odes = {}
    for s, e in model.odes.items():
        if not e.discovered:
            odes[s] = e
            continue
        y = np.asarray(_derivative_column(derivatives, s, e.order), dtype=float)
        terms = list(e.coefficients)
        A = np.column_stack([t.evaluate(cols, n) for t in terms])
        sol, deficient = _ols_fixed(A, y)
        if deficient:
            flagged.append(s)
        odes[s] = OdeEquation(s, {t: float(c) for t, c in zip(terms, sol)}, e.order, _r2(y, A @ sol))
    diag = dict(model.diagnostics)
    diag["rank_deficient_refit"] = flagged
    return DiscoveredModel(model.states, tuple(rels), odes, model.roles, model.library, model.trace, diag)


def relation_residuals(relations: Sequence[AlgebraicRelation], table) -> list[float]:
    """RMS of each relation on ``table`` relative to the RMS of its largest term."""
    cols = {n: table.values[:, j] for j, n in enumerate(table.names)}
    n = table.n_samples
    out = []
    for rel in relations:
        parts = [c * t.evaluate(cols, n) for t, c in rel.coefficients.items()]
        big = max(float(np.sqrt(np.mean(p ** 2))) for p in parts)
        res = float(np.sqrt(np.mean(np.sum(parts, axis=0) ** 2)))
        out.append(res / big if big > 0 else 0.0)
    return out


def _ordered_states(roles: VariableRoles, table) -> tuple[str, ...]:
    if table is None:
        return roles.states
    inside = set(roles.states)
    ordered = [n for n in table.names if n in inside]
    return tuple(ordered + [s for s in roles.states if s not in set(ordered)])


def assemble_dae(relations: Sequence[AlgebraicRelation], odes: Mapping[str, OdeEquation],
                 roles: VariableRoles, library: Sequence[Term] = (), table=None,
                 trace: Sequence = (), states: Sequence[str] | None = None) -> DiscoveredModel:
    """Validate the pieces against ``roles`` and bundle them into a model.

    ``states`` lists every model variable, including measured inputs that
    carry no role; it defaults to the role states in table order.
    """
    relations = tuple(relations)
    if states is not None and not set(roles.states) <= set(states):
        raise ModelError("states must include every role state", module="dynfinder", op="assemble_dae")
    alg, dif = set(roles.algebraic), set(roles.differential)
    claims = roles.claims or tuple(tuple(s for s in r.states if s in alg)[:1] for r in relations)
    if len(claims) != len(relations):
        raise ModelError("roles do not match the relation count", module="dynfinder", op="assemble_dae")
    for k, (rel, claim) in enumerate(zip(relations, claims)):
        bad = [s for s in claim if s in dif]
        if bad:
            raise RoleConflict(f"relation g{k + 1} claims differential state(s) {bad}",
                               module="dynfinder", op="assemble_dae")
        if not claim:
            raise ModelError(f"relation g{k + 1} claims no algebraic variable", module="dynfinder",
                             op="assemble_dae")
        if not set(claim) <= set(rel.states):
            raise ModelError(f"relation g{k + 1} claims states outside its support", module="dynfinder",
                             op="assemble_dae")
    for s in roles.differential:
        if s not in odes:
            raise ModelError(f"differential state {s} has no ODE", module="dynfinder", op="assemble_dae")
    for s in odes:
        if s in alg:
            raise RoleConflict(f"algebraic state {s} was given an ODE", module="dynfinder", op="assemble_dae")
    lib = set(library)
    if lib:
        for s, e in odes.items():
            extra = [t.encoding for t in e.coefficients if t not in lib]
            if extra:
                raise ModelError(f"ODE for {s} uses terms outside the refined library: {extra}",
                                 module="dynfinder", op="assemble_dae")
    diagnostics = {}
    if table is not None and relations:
        diagnostics["relation_residuals"] = relation_residuals(relations, table)
    ordered = {s: odes[s] for s in roles.differential}
    states = tuple(states) if states is not None else _ordered_states(roles, table)
    return DiscoveredModel(states, relations, ordered,
                           VariableRoles(roles.differential, roles.algebraic, roles.rationale, tuple(claims)),
                           tuple(library), tuple(trace), diagnostics)
