"""Symbolic candidate terms and libraries.

A :class:`Term` is a product of state powers and trigonometric atoms, e.g.
``[A]*[E1]`` or ``[Pe_1]*sin(phi_1-phi_2)``.  Terms are immutable and kept in
a canonical form (states sorted by name, atoms sorted by ``(kind, operand)``)
so two terms are equal exactly when their encodings are equal.

Libraries are ordered tuples of distinct terms.  Refinement removes a term
together with all of its multiples, so successive libraries form a
decreasing chain.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import LibraryError, MissingState, NonFiniteEvaluation

NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*\Z")
_FACTOR_RE = re.compile(r"\[([A-Za-z_][A-Za-z0-9_.]*)\](?:\^(\d+))?\Z")
_ATOM_RE = re.compile(r"(sin|cos)\(([A-Za-z_][A-Za-z0-9_.]*)(?:-([A-Za-z_][A-Za-z0-9_.]*))?\)\Z")

Atom = tuple[str, tuple[str, ...]]


def _check_name(name: str) -> str:
    if not NAME_RE.match(name):
        raise LibraryError(f"invalid state name {name!r}", module="termlib", op="Term")
    return name


@dataclass(frozen=True, order=False)
class Term:
    powers: tuple[tuple[str, int], ...] = ()
    atoms: tuple[Atom, ...] = ()

    def __post_init__(self):
        merged: dict[str, int] = {}
        for name, e in self.powers:
            e = int(e)
            if e < 0:
                raise LibraryError("exponents must be positive", module="termlib", op="Term")
            if e:
                merged[_check_name(name)] = merged.get(name, 0) + e
        atoms = []
        for kind, operand in self.atoms:
            if kind not in ("sin", "cos"):
                raise LibraryError(f"unknown atom kind {kind!r}", module="termlib", op="Term")
            operand = tuple(operand)
            if len(operand) not in (1, 2):
                raise LibraryError("atom operand must name one or two states", module="termlib", op="Term")
            atoms.append((kind, tuple(_check_name(o) for o in operand)))
        object.__setattr__(self, "powers", tuple(sorted(merged.items())))
        object.__setattr__(self, "atoms", tuple(sorted(atoms)))

    # constructors ---------------------------------------------------------
    @classmethod
    def constant(cls) -> "Term":
        return cls()

    @classmethod
    def state(cls, name: str, power: int = 1) -> "Term":
        return cls(((name, power),))

    @classmethod
    def trig(cls, kind: str, a: str, b: str | None = None) -> "Term":
        return cls((), ((kind, (a,) if b is None else (a, b)),))

    @classmethod
    def parse(cls, text: str) -> "Term":
        """Inverse of :attr:`encoding`."""
        text = text.strip()
        if text == "1":
            return cls()
        powers, atoms = [], []
        for tok in text.split("*"):
            tok = tok.strip()
            m = _FACTOR_RE.match(tok)
            if m:
                powers.append((m.group(1), int(m.group(2) or 1)))
                continue
            m = _ATOM_RE.match(tok)
            if m:
                operand = (m.group(2),) if m.group(3) is None else (m.group(2), m.group(3))
                atoms.append((m.group(1), operand))
                continue
            raise LibraryError(f"cannot parse term factor {tok!r}", module="termlib", op="Term.parse")
        return cls(tuple(powers), tuple(atoms))

    # algebra ---------------------------------------------------------------
    def __mul__(self, other: "Term") -> "Term":
        return Term(self.powers + other.powers, self.atoms + other.atoms)

    @property
    def is_constant(self) -> bool:
        return not self.powers and not self.atoms

    @property
    def degree(self) -> int:
        return sum(e for _, e in self.powers)

    @property
    def states(self) -> tuple[str, ...]:
        """All state names the term depends on, sorted."""
        names = {n for n, _ in self.powers}
        for _, operand in self.atoms:
            names.update(operand)
        return tuple(sorted(names))

    def power(self, name: str) -> int:
        return dict(self.powers).get(name, 0)

    def divides(self, other: "Term") -> bool:
        mine = dict(other.powers)
        if any(mine.get(n, 0) < e for n, e in self.powers):
            return False
        return not (Counter(self.atoms) - Counter(other.atoms))

    def __truediv__(self, other: "Term") -> "Term":
        if not other.divides(self):
            raise LibraryError(f"{other} does not divide {self}", module="termlib", op="Term.divide")
        mine = dict(self.powers)
        for n, e in other.powers:
            mine[n] -= e
        atoms = Counter(self.atoms) - Counter(other.atoms)
        return Term(tuple(mine.items()), tuple(atoms.elements()))

    @property
    def pure_state(self) -> str | None:
        """Name of the state if the term is a power of a single state."""
        if len(self.powers) == 1 and not self.atoms:
            return self.powers[0][0]
        return None

    # encoding --------------------------------------------------------------
    @property
    def encoding(self) -> str:
        if self.is_constant:
            return "1"
        parts = [f"[{n}]" + (f"^{e}" if e > 1 else "") for n, e in self.powers]
        parts += [f"{k}({'-'.join(op)})" for k, op in self.atoms]
        return "*".join(parts)

    def __str__(self) -> str:
        return self.encoding

    def __repr__(self) -> str:
        return f"Term({self.encoding!r})"

    def evaluate(self, columns: Mapping[str, np.ndarray], n: int | None = None) -> np.ndarray:
        if n is None:
            n = len(next(iter(columns.values())))
        out = np.ones(n)
        for name, e in self.powers:
            out = out * columns[name] ** e
        for kind, operand in self.atoms:
            arg = columns[operand[0]] if len(operand) == 1 else columns[operand[0]] - columns[operand[1]]
            out = out * (np.sin(arg) if kind == "sin" else np.cos(arg))
        return out


def complexity_score(term: Term) -> int:
    """Total monomial degree plus one per trigonometric atom."""
    return term.degree + len(term.atoms)


def term_gcd(terms: Iterable[Term]) -> Term:
    terms = list(terms)
    if not terms:
        return Term()
    powers = dict(terms[0].powers)
    atoms = Counter(terms[0].atoms)
    for t in terms[1:]:
        other = dict(t.powers)
        powers = {n: min(e, other.get(n, 0)) for n, e in powers.items()}
        atoms &= Counter(t.atoms)
    return Term(tuple(powers.items()), tuple(atoms.elements()))


# ---------------------------------------------------------------------------
# libraries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CandidateLibrary:
    terms: tuple[Term, ...]
    generation: int = 0

    def __post_init__(self):
        terms = tuple(self.terms)
        if len(set(terms)) != len(terms):
            raise LibraryError("duplicate terms in library", module="termlib", op="CandidateLibrary")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(terms)})

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def __contains__(self, term: Term) -> bool:
        return term in self._index

    def index(self, term: Term) -> int:
        try:
            return self._index[term]
        except KeyError:
            raise LibraryError(f"term {term} not in library", module="termlib", op="index") from None

    @property
    def states(self) -> tuple[str, ...]:
        names: set[str] = set()
        for t in self.terms:
            names.update(t.states)
        return tuple(sorted(names))

    def encodings(self) -> list[str]:
        return [t.encoding for t in self.terms]


def _check_states(states: Sequence[str], op: str) -> tuple[str, ...]:
    states = tuple(states)
    if not states:
        raise LibraryError("at least one state is required", module="termlib", op=op)
    if len(set(states)) != len(states):
        raise LibraryError(f"duplicate state names in {states}", module="termlib", op=op)
    for s in states:
        _check_name(s)
    return states


def build_polynomial_library(states: Sequence[str], max_degree: int,
                             include_constant: bool = True) -> CandidateLibrary:
    """All monomials of total degree 1..max_degree, optionally with ``1``.

    Ordered by total degree, then lexicographically in the order the states
    were given, e.g. ``1, A, B, A^2, A*B, B^2``.
    """
    states = _check_states(states, "build_polynomial_library")
    if int(max_degree) != max_degree or max_degree < 1:
        raise LibraryError("max_degree must be an integer >= 1", module="termlib", op="build_polynomial_library")
    terms = [Term()] if include_constant else []
    for deg in range(1, int(max_degree) + 1):
        for combo in combinations_with_replacement(states, deg):
            terms.append(Term(tuple((s, 1) for s in combo)))
    return CandidateLibrary(tuple(terms))


def grid_state_names(n_nodes: int) -> tuple[list[str], list[str], list[str]]:
    """Column names for electrical power, phase and frequency of each node."""
    nodes = range(1, n_nodes + 1)
    return [f"Pe_{i}" for i in nodes], [f"phi_{i}" for i in nodes], [f"dphi_{i}" for i in nodes]


def build_grid_library(n_nodes: int, restrict_to_node: int | None = None) -> CandidateLibrary:
    """Power-grid library of ``Pe_i``, ``phi_i``, ``dphi_i`` and sine couplings.

    Unrestricted: ``sin(phi_i-phi_j)`` for all ``i <= j`` (``3N + N(N+1)/2``
    terms; the ``i == j`` columns evaluate to zero and are kept only for the
    count).  Restricted to node ``i`` (1-based): ``sin(phi_i-phi_j)`` for
    ``j != i`` (``4N - 1`` terms).
    """
    if int(n_nodes) != n_nodes or n_nodes < 2:
        raise LibraryError("grid library needs at least 2 nodes", module="termlib", op="build_grid_library")
    pe, phi, dphi = grid_state_names(n_nodes)
    terms = [Term.state(n) for n in pe + phi + dphi]
    if restrict_to_node is None:
        for i in range(n_nodes):
            for j in range(i, n_nodes):
                terms.append(Term.trig("sin", phi[i], phi[j]))
    else:
        if not 1 <= restrict_to_node <= n_nodes:
            raise LibraryError(f"node {restrict_to_node} out of range 1..{n_nodes}",
                               module="termlib", op="build_grid_library")
        i = restrict_to_node - 1
        for j in range(n_nodes):
            if j != i:
                terms.append(Term.trig("sin", phi[i], phi[j]))
    return CandidateLibrary(tuple(terms))


def multiples_of(term: Term, lib: CandidateLibrary) -> tuple[Term, ...]:
    """Library members divisible by ``term`` (including ``term``), in library order."""
    if term not in lib:
        raise LibraryError(f"term {term} not in library", module="termlib", op="multiples_of")
    return tuple(u for u in lib.terms if term.divides(u))


def remove_terms(lib: CandidateLibrary, removal: Iterable[Term]) -> CandidateLibrary:
    removal = set(removal)
    missing = [t for t in removal if t not in lib]
    if missing:
        raise LibraryError(f"terms not in library: {[str(t) for t in missing]}",
                           module="termlib", op="remove_terms")
    return CandidateLibrary(tuple(t for t in lib.terms if t not in removal), lib.generation + 1)


# ---------------------------------------------------------------------------
# numeric evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LibraryMatrix:
    """Library evaluated on a table; ``values[:, j] = theta_j(x) / column_scales[j]``."""

    library: CandidateLibrary
    values: np.ndarray
    column_scales: np.ndarray
    degenerate: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.degenerate is None:
            object.__setattr__(self, "degenerate", np.zeros(len(self.library), dtype=bool))

    @property
    def raw(self) -> np.ndarray:
        return self.values * self.column_scales

    def column(self, term: Term) -> np.ndarray:
        return self.values[:, self.library.index(term)]

    def subset(self, lib: CandidateLibrary) -> "LibraryMatrix":
        """Columns of a sub-library without re-evaluating."""
        idx = [self.library.index(t) for t in lib.terms]
        return LibraryMatrix(lib, self.values[:, idx], self.column_scales[idx], self.degenerate[idx])

    def usable(self) -> np.ndarray:
        return np.flatnonzero(~self.degenerate)


def evaluate_library(lib: CandidateLibrary, table, normalize: bool = True) -> LibraryMatrix:
    """Evaluate every term on the rows of ``table``.

    With ``normalize`` each column is divided by its root-mean-square.
    Columns that are identically zero keep scale 1 and are flagged
    degenerate.
    """
    missing = [s for s in lib.states if s not in table.names]
    if missing:
        raise MissingState(f"library references states missing from table: {missing}",
                           module="termlib", op="evaluate_library")
    cols = {n: table.values[:, j] for j, n in enumerate(table.names)}
    n = table.n_samples
    raw = np.empty((n, len(lib)))
    with np.errstate(over="ignore", invalid="ignore"):
        for j, t in enumerate(lib.terms):
            raw[:, j] = t.evaluate(cols, n)
    if not np.all(np.isfinite(raw)):
        bad = [lib.terms[j].encoding for j in np.flatnonzero(~np.all(np.isfinite(raw), axis=0))]
        raise NonFiniteEvaluation(f"non-finite values in columns {bad}", module="termlib", op="evaluate_library")
    rms = np.sqrt(np.mean(raw ** 2, axis=0))
    degenerate = rms == 0.0
    scales = np.where(degenerate | (not normalize), 1.0, rms)
    return LibraryMatrix(lib, raw / scales, scales, degenerate)


# ---------------------------------------------------------------------------
# algebraic relations
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AlgebraicRelation:
    """``sum_j c_j * theta_j(x) = 0`` with coefficients in raw (unnormalised) units.

    ``pivot`` is the term that was regressed on; its coefficient is -1 when
    the relation comes straight out of a fit.
    """

    coefficients: dict
    pivot: Term
    score: float = float("nan")
    iteration: int = 0

    def __post_init__(self):
        coeffs = {t: float(c) for t, c in self.coefficients.items() if c != 0}
        object.__setattr__(self, "coefficients", coeffs)
        if len(coeffs) < 2:
            raise LibraryError("a relation needs at least two nonzero terms", module="termlib",
                               op="AlgebraicRelation")
        if self.pivot not in coeffs:
            raise LibraryError("pivot must carry a nonzero coefficient", module="termlib",
                               op="AlgebraicRelation")

    @property
    def support(self) -> tuple[Term, ...]:
        return tuple(self.coefficients)

    @property
    def states(self) -> tuple[str, ...]:
        names: set[str] = set()
        for t in self.coefficients:
            names.update(t.states)
        return tuple(sorted(names))

    def replace(self, **kw) -> "AlgebraicRelation":
        data = dict(coefficients=self.coefficients, pivot=self.pivot, score=self.score,
                    iteration=self.iteration)
        data.update(kw)
        return AlgebraicRelation(**data)

    def evaluate(self, columns: Mapping[str, np.ndarray], n: int | None = None) -> np.ndarray:
        return sum(c * t.evaluate(columns, n) for t, c in self.coefficients.items())

    def scaled_to(self, lead: Term) -> dict:
        """Coefficients rescaled so ``lead`` has coefficient 1."""
        c0 = self.coefficients[lead]
        return {t: c / c0 for t, c in self.coefficients.items()}


def reduce_relation(rel: AlgebraicRelation, universe: CandidateLibrary | None = None) -> AlgebraicRelation:
    """Divide out the greatest common factor of all support terms.

    Coefficients are unchanged.  When ``universe`` is given and a reduced
    non-constant term falls outside it, the relation is returned as is.
    """
    g = term_gcd(rel.coefficients)
    if g.is_constant:
        return rel
    coeffs = {t / g: c for t, c in rel.coefficients.items()}
    if universe is not None and any(not t.is_constant and t not in universe for t in coeffs):
        return rel
    return rel.replace(coefficients=coeffs, pivot=rel.pivot / g)
