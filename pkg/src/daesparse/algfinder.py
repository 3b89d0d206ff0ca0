"""Iterative discovery of algebraic relations by library refinement.

Each iteration fits every library column against the others, keeps the
best-scoring relation, removes its highest-complexity term together with all
multiples of that term, and checks whether the library became better
conditioned.  Stopping is either by a known relation count ``K`` or when the
log condition number stops improving.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, LibraryError, NoRelationFound
from .sparsereg import FitResult, SparseFitConfig, selection_score
from .termlib import (
    AlgebraicRelation,
    CandidateLibrary,
    LibraryMatrix,
    Term,
    build_grid_library,
    complexity_score,
    evaluate_library,
    grid_state_names,
    multiples_of,
    reduce_relation,
    remove_terms,
)

STOP_REASONS = ("reached_K", "condition_stagnation", "no_fit_above_score_floor")


# ---------------------------------------------------------------------------
# SVD diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SvdDiagnostics:
    """Spectrum summary of a normalised library matrix.

    ``log_condition`` is ``ln(s_1 / s_r) + nullity * ln(1 / floor)`` where
    ``s_r`` is the smallest singular value above the rank cutoff.  Each
    numerically zero singular value therefore costs a fixed penalty, which
    keeps the value finite and makes removing one dependency visible.
    """

    singular_values: np.ndarray
    variance_ratios: np.ndarray
    numeric_rank: int
    nullity_estimate: int
    log_condition: float

    def as_dict(self) -> dict:
        return {
            "singular_values": [float(s) for s in self.singular_values],
            "variance_ratios": [float(v) for v in self.variance_ratios],
            "numeric_rank": self.numeric_rank,
            "nullity_estimate": self.nullity_estimate,
            "log_condition": self.log_condition,
        }


def svd_diagnostics(libmat: LibraryMatrix | np.ndarray, rank_tol: float = 1e-10,
                    floor: float = 1e-14) -> SvdDiagnostics:
    X = libmat.values if isinstance(libmat, LibraryMatrix) else np.asarray(libmat, dtype=float)
    if X.ndim != 2 or X.size == 0:
        raise LibraryError("svd_diagnostics needs a nonempty matrix", module="algfinder", op="svd_diagnostics")
    J = X.shape[1]
    s = np.linalg.svd(X, compute_uv=False)
    total = float(np.sum(s ** 2))
    eta = s ** 2 / total if total > 0 else np.full(len(s), 1.0 / len(s))
    rank = int(np.sum(s > rank_tol * s[0])) if s[0] > 0 else 0
    nullity = J - rank
    penalty = nullity * math.log(1.0 / floor)
    log_cond = (math.log(s[0] / s[rank - 1]) if rank else 0.0) + penalty
    return SvdDiagnostics(s, eta, rank, nullity, float(log_cond))


# ---------------------------------------------------------------------------
# candidate fits
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CandidateFit:
    """Fit of library column ``index`` against the other usable columns."""

    index: int
    term: Term
    fit: FitResult
    score: float
    regressors: tuple[int, ...]
    relation: AlgebraicRelation | None


def _relation_from_fit(libmat: LibraryMatrix, l: int, regressors: Sequence[int],
                       fit: FitResult, score: float) -> AlgebraicRelation | None:
    if not fit.support:
        return None
    lib, scales = libmat.library, libmat.column_scales
    coeffs = {lib.terms[l]: -1.0}
    for k in fit.support:
        j = regressors[k]
        coeffs[lib.terms[j]] = float(fit.coefficients[k]) * scales[l] / scales[j]
    return AlgebraicRelation(coeffs, pivot=lib.terms[l], score=score)


def _fit_one(libmat: LibraryMatrix, l: int, regressors: tuple[int, ...], cfg: SparseFitConfig,
             score_fn: str) -> CandidateFit:
    X = libmat.values[:, regressors]
    y = libmat.values[:, l]
    fit = cfg.fit(X, y)
    if fit.support:
        score = selection_score(score_fn, y, X @ fit.coefficients, len(fit.support))
        if not np.isfinite(score):
            score = -math.inf
    else:
        score = -math.inf
    rel = _relation_from_fit(libmat, l, regressors, fit, score)
    return CandidateFit(l, libmat.library.terms[l], fit, score, regressors, rel)


def fit_all_candidates(libmat: LibraryMatrix, cfg: SparseFitConfig, score_fn: str = "r2",
                       n_jobs: int = 1, targets: Sequence[int] | None = None,
                       regressor_filter=None) -> list[CandidateFit]:
    """Fit each usable column against all other usable columns.

    Parameters
    ----------
    targets : optional subset of column indices to use as fit targets.
    regressor_filter : optional ``f(l, j) -> bool`` excluding regressor ``j``
        from the fit of column ``l``.
    n_jobs : thread count; results are ordered by column index either way.
    """
    usable = [int(j) for j in libmat.usable()]
    if len(usable) < 2:
        raise LibraryError("need at least two non-degenerate library columns",
                           module="algfinder", op="fit_all_candidates")
    targets = usable if targets is None else [int(l) for l in targets if l in set(usable)]
    jobs = []
    for l in targets:
        regs = tuple(j for j in usable if j != l and (regressor_filter is None or regressor_filter(l, j)))
        if regs:
            jobs.append((l, regs))

    def run(job):
        return _fit_one(libmat, job[0], job[1], cfg, score_fn)

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            out = list(pool.map(run, jobs))
    else:
        out = [run(j) for j in jobs]
    return sorted(out, key=lambda c: c.index)


def _max_complexity(rel: AlgebraicRelation) -> int:
    return max(complexity_score(t) for t in rel.coefficients if not t.is_constant)


def select_best_relation(fits: Sequence[CandidateFit], tie_tol: float = 1e-9,
                         universe: CandidateLibrary | None = None) -> tuple[int, AlgebraicRelation]:
    """Highest-scoring candidate; near-ties resolved toward simpler relations.

    Scores within ``tie_tol`` of the best count as tied.  Ties go to the
    relation whose reduced form has (1) the lowest maximum term complexity,
    (2) the smallest support, (3) the lexicographically smallest target
    encoding.
    """
    valid = [c for c in fits if c.relation is not None and np.isfinite(c.score)]
    if not valid:
        raise NoRelationFound("no candidate produced a relation", module="algfinder",
                              op="select_best_relation")
    best = max(c.score for c in valid)
    tied = [c for c in valid if c.score >= best - tie_tol]

    def key(c: CandidateFit):
        red = reduce_relation(c.relation, universe)
        if all(t.is_constant for t in red.coefficients):
            cx = 0
        else:
            cx = _max_complexity(red)
        return (cx, len(red.coefficients), c.term.encoding)

    choice = min(tied, key=key)
    return choice.index, choice.relation


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RefinementStep:
    iteration: int
    relation: AlgebraicRelation
    removed_pivot: Term
    removed_set: tuple[Term, ...]
    score: float
    diagnostics_before: SvdDiagnostics | None = None
    diagnostics_after: SvdDiagnostics | None = None
    library_after: CandidateLibrary | None = None

    @property
    def improvement(self) -> float:
        if self.diagnostics_before is None or self.diagnostics_after is None:
            return float("nan")
        return self.diagnostics_before.log_condition - self.diagnostics_after.log_condition


def choose_pivot(relation: AlgebraicRelation, tiebreak="lex",
                 rng: np.random.Generator | None = None) -> Term:
    """Highest-complexity non-constant term of ``relation``.

    ``tiebreak`` resolves equal complexity: ``"lex"`` takes the
    lexicographically largest encoding, ``"random"`` draws with ``rng``, and
    a sequence of terms (or encodings) takes the first listed candidate,
    falling back to ``"lex"``.
    """
    cands = [t for t in relation.coefficients if not t.is_constant]
    if not cands:
        raise LibraryError("relation has no non-constant term", module="algfinder", op="refine_library")
    top = max(complexity_score(t) for t in cands)
    tied = sorted((t for t in cands if complexity_score(t) == top), key=lambda t: t.encoding)
    if len(tied) == 1:
        return tied[0]
    if isinstance(tiebreak, str):
        if tiebreak == "lex":
            return tied[-1]
        if tiebreak == "random":
            rng = rng if rng is not None else np.random.default_rng(0)
            return tied[int(rng.integers(len(tied)))]
        raise ConfigError(f"unknown tiebreak policy {tiebreak!r}", module="algfinder", op="refine_library")
    for pref in tiebreak:
        t = Term.parse(pref) if isinstance(pref, str) else pref
        if t in tied:
            return t
    return tied[-1]


def refine_library(lib: CandidateLibrary, relation: AlgebraicRelation, tiebreak="lex",
                   rng: np.random.Generator | None = None, iteration: int = 0) -> RefinementStep:
    """Reduce ``relation``, pick its pivot and drop the pivot's multiples from ``lib``."""
    rel = reduce_relation(relation, lib)
    missing = [t for t in rel.coefficients if not t.is_constant and t not in lib]
    if missing:
        raise LibraryError(f"relation terms not in library: {[str(t) for t in missing]}",
                           module="algfinder", op="refine_library")
    pivot = choose_pivot(rel, tiebreak, rng)
    rel = rel.replace(pivot=pivot, iteration=iteration)
    removed = multiples_of(pivot, lib)
    return RefinementStep(iteration, rel, pivot, removed, rel.score, library_after=remove_terms(lib, removed))


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlgebraicConfig:
    """Settings of :func:`run_algebraic_finder`.

    ``eps`` is the minimum log-condition improvement for accepting a step
    beyond the first ``K``; a sequence is indexed by iteration (1-based) and
    its last entry reused.
    """

    K: int | None = None
    eps: float | tuple[float, ...] = 2.0
    score_floor: float = 0.5
    sparse: SparseFitConfig = field(default_factory=SparseFitConfig)
    score_fn: str = "r2"
    tiebreak: object = "lex"
    seed: int = 0
    rank_tol: float = 1e-10
    cond_floor: float = 1e-14
    tie_tol: float = 1e-9
    max_iter: int = 100
    n_jobs: int = 1

    def __post_init__(self):
        if self.K is not None and self.K < 0:
            raise ConfigError("K must be >= 0", module="algfinder", op="AlgebraicConfig")
        eps = self.eps if isinstance(self.eps, (tuple, list)) else (self.eps,)
        if not eps or any(e < 0 for e in eps):
            raise ConfigError("eps must be non-negative", module="algfinder", op="AlgebraicConfig")
        object.__setattr__(self, "eps", tuple(float(e) for e in eps) if len(eps) > 1 else float(eps[0]))
        if self.score_fn not in ("r2", "aic", "bic"):
            raise ConfigError(f"unknown score function {self.score_fn!r}", module="algfinder",
                              op="AlgebraicConfig")

    def eps_at(self, k: int) -> float:
        if isinstance(self.eps, tuple):
            return self.eps[min(k, len(self.eps)) - 1]
        return self.eps


@dataclass(frozen=True, eq=False)
class AlgebraicResult:
    relations: tuple[AlgebraicRelation, ...]
    refined_library: CandidateLibrary
    trace: tuple[RefinementStep, ...]
    stop_reason: str
    initial_library: CandidateLibrary | None = None
    initial_diagnostics: SvdDiagnostics | None = None
    rejected: RefinementStep | None = None
    shortfall: bool = False


def _search_step(libmat: LibraryMatrix, cfg: AlgebraicConfig, k: int, rng, targets=None,
                 regressor_filter=None) -> RefinementStep | None:
    fits = fit_all_candidates(libmat, cfg.sparse, cfg.score_fn, cfg.n_jobs, targets, regressor_filter)
    try:
        _, rel = select_best_relation(fits, cfg.tie_tol, libmat.library)
    except NoRelationFound:
        return None
    if cfg.score_fn == "r2" and rel.score < cfg.score_floor:
        return None
    return refine_library(libmat.library, rel, cfg.tiebreak, rng, iteration=k)


def run_algebraic_finder(lib0: CandidateLibrary, table, cfg: AlgebraicConfig | None = None,
                         libmat0: LibraryMatrix | None = None) -> AlgebraicResult:
    """Discover algebraic relations by repeated fit, select, refine.

    The first ``K`` steps (when ``K`` is given) are accepted unconditionally.
    Every later step must lower the log condition number by more than
    ``eps``; the first one that does not is rolled back and ends the search.
    """
    cfg = cfg or AlgebraicConfig()
    rng = np.random.default_rng(cfg.seed)
    full = libmat0 if libmat0 is not None else evaluate_library(lib0, table)
    lib = lib0
    diag = svd_diagnostics(full, cfg.rank_tol, cfg.cond_floor)
    diag0 = diag
    steps: list[RefinementStep] = []
    rejected = None
    stop = "no_fit_above_score_floor"
    for k in range(1, cfg.max_iter + 1):
        mandatory = cfg.K is not None and k <= cfg.K
        if not mandatory and cfg.K is not None and math.isinf(cfg.eps_at(k)):
            stop = "reached_K"
            break
        libmat = full.subset(lib)
        if len(libmat.usable()) < 2:
            break
        step = _search_step(libmat, cfg, k, rng)
        if step is None:
            break
        after = svd_diagnostics(full.subset(step.library_after), cfg.rank_tol, cfg.cond_floor)
        step = replace(step, diagnostics_before=diag, diagnostics_after=after)
        if not mandatory and not step.improvement > cfg.eps_at(k):
            rejected = step
            stop = "condition_stagnation"
            break
        steps.append(step)
        lib, diag = step.library_after, after
    shortfall = cfg.K is not None and len(steps) < cfg.K
    return AlgebraicResult(
        relations=tuple(s.relation for s in steps),
        refined_library=lib,
        trace=tuple(steps),
        stop_reason=stop,
        initial_library=lib0,
        initial_diagnostics=diag0,
        rejected=rejected,
        shortfall=shortfall,
    )


# ---------------------------------------------------------------------------
# power-grid variant: one coupling-restricted fit per node
# ---------------------------------------------------------------------------

def run_grid_algebraic_finder(n_nodes: int, table, cfg: AlgebraicConfig | None = None,
                              regressors: str = "coupling") -> AlgebraicResult:
    """Power-balance discovery with a node-restricted library per node.

    For node ``i`` the electrical power ``Pe_i`` is regressed on the
    restricted library of that node and ``Pe_i`` becomes the pivot.
    ``regressors`` selects the columns used:

    ``"coupling"``
        only the ``sin(phi_i-phi_j)`` terms.  Other nodes' ``Pe_j`` explain
        ``Pe_i`` exactly through the network-wide balance, and a load's own
        frequency explains it through the load equation, so both compete
        with the power-flow relation once noise is present.
    ``"all"``
        every other column of the restricted library.
    """
    if regressors not in ("coupling", "all"):
        raise ConfigError(f"unknown regressor set {regressors!r}", module="algfinder",
                          op="run_grid_algebraic_finder")
    cfg = cfg or AlgebraicConfig(K=1, sparse=SparseFitConfig(solver="stols", threshold=0.1))
    pe, _, _ = grid_state_names(n_nodes)
    full_lib = build_grid_library(n_nodes)
    steps: list[RefinementStep] = []
    removed: set[Term] = set()
    for i in range(1, n_nodes + 1):
        lib = build_grid_library(n_nodes, restrict_to_node=i)
        libmat = evaluate_library(lib, table)
        pivot = Term.state(pe[i - 1])
        target = lib.index(pivot)
        if regressors == "coupling":
            keep = {j for j, t in enumerate(lib.terms) if t.atoms}
            filt = lambda l, j: j in keep
        else:
            filt = None
        fits = fit_all_candidates(libmat, cfg.sparse, cfg.score_fn, 1, [target], filt)
        try:
            _, rel = select_best_relation(fits, cfg.tie_tol)
        except NoRelationFound:
            continue
        if cfg.score_fn == "r2" and rel.score < cfg.score_floor:
            continue
        rel = rel.replace(pivot=pivot, iteration=len(steps) + 1)
        steps.append(RefinementStep(len(steps) + 1, rel, pivot, (pivot,), rel.score))
        removed.add(pivot)
    refined = CandidateLibrary(tuple(t for t in full_lib.terms if t not in removed),
                               full_lib.generation + len(steps))
    return AlgebraicResult(
        relations=tuple(s.relation for s in steps),
        refined_library=refined,
        trace=tuple(steps),
        stop_reason="reached_K",
        initial_library=full_lib,
        shortfall=len(steps) < n_nodes,
    )
