"""Configuration-driven end-to-end discovery.

A run loads or simulates a table, discovers algebraic relations, assigns
variable roles, fits ODEs on the refined library and writes the model,
the refinement trace, the equations and (given a reference model) recovery
metrics.
"""

from __future__ import annotations

import copy
import dataclasses
import itertools
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import benchgen
from .algfinder import (
    AlgebraicConfig,
    AlgebraicResult,
    RefinementStep,
    run_algebraic_finder,
    run_grid_algebraic_finder,
)
from .dynfinder import (
    DiscoveredModel,
    OdeEquation,
    assemble_dae,
    assign_variable_roles,
    discover_dynamics,
    dumps,
    format_relation,
    refit_coefficients,
)
from .errors import ConfigError, DaeError, MissingState
from .sparsereg import SparseFitConfig
from .termlib import (
    CandidateLibrary,
    Term,
    build_polynomial_library,
    evaluate_library,
    grid_state_names,
)
from .timeseries import (
    estimate_derivative,
    inject_noise,
    inject_snr_noise,
    load_table,
    segment_step,
    smooth_table,
    write_table,
)

_SOLVER = {
    "solver": {"enum": ["lasso_stlsq", "stlsq", "stols", "ols"]},
    "alpha": {"type": "number", "minimum": 0},
    "threshold": {"type": "number", "minimum": 0},
    "max_iter": {"type": "integer", "minimum": 1},
    "tol": {"type": "number", "exclusiveMinimum": 0},
    "lasso_max_iter": {"type": "integer", "minimum": 1},
}
_EPS = {"oneOf": [{"type": "number", "minimum": 0}, {"const": "inf"}, {"type": "null"},
                  {"type": "array", "minItems": 1,
                   "items": {"oneOf": [{"type": "number", "minimum": 0}, {"const": "inf"}]}}]}
_SG = {"type": "object", "additionalProperties": False, "required": ["window", "polyorder"],
       "properties": {"window": {"type": "integer", "minimum": 3},
                      "polyorder": {"type": "integer", "minimum": 0}}}

SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "daesparse discovery configuration",
    "type": "object",
    "additionalProperties": False,
    "oneOf": [{"required": ["input"], "not": {"required": ["generator"]}},
              {"required": ["generator"], "not": {"required": ["input"]}}],
    "properties": {
        "input": {"type": "string", "description": "CSV file with columns t[,segment],states..."},
        "generator": {
            "type": "object", "additionalProperties": False, "required": ["system"],
            "properties": {
                "system": {"enum": ["crn1", "crn2", "grid", "single", "double"]},
                "spec": {"type": "object"},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "samples": {"type": "integer", "minimum": 10,
                            "description": "per initial condition (crn, pendulum) or in total (grid)"},
                "noise_pct": {"type": "number", "minimum": 0,
                              "description": "fraction of each column's std (0.05 means 5 %)"},
                "snr_db": {"type": "number"},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "truth": {"type": "string", "description": "reference model JSON; generators supply their own"},
        "library": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["polynomial", "grid"]},
                "degree": {"type": "integer", "minimum": 1},
                "include_constant": {"type": "boolean"},
                "states": {"type": "array", "items": {"type": "string"}, "minItems": 1, "uniqueItems": True},
                "n_nodes": {"type": "integer", "minimum": 2},
                "generators": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "regressors": {"enum": ["coupling", "all"]},
            },
        },
        "smoothing": {"oneOf": [{"type": "null"}, _SG]},
        "derivatives": {
            "type": "object", "additionalProperties": False,
            "properties": {"window": {"type": "integer", "minimum": 3},
                           "polyorder": {"type": "integer", "minimum": 0},
                           "source": {"enum": ["raw", "smoothed"]}},
        },
        "algebraic": {
            "type": "object", "additionalProperties": False,
            "properties": dict(_SOLVER, **{
                "K": {"type": ["integer", "null"], "minimum": 0},
                "eps": _EPS,
                "score_floor": {"type": "number"},
                "score": {"enum": ["r2", "aic", "bic"]},
                "tiebreak": {"oneOf": [{"enum": ["lex", "random"]},
                                       {"type": "array", "items": {"type": "string"}}]},
                "seed": {"type": "integer", "minimum": 0},
                "rank_tol": {"type": "number", "exclusiveMinimum": 0},
                "cond_floor": {"type": "number", "exclusiveMinimum": 0},
                "tie_tol": {"type": "number", "minimum": 0},
                "n_jobs": {"type": "integer", "minimum": 1},
            }),
        },
        "dynamics": {
            "type": "object", "additionalProperties": False,
            "properties": dict(_SOLVER, **{
                "enabled": {"type": "boolean"},
                "refit": {"type": "boolean"},
                "preference": {"type": "array", "items": {"type": "string"}},
                "targets": {
                    "type": "object",
                    "additionalProperties": {
                        "type": "object", "additionalProperties": False,
                        "properties": {"order": {"type": "integer", "minimum": 1, "maximum": 2},
                                       "source": {"type": "string"},
                                       "source_order": {"type": "integer", "minimum": 1, "maximum": 2}},
                    },
                },
                "n_jobs": {"type": "integer", "minimum": 1},
            }),
        },
        "sweep": {
            "type": "object", "additionalProperties": False, "required": ["alpha", "threshold"],
            "properties": {
                "stage": {"enum": ["algebraic", "dynamics"]},
                "alpha": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "threshold": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
            },
        },
        "output": {"type": "string"},
    },
}

DEFAULTS = {
    "library": {"kind": "polynomial", "degree": 2, "include_constant": True, "regressors": "coupling"},
    "smoothing": None,
    "derivatives": {"window": 21, "polyorder": 3, "source": "raw"},
    "algebraic": {"K": None, "eps": 2.0, "score_floor": 0.5, "score": "r2", "tiebreak": "lex", "seed": 0,
                  "rank_tol": 1e-10, "cond_floor": 1e-14, "tie_tol": 1e-9, "n_jobs": 1},
    "dynamics": {"enabled": True, "refit": True, "preference": [], "targets": {}, "n_jobs": 1},
}

GRID_ALGEBRAIC = {"solver": "stols", "threshold": 0.1, "K": 1}


@dataclass(frozen=True)
class PipelineConfig:
    data: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | os.PathLike | None = None) -> "PipelineConfig":
        if not isinstance(d, dict) or ("input" in d) == ("generator" in d):
            raise ConfigError("config needs exactly one of 'input' or 'generator'", module="cli",
                              op="load_config")
        try:
            jsonschema.validate(d, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"{where}: {exc.message}", module="cli", op="load_config") from None
        merged = copy.deepcopy(d)
        for key, dflt in DEFAULTS.items():
            if dflt is None:
                merged.setdefault(key, None)
            else:
                merged[key] = {**dflt, **merged.get(key, {})}
        if merged["library"]["kind"] == "grid":
            merged["algebraic"] = {**GRID_ALGEBRAIC, **merged["algebraic"], **d.get("algebraic", {})}
        return cls(merged, Path(base_dir) if base_dir else Path.cwd())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PipelineConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", module="cli", op="load_config") from None
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}", module="cli", op="load_config") from None
        return cls.from_dict(d, Path(path).resolve().parent)

    def resolve(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base_dir / q

    def with_seed(self, seed: int) -> "PipelineConfig":
        d = copy.deepcopy(self.data)
        d["algebraic"]["seed"] = int(seed)
        if "generator" in d:
            d["generator"]["seed"] = int(seed)
        return PipelineConfig(d, self.base_dir)


# ---------------------------------------------------------------------------
# data generation
# ---------------------------------------------------------------------------

def _eps(v):
    if v is None or v == "inf":
        return math.inf
    if isinstance(v, list):
        return tuple(_eps(x) for x in v)
    return float(v)


def _sparse(block: dict, fallback: SparseFitConfig | None = None) -> SparseFitConfig:
    base = fallback or SparseFitConfig()
    kw = {k: block[k] for k in _SOLVER if k in block}
    try:
        return SparseFitConfig(**{**base.__dict__, **kw})
    except ValueError as exc:
        raise ConfigError(str(exc), module="sparsereg", op="SparseFitConfig") from None


def generate(block: dict):
    """Simulate the system described by a generator block; returns ``(table, truth, spec)``."""
    system = block["system"]
    spec_d = dict(block.get("spec", {}))
    seed = int(block.get("seed", 0))
    try:
        if system in ("crn1", "crn2"):
            spec = benchgen.spec_from_dict({"kind": "crn", **spec_d})
            table = benchgen.simulate_crn(spec, system, block.get("horizon", 10.0), block.get("samples", 400))
            truth = benchgen.crn_truth(spec, system)
        elif system == "grid":
            if "demo" in spec_d or not spec_d:
                demo = dict(spec_d.get("demo", {}))
                n_kicks = demo.get("n_kicks", 20)
                demo.setdefault("horizon", block.get("horizon", 3.0 * n_kicks))
                spec = benchgen.demo_grid_spec(**demo)
                if "schedule_seed" in spec_d:
                    sched = benchgen.kick_schedule(spec.n_nodes, n_kicks, demo["horizon"],
                                                   demo.get("kick", 0.6), int(spec_d["schedule_seed"]))
                    spec = dataclasses.replace(spec, perturbations=sched)
            else:
                spec = benchgen.spec_from_dict({"kind": "grid", **spec_d})
            n_kicks = max(len(spec.perturbations), 1)
            horizon = block.get("horizon", 3.0 * n_kicks)
            table = benchgen.simulate_grid(spec, horizon, block.get("samples", 150 * n_kicks))
            truth = benchgen.grid_truth(spec)
        else:
            spec = benchgen.spec_from_dict({"kind": "pendulum", **spec_d})
            table = benchgen.simulate_pendulum(spec, system, block.get("horizon", 10.0),
                                               block.get("samples", 1000))
            truth = benchgen.pendulum_truth(spec, system)
    except TypeError as exc:
        raise ConfigError(f"bad generator spec: {exc}", module="benchgen", op="generate") from None
    if block.get("noise_pct"):
        cols = truth.states if system in ("single", "double") else None
        table = inject_noise(table, block["noise_pct"], seed, columns=cols)
    if block.get("snr_db") is not None:
        table = inject_snr_noise(table, block["snr_db"], seed)
    return table, truth, spec


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

@dataclass
class PipelineResult:
    model: DiscoveredModel
    trace: dict
    metrics: dict | None
    algebraic: AlgebraicResult
    exit_code: int = 0
    artifacts: dict = field(default_factory=dict)


def _step_dict(step: RefinementStep) -> dict:
    d = {
        "iteration": step.iteration,
        "relation": format_relation(step.relation),
        "score": step.score,
        "pivot": step.removed_pivot.encoding,
        "removed": [t.encoding for t in step.removed_set],
    }
    for tag, diag in (("before", step.diagnostics_before), ("after", step.diagnostics_after)):
        if diag is not None:
            d[f"svd_{tag}"] = diag.as_dict()
    if step.diagnostics_before is not None and step.diagnostics_after is not None:
        d["log_condition_improvement"] = step.improvement
    return d


def trace_document(res: AlgebraicResult) -> dict:
    return {
        "stop_reason": res.stop_reason,
        "shortfall": res.shortfall,
        "initial_library_size": len(res.initial_library) if res.initial_library is not None else None,
        "refined_library_size": len(res.refined_library),
        "initial_svd": res.initial_diagnostics.as_dict() if res.initial_diagnostics is not None else None,
        "steps": [_step_dict(s) for s in res.trace],
        "rejected": _step_dict(res.rejected) if res.rejected is not None else None,
    }


def _check_states(names, wanted, what):
    missing = [s for s in wanted if s not in names]
    if missing:
        raise ConfigError(f"{what} references unknown states {missing}", module="cli", op="validate_config")


def _derivative(table, source: str, order: int, window: int, polyorder: int) -> np.ndarray:
    col = table.column(source)
    out = np.empty(table.n_samples)
    for _, rows in table.segments():
        out[rows] = estimate_derivative(col[rows], segment_step(table.times[rows]), order, window, polyorder)
    return out


def run_pipeline(config: PipelineConfig, table=None, truth: DiscoveredModel | None = None,
                 sim_spec=None) -> PipelineResult:
    """Run discovery; nothing is written to disk (see :func:`write_artifacts`)."""
    c = config.data
    lib_cfg, alg_cfg, dyn_cfg, der_cfg = c["library"], c["algebraic"], c["dynamics"], c["derivatives"]
    if table is None:
        if "input" in c:
            table = load_table(config.resolve(c["input"]))
        else:
            table, truth, sim_spec = generate(c["generator"])
    if truth is None and c.get("truth"):
        try:
            truth = DiscoveredModel.from_json(config.resolve(c["truth"]).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read truth model: {exc}", module="cli", op="load_truth") from None

    grid = lib_cfg["kind"] == "grid"
    if grid:
        n = lib_cfg.get("n_nodes")
        if n is None:
            n = sum(1 for s in table.names if s.startswith("Pe_"))
        pe, phi, dphi = grid_state_names(n)
        _check_states(table.names, pe + phi + dphi, "grid library")
        states = pe + phi
    else:
        states = list(lib_cfg.get("states") or table.names)
        _check_states(table.names, states, "library")
    _check_states(states, dyn_cfg["preference"], "dynamics.preference")
    _check_states(table.names, [v.get("source", k) for k, v in dyn_cfg["targets"].items()], "dynamics.targets")

    smoothed = table
    if c["smoothing"]:
        smoothed = smooth_table(table, c["smoothing"]["window"], c["smoothing"]["polyorder"])

    acfg = AlgebraicConfig(
        K=alg_cfg["K"], eps=_eps(alg_cfg["eps"]), score_floor=alg_cfg["score_floor"],
        sparse=_sparse(alg_cfg), score_fn=alg_cfg["score"],
        tiebreak=alg_cfg["tiebreak"] if isinstance(alg_cfg["tiebreak"], str) else tuple(alg_cfg["tiebreak"]),
        seed=alg_cfg["seed"], rank_tol=alg_cfg["rank_tol"], cond_floor=alg_cfg["cond_floor"],
        tie_tol=alg_cfg["tie_tol"], n_jobs=alg_cfg["n_jobs"],
    )
    if grid:
        if acfg.K == 0:
            ares = AlgebraicResult((), CandidateLibrary(()), (), "reached_K", shortfall=False)
        else:
            ares = run_grid_algebraic_finder(n, smoothed, acfg, lib_cfg["regressors"])
    else:
        lib0 = build_polynomial_library(states, lib_cfg["degree"], lib_cfg["include_constant"])
        ares = run_algebraic_finder(lib0, smoothed, acfg)

    roles = assign_variable_roles(states, ares.relations, dyn_cfg["preference"] or None, data=smoothed)

    # dynamic library and per-state targets
    gens = set(lib_cfg.get("generators") or [])
    if grid:
        dyn_lib = CandidateLibrary((Term(),) + tuple(Term.state(s) for s in pe + phi + dphi))
        if not gens and isinstance(sim_spec, benchgen.GridSpec):
            gens = set(sim_spec.generators)
        if not gens:
            # generators are the nodes whose frequency is not a function of their own power
            gens = {i + 1 for i in range(n) if _looks_second_order(smoothed, pe[i], dphi[i])}
        per_state = {}
        targets = {}
        for i in range(n):
            terms = [Term(), Term.state(pe[i]), Term.state(phi[i])]
            if i + 1 in gens:
                terms.append(Term.state(dphi[i]))
                targets[phi[i]] = {"order": 2, "source": dphi[i], "source_order": 1}
            else:
                targets[phi[i]] = {"order": 1, "source": phi[i], "source_order": 1}
            per_state[phi[i]] = CandidateLibrary(tuple(terms))
    else:
        dyn_lib = ares.refined_library
        per_state = {}
        targets = {}
    targets.update(dyn_cfg["targets"])

    sources = smoothed if der_cfg["source"] == "smoothed" else table
    derivs: dict[int, dict] = {1: {}, 2: {}}
    orders = {}
    for s in roles.differential:
        spec = targets.get(s, {})
        order = int(spec.get("order", 1))
        src = spec.get("source", s)
        src_order = int(spec.get("source_order", order))
        orders[s] = order
        if dyn_cfg["enabled"]:
            poly = max(der_cfg["polyorder"], src_order + 1) if src_order > 1 else der_cfg["polyorder"]
            derivs[order][s] = _derivative(sources, src, src_order, der_cfg["window"], poly)

    if dyn_cfg["enabled"] and roles.differential and len(dyn_lib):
        libmat = evaluate_library(dyn_lib, smoothed)
        odes = discover_dynamics(libmat, derivs, roles, _sparse(dyn_cfg), orders, per_state, dyn_cfg["n_jobs"])
    else:
        odes = {s: OdeEquation(s, {}, orders.get(s, 1)) for s in roles.differential}

    trace = trace_document(ares)
    compact = [{"iteration": s["iteration"], "relation": s["relation"], "pivot": s["pivot"],
                "removed": s["removed"]} for s in trace["steps"]]
    model = assemble_dae(ares.relations, odes, roles, dyn_lib.terms, smoothed, compact,
                         states=tuple(pe + phi + dphi) if grid else None)
    if dyn_cfg["enabled"] and dyn_cfg["refit"]:
        model = refit_coefficients(model, smoothed, derivs)
    metrics = benchgen.recovery_metrics(model, truth) if truth is not None else None
    exit_code = 5 if ares.shortfall else 0
    return PipelineResult(model, trace, metrics, ares, exit_code)


def _looks_second_order(table, pe: str, dphi: str) -> bool:
    """A load's frequency is an affine function of its power; a generator's is not."""
    A = np.column_stack([np.ones(table.n_samples), table.column(pe)])
    y = table.column(dphi)
    r = y - A @ np.linalg.lstsq(A, y, rcond=None)[0]
    var = float(np.var(y))
    return var > 0 and float(np.var(r)) / var > 0.05


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return "nan" if x is None or (isinstance(x, float) and not math.isfinite(x)) else f"{x:.12g}"


def emit_report(model: DiscoveredModel, trace: dict, fmt: str = "text") -> bytes:
    """Deterministic report; ``json`` is canonical, ``text`` is for reading."""
    if fmt == "json":
        return dumps({"model": model.to_dict(), "trace": trace}).encode("utf-8")
    if fmt != "text":
        raise ConfigError(f"unknown report format {fmt!r}", module="cli", op="emit_report")
    lines = ["algebraic relations (discovery order):"]
    if not model.algebraic:
        lines.append("  none")
    for k, r in enumerate(model.algebraic):
        lines.append(f"  g{k + 1}: 0 = {format_relation(r)}    score={_fmt(r.score)} pivot={r.pivot.encoding}")
    lines.append("roles:")
    lines.append(f"  differential: {', '.join(model.roles.differential) or '-'}")
    lines.append(f"  algebraic: {', '.join(model.roles.algebraic) or '-'}")
    lines.append("dynamics:")
    eqs = [e for e in model.equations() if not e.startswith("0 = ")]
    lines += [f"  {e}" for e in eqs] or ["  none"]
    if trace:
        lines.append("refinement:")
        for s in trace.get("steps", []):
            before = s.get("svd_before", {}).get("log_condition")
            after = s.get("svd_after", {}).get("log_condition")
            line = f"  step {s['iteration']}: pivot {s['pivot']}, removed {len(s['removed'])} terms"
            if before is not None and after is not None:
                line += f", ln cond {_fmt(before)} -> {_fmt(after)}"
            lines.append(line)
        rej = trace.get("rejected")
        if rej:
            lines.append(f"  rejected: pivot {rej['pivot']}, improvement {_fmt(rej.get('log_condition_improvement'))}")
        lines.append(f"  stop: {trace.get('stop_reason')}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def artifacts(result: PipelineResult) -> dict[str, bytes]:
    out = {
        "model.json": result.model.to_json().encode("utf-8"),
        "trace.json": dumps(result.trace).encode("utf-8"),
        "equations.txt": ("\n".join(result.model.equations()) + "\n").encode("utf-8"),
        "report.txt": emit_report(result.model, result.trace, "text"),
    }
    if result.metrics is not None:
        out["metrics.json"] = dumps(result.metrics).encode("utf-8")
    return out


def write_artifacts(result: PipelineResult, out_dir: str | os.PathLike) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, data in artifacts(result).items():
        (out / name).write_bytes(data)
        paths[name] = out / name
    return paths


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def run_sweep(config: PipelineConfig) -> list[dict]:
    """One run per (alpha, threshold) pair of the ``sweep`` block; returns summary rows."""
    sweep = config.data.get("sweep")
    if not sweep:
        raise ConfigError("--sweep needs a 'sweep' block in the config", module="cli", op="run_sweep")
    stage = sweep.get("stage", "algebraic")
    c = config.data
    table, truth, spec = None, None, None
    if "generator" in c:
        table, truth, spec = generate(c["generator"])
    rows = []
    for alpha, thr in itertools.product(sweep["alpha"], sweep["threshold"]):
        d = copy.deepcopy(c)
        d[stage] = {**d[stage], "alpha": alpha, "threshold": thr}
        sub = PipelineConfig(d, config.base_dir)
        try:
            res = run_pipeline(sub, table=table, truth=truth, sim_spec=spec)
        except DaeError as exc:
            rows.append({"alpha": alpha, "threshold": thr, "error": exc.code})
            continue
        row = {
            "alpha": alpha, "threshold": thr,
            "n_relations": len(res.model.algebraic),
            "stop_reason": res.trace["stop_reason"],
            "final_log_condition": (res.trace["steps"][-1]["svd_after"]["log_condition"]
                                    if res.trace["steps"] and "svd_after" in res.trace["steps"][-1] else None),
            "n_ode_terms": sum(len(e.coefficients) for e in res.model.odes.values()),
        }
        if res.metrics is not None:
            row["algebraic_recovery_pct"] = res.metrics["algebraic_recovery_pct"]
            row["algebraic_support_pct"] = res.metrics["algebraic_support_pct"]
        rows.append(row)
    return rows


def sweep_table(rows: list[dict]) -> str:
    keys = ["alpha", "threshold", "n_relations", "stop_reason", "final_log_condition", "n_ode_terms",
            "algebraic_recovery_pct", "algebraic_support_pct", "error"]
    keys = [k for k in keys if any(k in r for r in rows)]
    lines = ["\t".join(keys)]
    for r in rows:
        lines.append("\t".join(_fmt(r[k]) if isinstance(r.get(k), float) else str(r.get(k, "")) for k in keys))
    return "\n".join(lines) + "\n"


def simulate_to_csv(spec_path: str | os.PathLike, out_csv: str | os.PathLike,
                    truth_out: str | os.PathLike | None = None) -> None:
    try:
        block = json.loads(Path(spec_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read spec: {exc}", module="cli", op="simulate") from None
    try:
        jsonschema.validate(block, SCHEMA["properties"]["generator"])
    except jsonschema.ValidationError as exc:
        raise ConfigError(exc.message, module="cli", op="simulate") from None
    table, truth, _ = generate(block)
    write_table(table, out_csv)
    if truth_out is not None:
        Path(truth_out).write_text(truth.to_json(), encoding="utf-8")
