"""Command-line entry point.

Subcommands::

    daesparse discover --config run.json [--out DIR] [--seed N] [--sweep] [--print-schema]
    daesparse simulate --spec system.json --out data.csv [--truth-out truth.json]
    daesparse score --model model.json --truth truth.json

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical failure,
5 fewer relations than demanded.  Every failure writes exactly one JSON
object to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import benchgen
from .dynfinder import DiscoveredModel, dumps
from .errors import ConfigError, DaeError
from .pipeline import (
    SCHEMA,
    PipelineConfig,
    run_pipeline,
    run_sweep,
    simulate_to_csv,
    sweep_table,
    write_artifacts,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message, module="cli", op="parse_args")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="daesparse", description="Discover differential-algebraic equations from time series.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    d = sub.add_parser("discover", help="run discovery from a JSON config")
    d.add_argument("--config", help="JSON config file")
    d.add_argument("--out", help="output directory (overrides config 'output')")
    d.add_argument("--seed", type=int, help="override algebraic and generator seeds")
    d.add_argument("--sweep", action="store_true", help="run the (alpha, threshold) grid in 'sweep'")
    d.add_argument("--print-schema", action="store_true", help="print the config JSON schema and exit")

    s = sub.add_parser("simulate", help="simulate a benchmark system to CSV")
    s.add_argument("--spec", required=True, help="JSON generator block")
    s.add_argument("--out", required=True, help="CSV destination")
    s.add_argument("--truth-out", help="also write the reference model JSON here")

    c = sub.add_parser("score", help="compare a discovered model with a reference")
    c.add_argument("--model", required=True)
    c.add_argument("--truth", required=True)
    return p


def _read_model(path: str) -> DiscoveredModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}", module="cli", op="score") from None
    return DiscoveredModel.from_json(text)


def _discover(args) -> int:
    if args.print_schema:
        sys.stdout.write(json.dumps(SCHEMA, indent=2, sort_keys=True) + "\n")
        return 0
    if not args.config:
        raise ConfigError("--config is required", module="cli", op="parse_args")
    cfg = PipelineConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = args.out or cfg.data.get("output")
    if args.sweep:
        rows = run_sweep(cfg)
        table = sweep_table(rows)
        if out:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "sweep.json").write_bytes(dumps(rows).encode("utf-8"))
            (Path(out) / "sweep.txt").write_text(table, encoding="utf-8")
        sys.stdout.write(table)
        return 0
    result = run_pipeline(cfg)
    if out:
        write_artifacts(result, out)
    sys.stdout.write("\n".join(result.model.equations()) + "\n")
    if result.exit_code == 5:
        err = {"error": "NoRelationFound", "module": "algfinder", "operation": "run_algebraic_finder",
               "message": f"fewer relations than demanded ({len(result.model.algebraic)} found)"}
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    return result.exit_code


def _simulate(args) -> int:
    simulate_to_csv(args.spec, args.out, args.truth_out)
    return 0


def _score(args) -> int:
    metrics = benchgen.recovery_metrics(_read_model(args.model), _read_model(args.truth))
    sys.stdout.write(dumps(metrics) + "\n")
    return 0


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise ConfigError("a subcommand is required: discover, simulate or score",
                              module="cli", op="parse_args")
        return {"discover": _discover, "simulate": _simulate, "score": _score}[args.command](args)
    except DaeError as exc:
        sys.stderr.write(json.dumps(exc.as_dict(), sort_keys=True) + "\n")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
