"""``plan-cl`` command line.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 runtime error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from collections import defaultdict
from pathlib import Path

from . import harness, oracle, plotting
from .harness import ConfigError
from .plan import BasisExhaustedError
from .tasks import CsvFormatError, write_csv_stream
from .variants import METHODS

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3
DEFAULT_OUT = "results"

log = logging.getLogger("plan_cl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default: $PLAN_OUT or ./results)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug")
    cfg = argparse.ArgumentParser(add_help=False)
    cfg.add_argument("--config", required=True, help="TOML experiment config")
    cfg.add_argument("--seed", type=_u64, help="override run.seed")
    jobs = argparse.ArgumentParser(add_help=False)
    jobs.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    parser = _Parser(prog="plan-cl", description="Continual learning with proactively allocated low-rank adapters.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("run", parents=[common, cfg], help="train one seed of the configured method")
    sub.add_parser("ablate", parents=[common, cfg, jobs], help="compare all methods over the configured seeds")
    p = sub.add_parser("sweep", parents=[common, cfg, jobs], help="sweep one axis over the configured seeds")
    p.add_argument("--axis", choices=harness.SWEEP_AXES, help="override run.sweep_axis")
    p.add_argument("--values", nargs="+", help="override run.sweep_values")
    p = sub.add_parser("verify", parents=[common], help="check closed forms, gradients and allocation invariants")
    p.add_argument("--instances", type=int, default=200, help="random instances per norm order")
    p.add_argument("--seed", type=_u64, default=0)
    p = sub.add_parser("plot", parents=[common], help="per-task accuracy charts from result files")
    p.add_argument("results", nargs="+", help="result JSON files")
    p = sub.add_parser("gen-data", parents=[common], help="write the configured task stream as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=_u64)
    return parser


def _outdir(args) -> Path:
    return Path(args.out or os.environ.get("PLAN_OUT") or DEFAULT_OUT)


def _load(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_changes(**{"run.seed": args.seed})
    return cfg


def _coerce(axis: str, text: str):
    if axis == "rho":
        return float(text)
    if axis == "S":
        return "full" if text.lower() == "full" else int(text)
    return text


def cmd_run(args) -> int:
    cfg = _load(args)
    result = harness.run_experiment(cfg)
    path = harness.write_result(result, _outdir(args))
    m = result.metrics
    print(f"{result.method} seed={result.seed}  Acc {100 * m['acc']:.2f}  AAA {100 * m['aaa']:.2f}  -> {path}")
    return EXIT_OK


def _report_sweep(output: harness.SweepOutput, outdir: Path, key: str) -> None:
    paths = harness.write_sweep(output, outdir)
    print(harness.format_summary_table(output.summaries, key))
    if output.stability is not None:
        ref = output.stability["reference"]
        for label, j in output.stability["mean_jaccard"].items():
            print(f"task-2 selection overlap, S={label} vs S={ref}: {j:.3f}")
    for name, path in paths.items():
        print(f"{name}: {path}")


def cmd_ablate(args) -> int:
    cfg = _load(args)
    output = harness.sweep(cfg, "method", list(METHODS), args.jobs)
    hashes = {r.stream_hash for rs in output.results.values() for r in rs}
    per_seed = {r.seed: r.stream_hash for r in next(iter(output.results.values()))}
    for rs in output.results.values():
        for r in rs:
            if per_seed[r.seed] != r.stream_hash:
                raise RuntimeError(f"method {r.method} saw a different task stream for seed {r.seed}")
    log.info("%d distinct task streams across %d seeds", len(hashes), len(per_seed))
    _report_sweep(output, _outdir(args), "method")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    axis = args.axis or cfg.run.sweep_axis
    if not axis:
        raise ConfigError("no sweep axis: set run.sweep_axis or pass --axis")
    values = [_coerce(axis, v) for v in args.values] if args.values else None
    output = harness.sweep(cfg, axis, values, args.jobs)
    _report_sweep(output, _outdir(args), "value")
    return EXIT_OK


def cmd_verify(args) -> int:
    report, failures = oracle.run_verification(args.instances, seed=args.seed)
    text = harness.canonical_json(report, indent=2) + "\n"
    digest = hashlib.sha256(text.encode()).hexdigest()[:12]
    path = harness.write_unique(_outdir(args), f"verify-{digest}", ".json", text)
    for p, stats in report["closed_form"].items():
        print(f"p={p:<4} max gap {stats['max_gap']:.2e}  max |analytic - closed| {stats['max_analytic_gap']:.2e}")
    print(f"gradient check: max relative error {report['gradients']['max_rel_error']:.2e}")
    print(f"report: {path}")
    if failures:
        for f in failures:
            print(f"FAILED {f}", file=sys.stderr)
        return EXIT_VERIFY
    print("all checks passed")
    return EXIT_OK


def _method_series(results: list[harness.RunResult]):
    """Average seeds per (method, config) and build the two per-task curves."""
    groups: dict[tuple[str, str], list[harness.RunResult]] = defaultdict(list)
    for r in results:
        key = harness.canonical_json(harness.strip_seed(r.config))
        groups[(r.method, key)].append(r)
    methods_seen = defaultdict(int)
    for method, _ in groups:
        methods_seen[method] += 1
    acc_series, aaa_series = [], []
    for (method, key), rs in sorted(groups.items()):
        label = method if methods_seen[method] == 1 else f"{method} [{hashlib.sha256(key.encode()).hexdigest()[:6]}]"
        curves = [harness.running_accuracy(r.accuracy) for r in rs]
        n = min(len(c) for c in curves)
        acc = [sum(c[i] for c in curves) / len(curves) for i in range(n)]
        aaa = [sum(acc[: i + 1]) / (i + 1) for i in range(n)]
        acc_series.append(plotting.Series(label, acc))
        aaa_series.append(plotting.Series(label, aaa))
    return acc_series, aaa_series


def cmd_plot(args) -> int:
    results = []
    for path in args.results:
        try:
            results.append(harness.RunResult.load(path))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path}: not a readable result file ({exc})") from None
    acc, aaa = _method_series(results)
    outdir = _outdir(args)
    tag = hashlib.sha256("".join(sorted(harness.result_stem(r) for r in results)).encode()).hexdigest()[:12]
    for name, series, ylabel in (("acc", acc, "Mean accuracy over seen tasks"), ("aaa", aaa, "Average incremental accuracy")):
        svg = plotting.line_chart(series, ylabel, "Tasks learned", ylabel)
        p1 = harness.write_unique(outdir, f"plot-{name}-{tag}", ".svg", svg)
        p2 = harness.write_unique(outdir, f"plot-{name}-{tag}", ".csv", plotting.series_csv(series))
        print(f"{name}: {p1} {p2}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = _load(args)
    if cfg.tasks.generator == "csv":
        raise ConfigError("tasks.generator is already \"csv\"; nothing to generate")
    stream = harness.build_stream(cfg, cfg.run.seed)
    outdir = _outdir(args)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = f"stream-{stream.digest()[:12]}"
    path = outdir / f"{stem}.csv"
    if path.exists():
        print(f"stream already written: {path}")
        return EXIT_OK
    tmp = outdir / f".{stem}.csv.tmp"
    schema = write_csv_stream(stream, tmp)
    tmp.replace(path)
    meta = {"label_to_task": {str(k): v for k, v in schema.label_to_task.items()}, "descriptor": stream.descriptor}
    harness.write_unique(outdir, stem, ".json", harness.canonical_json(meta, indent=2) + "\n")
    print(f"{len(stream)} tasks, {stream.n_classes} classes -> {path}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run, "ablate": cmd_ablate, "sweep": cmd_sweep,
    "verify": cmd_verify, "plot": cmd_plot, "gen-data": cmd_gen_data,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"plan-cl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, BasisExhaustedError, CsvFormatError) as exc:
        print(f"plan-cl: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"plan-cl: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
