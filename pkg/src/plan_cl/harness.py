"""Experiment orchestration: config loading, runs, metrics, seed aggregation, sweeps.

Result files
------------
``run-<method>-<confighash>-seed<seed>.json`` (schema version 1)::

    schema_version   int, currently 1
    config           full config snapshot (re-running it reproduces the run)
    method, seed     copied from the snapshot for convenience
    stream_hash      sha256 of the generated task stream
    accuracy         lower-triangular list: accuracy[i][j], j <= i
    metrics          {"acc", "aaa", "forgetting"}
    losses           per task, per epoch mean training loss
    allocations      per task, per layer: allocated basis row indices (0-based)
    window_counts    per task, per layer: {index: count} in the final window
    timing           wall-clock seconds; the only non-deterministic field

``runs.csv`` has one row per run with columns :data:`RUN_COLUMNS`;
``summary.csv`` one row per aggregated configuration with :data:`SUMMARY_COLUMNS`.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import nn, tasks as tasks_mod
from .plan import BasisExhaustedError, PlanConfig, p_label, parse_p
from .tensor import make_rng
from .variants import METHODS, run_method

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SWEEP_AXES = ("rho", "p", "S", "basis_kind", "method")
RUN_COLUMNS = [
    "method", "basis_kind", "p", "rho", "rank", "window", "seed",
    "acc", "aaa", "forgetting", "stream_hash", "config_hash",
]
SUMMARY_COLUMNS = [
    "axis", "value", "method", "n_seeds",
    "acc_mean", "acc_std", "aaa_mean", "aaa_std", "forgetting_mean", "forgetting_std",
    "single_seed", "jaccard_vs_full",
]


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config


@dataclass
class ModelSection:
    hidden: int = 256
    depth: int = 2
    w0: str = "pretrained"
    base_classes: int = 8
    base_epochs: int = 20
    base_lr: float = 1e-3


@dataclass
class PlanSection:
    method: str = "plan"
    basis_kind: str = "standard"
    p: Any = 2
    rho: float = 0.01
    rank: int = 4
    ranks: list = field(default_factory=list)
    window: Any = 50
    cumulative_frequency: bool = False
    lr: float = 1e-3
    epochs: int = 10
    batch_size: int = 32
    mask_old_logits: bool = True
    head_std: float = 0.01


@dataclass
class TasksSection:
    generator: str = "gaussian"
    n_tasks: int = 5
    classes_per_task: int = 4
    dim: int = 64
    samples_per_class: int = 250
    separation: float = 3.0
    angles: list = field(default_factory=list)
    csv_path: str = ""
    csv_header: bool = False
    label_to_task: dict = field(default_factory=dict)


@dataclass
class RunSection:
    seed: int = 0
    n_seeds: int = 5
    sweep_axis: str = ""
    sweep_values: list = field(default_factory=list)


SECTIONS = {"model": ModelSection, "plan": PlanSection, "tasks": TasksSection, "run": RunSection}


@dataclass
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    plan: PlanSection = field(default_factory=PlanSection)
    tasks: TasksSection = field(default_factory=TasksSection)
    run: RunSection = field(default_factory=RunSection)

    def snapshot(self) -> dict:
        out = {}
        for name in SECTIONS:
            sec = getattr(self, name)
            out[name] = {f.name: copy.deepcopy(getattr(sec, f.name)) for f in fields(sec)}
        out["plan"]["p"] = p_label(self.plan.p)
        out["plan"]["window"] = "full" if self.plan.window is None else int(self.plan.window)
        return out

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.snapshot()).encode()).hexdigest()

    def with_changes(self, **changes) -> "ExperimentConfig":
        """Copy with dotted-key overrides, e.g. ``with_changes(**{"plan.rho": 0.1})``."""
        snap = self.snapshot()
        for key, value in changes.items():
            section, name = key.split(".")
            snap[section][name] = value
        return config_from_dict(snap)

    def plan_config(self, seed: int | None = None) -> PlanConfig:
        p = self.plan
        return PlanConfig(
            rho=p.rho, p=p.p, rank=p.rank, ranks=list(p.ranks) or None, window=p.window,
            lr=p.lr, epochs=p.epochs, batch_size=p.batch_size,
            seed=self.run.seed if seed is None else seed, basis_kind=p.basis_kind,
            cumulative_frequency=p.cumulative_frequency, head_std=p.head_std,
            mask_old_logits=p.mask_old_logits,
        )


def _parse_window(value):
    if value is None or (isinstance(value, str) and value.lower() == "full"):
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value or value < 1:
        raise ConfigError(f"plan.window: expected a positive integer or \"full\", got {value!r}")
    return int(value)


# Keys with their own parsers (several accepted spellings).
_PARSED_KEYS = {"plan": ("p", "window")}


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build and validate a config; unknown sections or keys raise :class:`ConfigError`."""
    cfg = ExperimentConfig()
    for section, values in data.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table")
        sec = getattr(cfg, section)
        known = {f.name: f for f in fields(sec)}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {section}.{key}")
            default = getattr(sec, key)
            if key in _PARSED_KEYS.get(section, ()):
                setattr(sec, key, value)
                continue
            if isinstance(default, bool) and not isinstance(value, bool):
                raise ConfigError(f"{section}.{key}: expected true/false, got {value!r}")
            if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if isinstance(default, (int, float)) and not isinstance(default, bool):
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    raise ConfigError(f"{section}.{key}: expected a number, got {value!r}")
                if isinstance(default, int) and not isinstance(value, int):
                    raise ConfigError(f"{section}.{key}: expected an integer, got {value!r}")
            if isinstance(default, str) and not isinstance(value, str):
                raise ConfigError(f"{section}.{key}: expected a string, got {value!r}")
            if isinstance(default, (list, dict)) and not isinstance(value, type(default)):
                raise ConfigError(f"{section}.{key}: expected a {type(default).__name__}, got {value!r}")
            setattr(sec, key, value)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    p = cfg.plan
    if p.method not in METHODS:
        raise ConfigError(f"plan.method: unknown method {p.method!r}; expected one of {METHODS}")
    if p.basis_kind not in ("standard", "random_orthogonal", "gradient_svd"):
        raise ConfigError(f"plan.basis_kind: unknown basis {p.basis_kind!r}")
    try:
        p.p = parse_p(p.p)
    except ValueError as exc:
        raise ConfigError(f"plan.p: {exc}") from None
    p.window = _parse_window(p.window)
    if not p.rho > 0:
        raise ConfigError(f"plan.rho: must be > 0, got {p.rho}")
    for key in ("rank", "lr", "epochs", "batch_size"):
        if not getattr(p, key) > 0:
            raise ConfigError(f"plan.{key}: must be > 0")
    m = cfg.model
    if m.w0 not in ("pretrained", "random"):
        raise ConfigError(f"model.w0: expected \"pretrained\" or \"random\", got {m.w0!r}")
    if m.depth < 1 or m.hidden < 1:
        raise ConfigError("model.depth and model.hidden must be >= 1")
    t = cfg.tasks
    if t.generator not in ("gaussian", "rotated", "csv"):
        raise ConfigError(f"tasks.generator: unknown generator {t.generator!r}")
    if t.generator == "csv" and not t.csv_path:
        raise ConfigError("tasks.csv_path: required when generator = \"csv\"")
    if t.generator == "rotated" and not t.angles:
        raise ConfigError("tasks.angles: required when generator = \"rotated\"")
    if cfg.run.sweep_axis and cfg.run.sweep_axis not in SWEEP_AXES:
        raise ConfigError(f"run.sweep_axis: unknown axis {cfg.run.sweep_axis!r}; expected one of {SWEEP_AXES}")
    if cfg.run.n_seeds < 1:
        raise ConfigError("run.n_seeds: must be >= 1")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)


# ---------------------------------------------------------------- metrics


class AccuracyMatrix:
    """``R[i][j]``: accuracy on task j's test split after training task i (j <= i)."""

    def __init__(self, n_tasks: int):
        self.n = n_tasks
        self.rows: list[list[float | None]] = [[None] * (i + 1) for i in range(n_tasks)]

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "AccuracyMatrix":
        m = cls(len(rows))
        for i, row in enumerate(rows):
            if len(row) != i + 1:
                raise ValueError(f"row {i} must have {i + 1} entries, got {len(row)}")
            for j, v in enumerate(row):
                m.set(i, j, v)
        return m

    def set(self, i: int, j: int, value: float) -> None:
        if j > i:
            raise IndexError(f"R[{i}][{j}] lies above the diagonal")
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"accuracy {value} outside [0, 1]")
        self.rows[i][j] = float(value)

    def is_complete(self) -> bool:
        return all(v is not None for row in self.rows for v in row)

    def require_complete(self) -> None:
        if self.n == 0 or not self.is_complete():
            raise ValueError("accuracy matrix is incomplete")

    def tolist(self) -> list[list[float]]:
        return [list(r) for r in self.rows]


def _as_accuracy(r) -> AccuracyMatrix:
    return r if isinstance(r, AccuracyMatrix) else AccuracyMatrix.from_rows(r)


def compute_acc(r) -> float:
    """Mean accuracy over all tasks after the last one."""
    r = _as_accuracy(r)
    r.require_complete()
    last = r.rows[-1]
    return math.fsum(last) / len(last)


def compute_aaa(r) -> float:
    """Average over checkpoints of the mean accuracy on the tasks seen so far."""
    r = _as_accuracy(r)
    r.require_complete()
    return math.fsum(math.fsum(row) / len(row) for row in r.rows) / r.n


def compute_forgetting(r) -> float:
    """Mean drop from each old task's best accuracy to its final accuracy."""
    r = _as_accuracy(r)
    r.require_complete()
    if r.n == 1:
        return 0.0
    drops = [max(r.rows[i][j] for i in range(j, r.n - 1)) - r.rows[-1][j] for j in range(r.n - 1)]
    return math.fsum(drops) / len(drops)


def running_accuracy(r) -> list[float]:
    """Mean accuracy over seen tasks after each task (the curve AAA averages)."""
    r = _as_accuracy(r)
    return [math.fsum(row) / len(row) for row in r.rows]


def evaluate_task(model: nn.Mlp, task: tasks_mod.Task) -> float:
    pred = nn.predict(model, task.test_x)
    return float(np.count_nonzero(pred == task.test_y)) / len(task.test_y)


# ---------------------------------------------------------------- runs


@dataclass
class RunResult:
    config: dict
    method: str
    seed: int
    stream_hash: str
    accuracy: list[list[float]]
    metrics: dict
    losses: list[list[float]]
    allocations: list[list[list[int]]]
    window_counts: list
    timing: dict

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config,
            "method": self.method,
            "seed": self.seed,
            "stream_hash": self.stream_hash,
            "accuracy": self.accuracy,
            "metrics": self.metrics,
            "losses": self.losses,
            "allocations": self.allocations,
            "window_counts": self.window_counts,
            "timing": self.timing,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict(), indent=2) + "\n"

    def deterministic_json(self) -> str:
        d = self.to_dict()
        d.pop("timing")
        return canonical_json(d, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported result schema version {d.get('schema_version')!r}")
        return cls(
            d["config"], d["method"], d["seed"], d["stream_hash"], d["accuracy"], d["metrics"],
            d["losses"], d["allocations"], d["window_counts"], d.get("timing", {}),
        )

    @classmethod
    def load(cls, path) -> "RunResult":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def canonical_json(obj, indent: int | None = None) -> str:
    return json.dumps(obj, sort_keys=True, indent=indent, ensure_ascii=False, allow_nan=False)


def derive_seed(seed: int, purpose: int) -> int:
    """Independent 63-bit child seed for one purpose of one run."""
    return int(np.random.SeedSequence([int(seed), purpose]).generate_state(1, dtype=np.uint64)[0] >> 1)


SEED_DATA, SEED_BASE, SEED_MODEL, SEED_TRAIN, SEED_ROTATE = range(5)


def build_stream(cfg: ExperimentConfig, seed: int) -> tasks_mod.TaskStream:
    t = cfg.tasks
    if t.generator == "csv":
        schema = tasks_mod.CsvSchema({int(k): int(v) for k, v in t.label_to_task.items()}, t.csv_header)
        return tasks_mod.load_csv_stream(t.csv_path, schema)
    if t.generator == "rotated":
        base = tasks_mod.gen_gaussian_clusters(
            1, t.classes_per_task, t.dim, t.samples_per_class, t.separation, derive_seed(seed, SEED_DATA)
        )
        return tasks_mod.gen_rotated_features(base, t.angles, derive_seed(seed, SEED_ROTATE))
    return tasks_mod.gen_gaussian_clusters(
        t.n_tasks, t.classes_per_task, t.dim, t.samples_per_class, t.separation, derive_seed(seed, SEED_DATA)
    )


_BACKBONES: dict[str, list[tuple[np.ndarray, np.ndarray | None]]] = {}
_BACKBONE_CACHE_SIZE = 16


def build_model(cfg: ExperimentConfig, dim: int, seed: int) -> nn.Mlp:
    """Backbone with ``w0`` either random or trained on a held-out base task of disjoint classes.

    Pretrained weights depend only on the model section, a few task fields
    and the seed, so they are memoized per process; each call still gets a
    fresh model.
    """
    m = cfg.model
    rng = make_rng(derive_seed(seed, SEED_MODEL))
    model = nn.Mlp.build([dim] + [m.hidden] * m.depth, rng)
    if m.w0 != "pretrained":
        return model
    key = canonical_json([cfg.snapshot()["model"], dim, cfg.tasks.samples_per_class, cfg.tasks.separation,
                          cfg.plan.batch_size, seed])
    if key not in _BACKBONES:
        base = tasks_mod.gen_gaussian_clusters(
            1, m.base_classes, dim, cfg.tasks.samples_per_class, cfg.tasks.separation, derive_seed(seed, SEED_BASE)
        ).tasks[0]
        nn.pretrain_backbone(model, base.train_x, base.train_y, m.base_classes, m.base_epochs, m.base_lr,
                             cfg.plan.batch_size, rng)
        if len(_BACKBONES) >= _BACKBONE_CACHE_SIZE:
            _BACKBONES.pop(next(iter(_BACKBONES)))
        _BACKBONES[key] = [(l.w0.copy(), None if l.bias is None else l.bias.copy()) for l in model.layers]
    for layer, (w0, bias) in zip(model.layers, _BACKBONES[key]):
        layer.set_w0(w0, bias)
    return model


def expected_tasks(cfg: ExperimentConfig) -> int | None:
    """Number of tasks the config generates, or None when it must be read from a CSV."""
    t = cfg.tasks
    if t.generator == "gaussian":
        return t.n_tasks
    if t.generator == "rotated":
        return len(t.angles)
    return None


def check_capacity(cfg: ExperimentConfig, dim: int, n_tasks: int | None) -> None:
    if cfg.plan.method == "inc_lora" or n_tasks is None:
        return
    k = min(dim, cfg.model.hidden)
    cfg.plan_config().validate(n_tasks, k)


def run_experiment(cfg: ExperimentConfig, seed: int | None = None) -> RunResult:
    """Train every task in order, evaluating all seen tasks after each one."""
    seed = cfg.run.seed if seed is None else int(seed)
    if seed != cfg.run.seed:
        cfg = cfg.with_changes(**{"run.seed": seed})
    stream = build_stream(cfg, seed)
    stream.check()
    check_capacity(cfg, stream.dim, len(stream))
    t0 = time.perf_counter()
    model = build_model(cfg, stream.dim, seed)
    setup_time = time.perf_counter() - t0
    r = AccuracyMatrix(len(stream))
    task_times: list[float] = []
    clock = [time.perf_counter()]

    def on_task_end(t: int) -> None:
        for j in range(t + 1):
            r.set(t, j, evaluate_task(model, stream.tasks[j]))
        now = time.perf_counter()
        task_times.append(now - clock[0])
        clock[0] = now
        log.info("task %d done: running acc %.4f", t, math.fsum(r.rows[t]) / (t + 1))

    seq = run_method(cfg.plan.method, model, stream.tasks, cfg.plan_config(seed), derive_seed(seed, SEED_TRAIN), on_task_end)
    metrics = {"acc": compute_acc(r), "aaa": compute_aaa(r), "forgetting": compute_forgetting(r)}
    return RunResult(
        config=cfg.snapshot(),
        method=cfg.plan.method,
        seed=seed,
        stream_hash=stream.digest(),
        accuracy=r.tolist(),
        metrics=metrics,
        losses=seq.losses,
        allocations=seq.allocations,
        window_counts=[[{str(k): v for k, v in c.items()} for c in per_layer] for per_layer in seq.window_counts],
        timing={"setup_seconds": setup_time, "task_seconds": task_times,
                "total_seconds": time.perf_counter() - t0},
    )


def write_unique(directory, stem: str, suffix: str, data: str) -> Path:
    """Write ``data`` to ``stem + suffix`` without ever replacing different content.

    An existing file with identical bytes is reused; otherwise ``-2``, ``-3``,
    ... is appended to the stem.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = data.encode("utf-8")
    n = 1
    while True:
        path = directory / (f"{stem}{suffix}" if n == 1 else f"{stem}-{n}{suffix}")
        if not path.exists():
            path.write_bytes(payload)
            return path
        if path.read_bytes() == payload:
            return path
        n += 1


def result_stem(result: RunResult) -> str:
    digest = hashlib.sha256(canonical_json(result.config).encode()).hexdigest()[:12]
    return f"run-{result.method}-{digest}-seed{result.seed}"


def write_result(result: RunResult, outdir) -> Path:
    return write_unique(outdir, result_stem(result), ".json", result.to_json())


def run_row(result: RunResult) -> dict:
    plan = result.config["plan"]
    return {
        "method": result.method,
        "basis_kind": plan["basis_kind"],
        "p": plan["p"],
        "rho": repr(float(plan["rho"])),
        "rank": plan["rank"],
        "window": plan["window"],
        "seed": result.seed,
        "acc": repr(result.metrics["acc"]),
        "aaa": repr(result.metrics["aaa"]),
        "forgetting": repr(result.metrics["forgetting"]),
        "stream_hash": result.stream_hash,
        "config_hash": hashlib.sha256(canonical_json(result.config).encode()).hexdigest()[:12],
    }


def to_csv(rows: Iterable[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="raise")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


# ---------------------------------------------------------------- aggregation


def strip_seed(config: dict) -> dict:
    c = copy.deepcopy(config)
    c["run"].pop("seed", None)
    return c


def aggregate_seeds(results: Sequence[RunResult]) -> dict:
    """Per-metric mean and sample standard deviation (n - 1) across seeds.

    A single result reports std 0 with ``single_seed`` set.
    """
    if not results:
        raise ValueError("no results to aggregate")
    ref = strip_seed(results[0].config)
    for r in results[1:]:
        if strip_seed(r.config) != ref:
            raise ValueError("results differ in configuration beyond the seed")
    out: dict[str, Any] = {"method": results[0].method, "n_seeds": len(results), "single_seed": len(results) == 1}
    for metric in ("acc", "aaa", "forgetting"):
        vals = np.array([r.metrics[metric] for r in results], dtype=np.float64)
        out[f"{metric}_mean"] = float(np.mean(vals))
        out[f"{metric}_std"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    return out


def seed_list(cfg: ExperimentConfig) -> list[int]:
    return [cfg.run.seed + i for i in range(cfg.run.n_seeds)]


def _run_one(args) -> RunResult:
    cfg_dict, seed = args
    return run_experiment(config_from_dict(cfg_dict), seed)


def run_many(jobs: Sequence[tuple[ExperimentConfig, int]], n_workers: int = 1) -> list[RunResult]:
    """Run (config, seed) pairs, in parallel when ``n_workers > 1``; order is preserved."""
    payload = [(c.snapshot(), s) for c, s in jobs]
    if n_workers <= 1 or len(payload) <= 1:
        return [_run_one(a) for a in payload]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(_run_one, payload))


# ---------------------------------------------------------------- sweeps


AXIS_KEYS = {"rho": "plan.rho", "p": "plan.p", "S": "plan.window", "basis_kind": "plan.basis_kind", "method": "plan.method"}


def _axis_label(axis: str, value) -> str:
    if axis == "p":
        return p_label(value)
    if axis == "S":
        return "full" if _parse_window(value) is None else str(int(value))
    if axis == "rho":
        return repr(float(value))
    return str(value)


def dedupe_values(axis: str, values: Sequence) -> list:
    seen, out = set(), []
    for v in values:
        label = _axis_label(axis, v)
        if label in seen:
            warnings.warn(f"duplicate {axis} value {v!r} dropped", stacklevel=2)
            continue
        seen.add(label)
        out.append(v)
    return out


def jaccard(a: Iterable[int], b: Iterable[int]) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


@dataclass
class SweepOutput:
    axis: str
    summaries: list[dict]
    results: dict[str, list[RunResult]]
    stability: dict | None = None


def sweep(cfg: ExperimentConfig, axis: str | None = None, values: Sequence | None = None, n_workers: int = 1) -> SweepOutput:
    """Cross product of axis values and seeds.

    For the ``S`` axis the task-2 selections are compared (Jaccard) with the
    unbounded window, or with the largest window when "full" is not swept.
    """
    axis = axis or cfg.run.sweep_axis
    values = list(values if values is not None else cfg.run.sweep_values)
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if not values:
        raise ConfigError("run.sweep_values: no values to sweep")
    values = dedupe_values(axis, values)
    seeds = seed_list(cfg)
    variants = [(_axis_label(axis, v), cfg.with_changes(**{AXIS_KEYS[axis]: v})) for v in values]
    for _, c in variants:
        check_capacity(c, c.tasks.dim, expected_tasks(c))
    flat = run_many([(c, s) for _, c in variants for s in seeds], n_workers)
    results: dict[str, list[RunResult]] = {}
    for i, (label, _) in enumerate(variants):
        results[label] = flat[i * len(seeds) : (i + 1) * len(seeds)]
    stability = s_stability(results) if axis == "S" else None
    summaries = []
    for label, rs in results.items():
        row = {"axis": axis, "value": label, **aggregate_seeds(rs)}
        row["jaccard_vs_full"] = stability["mean_jaccard"][label] if stability else ""
        summaries.append(row)
    return SweepOutput(axis, summaries, results, stability)


def s_stability(results: dict[str, list[RunResult]]) -> dict:
    """Task-2 selected index sets per window size and their overlap with the reference window."""
    labels = list(results)
    if "full" in labels:
        ref = "full"
    else:
        ref = max(labels, key=int)
    n_layers = len(results[ref][0].allocations[0])
    selected: dict[str, list[list[list[int]]]] = {}
    per_seed: dict[str, list[float]] = {}
    for label in labels:
        if len(results[label][0].allocations) < 2:
            raise ValueError("S-stability needs at least two tasks")
        selected[label] = [r.allocations[1] for r in results[label]]
        per_seed[label] = [
            jaccard(r.allocations[1][n_layers - 1], rr.allocations[1][n_layers - 1])
            for r, rr in zip(results[label], results[ref])
        ]
    return {
        "reference": ref,
        "layer": n_layers - 1,
        "selected": selected,
        "jaccard": per_seed,
        "mean_jaccard": {k: float(np.mean(v)) for k, v in per_seed.items()},
    }


def format_summary_table(summaries: Sequence[dict], key: str = "value") -> str:
    lines = [f"{key:<22} {'Acc':>17} {'AAA':>17}"]
    for s in summaries:
        lines.append(
            f"{str(s[key]):<22} {100 * s['acc_mean']:7.2f} (±{100 * s['acc_std']:.2f})"
            f" {100 * s['aaa_mean']:7.2f} (±{100 * s['aaa_std']:.2f})"
        )
    return "\n".join(lines)


def write_sweep(output: SweepOutput, outdir) -> dict[str, Path]:
    outdir = Path(outdir)
    paths: dict[str, Path] = {}
    rows = []
    for rs in output.results.values():
        for r in rs:
            write_result(r, outdir / "runs")
            rows.append(run_row(r))
    tag = hashlib.sha256(canonical_json([r["config_hash"] + str(r["seed"]) for r in rows]).encode()).hexdigest()[:12]
    paths["runs"] = write_unique(outdir, f"sweep-{output.axis}-{tag}-runs", ".csv", to_csv(rows, RUN_COLUMNS))
    summary_rows = [{c: s.get(c, "") for c in SUMMARY_COLUMNS} for s in output.summaries]
    paths["summary"] = write_unique(outdir, f"sweep-{output.axis}-{tag}-summary", ".csv", to_csv(summary_rows, SUMMARY_COLUMNS))
    if output.stability is not None:
        paths["stability"] = write_unique(
            outdir, f"sweep-{output.axis}-{tag}-stability", ".json", canonical_json(output.stability, indent=2) + "\n"
        )
    return paths
