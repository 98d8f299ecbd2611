import json
import math
import warnings

import numpy as np
import pytest

from plan_cl import harness
from plan_cl.harness import (
    AccuracyMatrix, ConfigError, RunResult, aggregate_seeds, compute_aaa, compute_acc,
    compute_forgetting, config_from_dict, load_config,
)
from plan_cl.plan import BasisExhaustedError


def tiny_config(**over) -> harness.ExperimentConfig:
    data = {
        "model": {"hidden": 16, "depth": 2, "base_classes": 3, "base_epochs": 2},
        "plan": {"rank": 2, "epochs": 2, "batch_size": 16, "lr": 5e-3},
        "tasks": {"n_tasks": 3, "classes_per_task": 2, "dim": 10, "samples_per_class": 20},
        "run": {"seed": 0, "n_seeds": 2},
    }
    for key, value in over.items():
        sec, name = key.split("__")
        data.setdefault(sec, {})[name] = value
    return config_from_dict(data)


# ---- metrics


def test_acc_examples():
    assert compute_acc([[1.0], [1.0, 1.0]]) == 1.0
    assert compute_acc([[0.9], [0.8, 0.6]]) == pytest.approx(0.7, abs=1e-12)
    assert compute_acc([[0.5]]) == 0.5


def test_aaa_examples():
    assert compute_aaa([[1.0], [1.0, 1.0]]) == 1.0
    assert compute_aaa([[0.9], [0.8, 0.6]]) == pytest.approx(0.8, abs=1e-12)
    assert compute_aaa([[0.37]]) == 0.37


def test_metrics_reject_incomplete():
    r = AccuracyMatrix(2)
    r.set(0, 0, 0.5)
    with pytest.raises(ValueError):
        compute_acc(r)
    with pytest.raises(ValueError):
        compute_aaa(r)
    with pytest.raises(ValueError):
        compute_acc(AccuracyMatrix(0))


def test_accuracy_matrix_guards():
    r = AccuracyMatrix(2)
    with pytest.raises(IndexError):
        r.set(0, 1, 0.5)
    with pytest.raises(ValueError):
        r.set(1, 0, 1.5)
    with pytest.raises(ValueError):
        AccuracyMatrix.from_rows([[0.5, 0.5]])


def _naive_acc(rows):
    n = len(rows)
    total = 0.0
    for j in range(n):
        total += rows[n - 1][j]
    return total / n


def _naive_aaa(rows):
    total = 0.0
    for i in range(len(rows)):
        s = 0.0
        for j in range(i + 1):
            s += rows[i][j]
        total += s / (i + 1)
    return total / len(rows)


def test_metrics_match_naive(rng):
    for _ in range(100):
        n = int(rng.integers(1, 12))
        rows = [rng.uniform(0, 1, i + 1).tolist() for i in range(n)]
        assert abs(compute_acc(rows) - _naive_acc(rows)) <= 1e-12
        aaa = compute_aaa(rows)
        assert abs(aaa - _naive_aaa(rows)) <= 1e-12
        flat = [v for r in rows for v in r]
        assert min(flat) - 1e-15 <= aaa <= max(flat) + 1e-15


def test_forgetting():
    assert compute_forgetting([[0.9], [0.8, 0.6]]) == pytest.approx(0.1)
    assert compute_forgetting([[0.9], [0.95, 0.7], [0.9, 0.5, 0.6]]) == pytest.approx((0.05 + 0.2) / 2)
    assert compute_forgetting([[0.4]]) == 0.0


# ---- aggregation


def _result(acc, seed=0, config=None):
    cfg = config or {"plan": {"rho": 0.01}, "run": {"seed": seed}}
    cfg = json.loads(json.dumps(cfg))
    cfg["run"]["seed"] = seed
    return RunResult(cfg, "plan", seed, "h", [[acc]], {"acc": acc, "aaa": acc, "forgetting": 0.0}, [], [], [], {})


def test_aggregate_example():
    s = aggregate_seeds([_result(0.6, 0), _result(0.8, 1)])
    assert s["acc_mean"] == pytest.approx(0.7)
    assert s["acc_std"] == pytest.approx(math.sqrt(0.02), abs=1e-12)
    assert not s["single_seed"]


def test_aggregate_constant_exact():
    s = aggregate_seeds([_result(0.3, i) for i in range(4)])
    assert s["acc_mean"] == 0.3 and s["acc_std"] == 0.0


def test_aggregate_single():
    s = aggregate_seeds([_result(0.4)])
    assert s["acc_std"] == 0.0 and s["single_seed"] and s["n_seeds"] == 1


def test_aggregate_mixed_configs():
    other = _result(0.5, 1, {"plan": {"rho": 0.1}, "run": {"seed": 1}})
    with pytest.raises(ValueError):
        aggregate_seeds([_result(0.6), other])
    with pytest.raises(ValueError):
        aggregate_seeds([])


# ---- config


def test_default_config_file_loads():
    cfg = load_config("configs/default.toml")
    assert cfg.plan.rho == 0.01 and cfg.plan.p == 2.0 and cfg.plan.window == 50
    assert cfg.tasks.n_tasks == 5 and cfg.tasks.classes_per_task == 4 and cfg.tasks.dim == 64
    assert cfg.run.n_seeds == 5 and cfg.plan.rank == 4


@pytest.mark.parametrize(
    "data, key",
    [
        ({"plan": {"rhoo": 0.1}}, "plan.rhoo"),
        ({"extra": {}}, "extra"),
        ({"plan": {"p": 3}}, "plan.p"),
        ({"plan": {"window": 0}}, "plan.window"),
        ({"plan": {"method": "sgd"}}, "plan.method"),
        ({"plan": {"rank": "four"}}, "plan.rank"),
        ({"plan": {"rank": 2.5}}, "plan.rank"),
        ({"plan": {"mask_old_logits": 1}}, "plan.mask_old_logits"),
        ({"run": {"sweep_axis": "lr"}}, "run.sweep_axis"),
        ({"tasks": {"generator": "csv"}}, "tasks.csv_path"),
        ({"model": {"w0": "imagenet"}}, "model.w0"),
    ],
)
def test_config_errors_name_key(data, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        config_from_dict(data)


def test_config_window_full_and_p_inf():
    cfg = config_from_dict({"plan": {"window": "full", "p": "inf"}})
    assert cfg.plan.window is None and math.isinf(cfg.plan.p)
    snap = cfg.snapshot()
    assert snap["plan"]["window"] == "full" and snap["plan"]["p"] == "inf"
    assert config_from_dict(snap).snapshot() == snap


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[plan\nrho = ")
    with pytest.raises(ConfigError, match="bad.toml"):
        load_config(bad)


def test_with_changes_revalidates():
    cfg = tiny_config()
    assert cfg.with_changes(**{"plan.rho": 0.5}).plan.rho == 0.5
    with pytest.raises(ConfigError):
        cfg.with_changes(**{"plan.p": 7})


# ---- runs


def test_run_experiment_shapes_and_determinism():
    cfg = tiny_config()
    a = harness.run_experiment(cfg)
    b = harness.run_experiment(cfg)
    assert a.deterministic_json() == b.deterministic_json()
    assert [len(r) for r in a.accuracy] == [1, 2, 3]
    assert len(a.timing["task_seconds"]) == 3
    assert len(a.allocations) == 3 and len(a.allocations[0]) == 2
    d = json.loads(a.to_json())
    assert d["schema_version"] == harness.SCHEMA_VERSION
    assert RunResult.from_dict(d).deterministic_json() == a.deterministic_json()


def test_seed_override_lands_in_snapshot():
    r = harness.run_experiment(tiny_config(), seed=7)
    assert r.seed == 7 and r.config["run"]["seed"] == 7
    again = harness.run_experiment(tiny_config(run__seed=7))
    assert again.deterministic_json() == r.deterministic_json()


def test_seeds_change_results():
    a = harness.run_experiment(tiny_config(), seed=0)
    b = harness.run_experiment(tiny_config(), seed=1)
    assert a.stream_hash != b.stream_hash


def test_basis_exhaustion_before_training(monkeypatch):
    called = []
    monkeypatch.setattr(harness, "build_model", lambda *a: called.append(1))
    with pytest.raises(BasisExhaustedError):
        harness.run_experiment(tiny_config(plan__rank=4))
    assert not called


def test_methods_share_stream():
    hashes = {harness.run_experiment(tiny_config(plan__method=m)).stream_hash for m in harness.METHODS}
    assert len(hashes) == 1


def test_random_w0_and_rotated_stream():
    cfg = tiny_config(model__w0="random", tasks__generator="rotated", tasks__angles=[0.0, 0.6, 1.2])
    r = harness.run_experiment(cfg)
    assert len(r.accuracy) == 3


def test_csv_generator(tmp_path):
    from plan_cl.tasks import gen_gaussian_clusters, write_csv_stream

    schema = write_csv_stream(gen_gaussian_clusters(2, 2, 10, 20, 3.0, 0), tmp_path / "s.csv")
    cfg = tiny_config(tasks__generator="csv", tasks__csv_path=str(tmp_path / "s.csv"),
                      tasks__label_to_task={str(k): v for k, v in schema.label_to_task.items()})
    assert len(harness.run_experiment(cfg).accuracy) == 2


def test_backbone_cache_does_not_change_results():
    harness._BACKBONES.clear()
    a = harness.run_experiment(tiny_config())
    assert harness._BACKBONES
    b = harness.run_experiment(tiny_config())
    assert a.deterministic_json() == b.deterministic_json()


# ---- writers


def test_write_unique_never_overwrites(tmp_path):
    p1 = harness.write_unique(tmp_path, "x", ".txt", "one")
    assert harness.write_unique(tmp_path, "x", ".txt", "one") == p1
    p2 = harness.write_unique(tmp_path, "x", ".txt", "two")
    assert p2 != p1 and p1.read_text() == "one" and p2.read_text() == "two"
    assert p2.name == "x-2.txt"


def test_write_result_hash_named(tmp_path):
    r = harness.run_experiment(tiny_config())
    path = harness.write_result(r, tmp_path)
    assert path.name.startswith("run-plan-") and path.name.endswith("-seed0.json")
    assert RunResult.load(path).metrics == r.metrics


def test_load_rejects_other_schema(tmp_path):
    p = tmp_path / "r.json"
    p.write_text(json.dumps({"schema_version": 99}))
    with pytest.raises(ValueError, match="schema"):
        RunResult.load(p)


# ---- sweeps


def test_dedupe_warns():
    with pytest.warns(UserWarning, match="duplicate"):
        vals = harness.dedupe_values("rho", [0.1, 0.01, 0.1])
    assert vals == [0.1, 0.01]
    with pytest.warns(UserWarning):
        assert harness.dedupe_values("S", [50, "full", "FULL"]) == [50, "full"]


def test_sweep_unknown_axis():
    with pytest.raises(ConfigError):
        harness.sweep(tiny_config(), "lr", [0.1])


def test_sweep_rho_tables(tmp_path):
    out = harness.sweep(tiny_config(), "rho", [0.1, 0.01])
    assert [s["value"] for s in out.summaries] == ["0.1", "0.01"]
    assert all(s["n_seeds"] == 2 for s in out.summaries)
    paths = harness.write_sweep(out, tmp_path)
    runs = paths["runs"].read_text().splitlines()
    assert runs[0].split(",") == harness.RUN_COLUMNS and len(runs) == 5
    summary = paths["summary"].read_text().splitlines()
    assert summary[0].split(",") == harness.SUMMARY_COLUMNS and len(summary) == 3


def test_sweep_window_reports_overlap():
    out = harness.sweep(tiny_config(), "S", [1, 50, "full"])
    st = out.stability
    assert st["reference"] == "full"
    assert set(st["mean_jaccard"]) == {"1", "50", "full"}
    assert st["mean_jaccard"]["full"] == 1.0
    assert len(st["selected"]["50"]) == 2


def test_sweep_window_reference_is_largest_without_full():
    out = harness.sweep(tiny_config(run__n_seeds=1), "S", [1, 10])
    assert out.stability["reference"] == "10"


def test_jaccard():
    assert harness.jaccard([1, 2], [2, 3]) == pytest.approx(1 / 3)
    assert harness.jaccard([], []) == 1.0


def test_parallel_matches_serial():
    jobs = [(tiny_config(), 0), (tiny_config(plan__method="inc_lora"), 1)]
    serial = harness.run_many(jobs, 1)
    parallel = harness.run_many(jobs, 2)
    assert [r.deterministic_json() for r in serial] == [r.deterministic_json() for r in parallel]
