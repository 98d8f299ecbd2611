"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

Criteria 7 to 10 train on the default desk-scale protocol and take a few
minutes in total; they carry the ``slow`` marker.
"""
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from plan_cl import cli, harness, oracle, plan
from plan_cl.tensor import make_rng

ROOT = Path(__file__).resolve().parents[1]
DEFAULT = ROOT / "configs" / "default.toml"
P_VALUES = (1.0, 2.0, math.inf)


@pytest.fixture
def verdict(capsys):
    def emit(number: int, name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {number:>2}] {'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, f"criterion {number} ({name}) failed: {detail}"

    return emit


def _instances(seed: int, n: int = 200):
    rng = make_rng(seed)
    return [rng.standard_normal(tuple(rng.integers(1, 9, size=2))) for _ in range(n)]


def _fresh_rerun(cfg: harness.ExperimentConfig, seed: int) -> harness.RunResult:
    # drop memoized backbones so the rerun retrains everything from the snapshot
    harness._BACKBONES.clear()
    return harness.run_experiment(harness.config_from_dict(cfg.snapshot()), seed)


# ---------------------------------------------------------------- 1, 2: closed form


def test_criterion_01_closed_form_optimality(verdict):
    rho = 0.01
    t0 = time.perf_counter()
    worst_analytic, worst_oracle, failed = 0.0, -math.inf, 0
    for p in P_VALUES:
        for k, g in enumerate(_instances(int(p) if p != math.inf else 3)):
            rep = oracle.check_closed_form(plan.solve_epsilon, g, rho, p, seed=k)
            worst_analytic = max(worst_analytic, rep.analytic_gap)
            worst_oracle = max(worst_oracle, rep.gap)
            failed += not (rep.analytic_gap <= 1e-9 and rep.gap <= 1e-6)
    elapsed = time.perf_counter() - t0
    ok = failed == 0 and elapsed < 10
    verdict(1, "closed-form optimality", ok,
            f"600 instances, max |<eps,g> - rho||g||_q|/. = {worst_analytic:.2e}, "
            f"max oracle advantage = {worst_oracle:.2e}, {elapsed:.1f}s")


def test_criterion_02_ball_boundary(verdict):
    rho = 0.01
    worst = 0.0
    for p in P_VALUES:
        for g in _instances(int(p) if p != math.inf else 3):
            eps = plan.solve_epsilon(g, rho, p)
            worst = max(worst, abs(np.linalg.norm(eps.ravel(), p) - rho) / rho)
    zeros_ok = all(
        np.array_equal(plan.solve_epsilon(np.zeros(shape), rho, p), np.zeros(shape))
        for p in P_VALUES for shape in ((1, 1), (3, 5), (8, 8))
    )
    verdict(2, "ball boundary", worst <= 1e-9 and zeros_ok,
            f"max |‖eps‖_p - rho|/rho = {worst:.2e}, eps(0) == 0: {zeros_ok}")


# ---------------------------------------------------------------- 3, 4, 5: mechanics


def test_criterion_03_gradient_fd(verdict):
    t0 = time.perf_counter()
    report = oracle.verify_gradients(n_models=20, h=1e-5, seed=0)
    elapsed = time.perf_counter() - t0
    ok = report["max_rel_error"] <= 1e-4 and elapsed < 30
    verdict(3, "perturbed-point gradient vs finite differences", ok,
            f"20 models, max relative error {report['max_rel_error']:.2e}, {elapsed:.1f}s")


def test_criterion_04_orthogonality_disjointness(verdict):
    report = oracle.verify_allocations(seed=0)
    problems = [f"{kind}: {m}" for kind, msgs in report.items() for m in msgs]
    verdict(4, "disjoint, orthogonal allocations with exact support", not problems,
            "5-task runs on " + ", ".join(report) + (f"; {problems[:3]}" if problems else "; no violations"))


def test_criterion_05_dual_path(verdict):
    rng = make_rng(5)
    worst = 0.0
    for _ in range(50):
        d, k = (int(v) for v in rng.integers(2, 33, size=2))
        reg = plan.BasisRegistry.standard(k)
        taken = rng.choice(k, size=int(rng.integers(0, k)), replace=False)
        if len(taken):
            reg.allocate(taken)
        grad_w = rng.standard_normal((d, k))
        g_fast = plan.gather_gradient(grad_w, reg, fast=True)
        g_slow = plan.gather_gradient(grad_w, reg, fast=False)
        eps = plan.solve_epsilon(g_fast, 0.01, 2)
        w_fast = plan.scatter_perturbation(eps, reg, fast=True)
        w_slow = plan.scatter_perturbation(eps, reg, fast=False)
        worst = max(worst, np.max(np.abs(g_fast - g_slow)), np.max(np.abs(w_fast - w_slow)))
    verdict(5, "gather/scatter vs explicit M_t products", worst <= 1e-12,
            f"50 instances, max abs difference {worst:.2e}")


# ---------------------------------------------------------------- 6: metrics


def _naive_acc(rows):
    last = rows[-1]
    total = 0.0
    for v in last:
        total += v
    return total / len(last)


def _naive_aaa(rows):
    total = 0.0
    for i, row in enumerate(rows):
        s = 0.0
        for j in range(i + 1):
            s += row[j]
        total += s / (i + 1)
    return total / len(rows)


def test_criterion_06_metrics(verdict):
    examples = [
        (harness.compute_acc([[1.0], [1.0, 1.0]]), 1.0),
        (harness.compute_acc([[0.9], [0.8, 0.6]]), 0.7),
        (harness.compute_acc([[0.5]]), 0.5),
        (harness.compute_aaa([[1.0], [1.0, 1.0]]), 1.0),
        (harness.compute_aaa([[0.9], [0.8, 0.6]]), 0.8),
        (harness.compute_aaa([[0.37]]), 0.37),
    ]
    worst_example = max(abs(got - want) for got, want in examples)
    rng = make_rng(6)
    worst_random = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 11))
        rows = [list(rng.random(i + 1)) for i in range(n)]
        worst_random = max(worst_random, abs(harness.compute_acc(rows) - _naive_acc(rows)),
                           abs(harness.compute_aaa(rows) - _naive_aaa(rows)))
    verdict(6, "Acc and AAA", worst_example <= 1e-12 and worst_random <= 1e-12,
            f"worked examples max error {worst_example:.1e}, 100 random matrices max error {worst_random:.1e}")


# ---------------------------------------------------------------- 7-10: desk-scale protocol


@pytest.mark.slow
def test_criterion_07_plan_vs_inc_lora(verdict, tmp_path):
    cfg = harness.load_config(DEFAULT)
    t0 = time.perf_counter()
    out = harness.sweep(cfg, "method", ["plan", "inc_lora", "plan_no_selection", "plan_no_perturbation"])
    elapsed = time.perf_counter() - t0
    harness.write_sweep(out, tmp_path)
    means = {s["value"]: s for s in out.summaries}
    table = "; ".join(f"{k} Acc {100 * v['acc_mean']:.2f}±{100 * v['acc_std']:.2f}"
                      f" AAA {100 * v['aaa_mean']:.2f}" for k, v in means.items())
    ok = means["plan"]["acc_mean"] >= means["inc_lora"]["acc_mean"] and elapsed < 600
    verdict(7, "PLAN >= Inc-LoRA mean final Acc (5 seeds)", ok, f"{table}; {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_08_rho_sweep(verdict, tmp_path):
    cfg = harness.load_config(DEFAULT)
    out = harness.sweep(cfg, "rho", [0.1, 0.01, 0.001])
    paths = harness.write_sweep(out, tmp_path)
    complete = all(len(rs) == 5 for rs in out.results.values()) and len(out.summaries) == 3
    mismatched = []
    for label, rs in out.results.items():
        again = _fresh_rerun(harness.config_from_dict(rs[0].config), rs[0].seed)
        if again.deterministic_json() != rs[0].deterministic_json():
            mismatched.append(label)
    summary_ok = paths["summary"].read_text().count("\n") == 4
    means = ", ".join(f"rho={s['value']}: Acc {100 * s['acc_mean']:.2f}" for s in out.summaries)
    verdict(8, "rho sweep completes and is deterministic", complete and summary_ok and not mismatched,
            f"{means}; reruns differing: {mismatched or 'none'}")


@pytest.mark.slow
def test_criterion_09_window_stability(verdict, tmp_path):
    cfg = harness.load_config(DEFAULT)
    out = harness.sweep(cfg, "S", [1, 10, 50, "full"])
    harness.write_sweep(out, tmp_path)
    stab = out.stability
    reported = stab is not None and stab["reference"] == "full" and "50" in stab["mean_jaccard"]
    mismatched = []
    for label in ("50", "full"):
        r0 = out.results[label][0]
        again = _fresh_rerun(harness.config_from_dict(r0.config), r0.seed)
        if again.deterministic_json() != r0.deterministic_json():
            mismatched.append(label)
    again = harness.s_stability(out.results)
    overlaps = ", ".join(f"S={k}: {v:.3f}" for k, v in stab["mean_jaccard"].items())
    verdict(9, "task-2 selection overlap vs S=full", reported and not mismatched and again == stab,
            f"{overlaps}; reruns differing: {mismatched or 'none'}")


@pytest.mark.slow
def test_criterion_10_reproducibility(verdict, tmp_path):
    # two independent processes running the same snapshot through the CLI
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        subprocess.run([sys.executable, "-m", "plan_cl.cli", "run", "--config", str(DEFAULT), "--seed", "3",
                        "--out", str(d)], check=True, capture_output=True)
        outs.append(next(d.glob("run-*.json")))
    ra, rb = (harness.RunResult.load(p) for p in outs)
    json_same = ra.deterministic_json() == rb.deterministic_json() and outs[0].name == outs[1].name

    plots = []
    for name in ("a", "b"):
        d = tmp_path / f"plot-{name}"
        assert cli.main(["plot", str(outs[0]), "--out", str(d)]) == 0
        plots.append({p.name: p.read_bytes() for p in d.iterdir()})
    plots_same = plots[0] == plots[1] and len(plots[0]) == 4
    verdict(10, "identical snapshot gives identical results and plots", json_same and plots_same,
            f"result JSON identical: {json_same}, {len(plots[0])} plot files identical: {plots_same}")
