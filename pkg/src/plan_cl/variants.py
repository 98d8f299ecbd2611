"""PLAN ablations and the Inc-LoRA baseline, all behind one dispatch table."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import nn
from .plan import BASIS_KINDS, Optimizers, PlanConfig, SequenceLog, parse_p, run_plan_sequence
from .tensor import child_seeds, make_rng

METHODS = ("plan", "inc_lora", "plan_no_selection", "plan_no_perturbation")
INC_LORA_A_STD = 0.02


@dataclass(frozen=True)
class MethodSpec:
    method: str = "plan"
    basis_kind: str = "standard"
    p: float = 2.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.basis_kind not in BASIS_KINDS:
            raise ValueError(f"unknown basis_kind {self.basis_kind!r}")
        object.__setattr__(self, "p", parse_p(self.p))


def run_plan(model, tasks, cfg: PlanConfig, seed, on_task_end=None) -> SequenceLog:
    return run_plan_sequence(model, tasks, cfg, seed, "frequency", True, on_task_end)


def run_plan_no_selection(model, tasks, cfg: PlanConfig, seed, on_task_end=None) -> SequenceLog:
    """Perturbed training, but each new task's rows are drawn at random from the free pool."""
    return run_plan_sequence(model, tasks, cfg, seed, "random", True, on_task_end)


def run_plan_no_perturbation(model, tasks, cfg: PlanConfig, seed, on_task_end=None) -> SequenceLog:
    """Frequency selection is kept (perturbations are still computed); updates are unperturbed."""
    return run_plan_sequence(model, tasks, cfg, seed, "frequency", False, on_task_end)


def run_inc_lora(
    model: nn.Mlp,
    tasks: Sequence,
    cfg: PlanConfig,
    seed,
    on_task_end: Callable[[int], None] | None = None,
) -> SequenceLog:
    """One freely trained LoRA pair per task, merged (frozen) when the task ends."""
    init_rng, train_rng = (make_rng(s) for s in child_seeds(seed, 2))
    log = SequenceLog([], [], [])
    for t, task in enumerate(tasks):
        r = cfg.rank_for(t)
        model.head.add_block(task.n_classes, init_rng, cfg.head_std)
        for layer in model.layers:
            d, k = layer.shape
            layer.attach(np.zeros((d, r)), init_rng.normal(0.0, INC_LORA_A_STD, size=(r, k)))
        opt = Optimizers(cfg.lr)
        epoch_losses = []
        for _ in range(cfg.epochs):
            total = 0.0
            for idx in nn.iterate_minibatches(len(task.train_y), cfg.batch_size, train_rng):
                logits, cache = nn.forward(model, task.train_x[idx])
                loss, dl = nn.task_cross_entropy(logits, task.train_y[idx], task.n_classes, cfg.mask_old_logits)
                grads = nn.backward(model, cache, dl)
                total += loss * len(idx)
                for i, layer in enumerate(model.layers):
                    gw = grads.weights[i]
                    b, a = layer.live_b, layer.live_a
                    grad_b = gw @ a.T
                    grad_a = b.T @ gw
                    layer.live_b = opt.step(("B", i), b, grad_b)
                    layer.live_a = opt.step(("A", i), a, grad_a)
                j = len(model.head.blocks) - 1
                dw, db = grads.head[j]
                block = model.head.blocks[j]
                model.head.set_block(j, opt.step(("head_w", j), block.weight, dw), opt.step(("head_b", j), block.bias, db))
            epoch_losses.append(total / len(task.train_y))
        for layer in model.layers:
            layer.freeze_live()
        model.head.freeze_all()
        log.allocations.append([[] for _ in model.layers])
        log.losses.append(epoch_losses)
        log.window_counts.append([{} for _ in model.layers])
        if on_task_end is not None:
            on_task_end(t)
    return log


RUNNERS = {
    "plan": run_plan,
    "inc_lora": run_inc_lora,
    "plan_no_selection": run_plan_no_selection,
    "plan_no_perturbation": run_plan_no_perturbation,
}


def run_method(method: str, model, tasks, cfg: PlanConfig, seed, on_task_end=None) -> SequenceLog:
    if method not in RUNNERS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return RUNNERS[method](model, tasks, cfg, seed, on_task_end)
