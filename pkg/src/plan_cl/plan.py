"""Proactive low-rank allocation: basis bookkeeping, worst-case perturbation, selection.

Each adapter-carrying layer owns a :class:`BasisRegistry` over its input
dimension ``k``.  A task's adapter is ``B_t A_t`` with ``A_t`` fixed to
registry rows; only ``B_t`` is trained.  Every step perturbs the weight
along the still-unallocated rows (``M_t``) by the closed-form maximizer of
the linearized loss, takes the gradient for ``B_t`` at the perturbed point,
and logs which unallocated rows were perturbed least.  Those counts decide
the next task's rows.

Indices are 0-based registry row indices throughout.
"""
from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np

from . import nn
from .tensor import ShapeError, as_matrix, child_seeds, complete_basis, gram_schmidt, make_rng, svd_small

BASIS_KINDS = ("standard", "random_orthogonal", "gradient_svd")


class BasisExhaustedError(RuntimeError):
    pass


def parse_p(p) -> float:
    """Normalize a norm order; accepts 1, 2, inf, "inf", "infinity"."""
    if isinstance(p, str):
        if p.strip().lower() in ("inf", "infinity", "∞"):
            return math.inf
        p = float(p)
    p = float(p)
    if p not in (1.0, 2.0, math.inf):
        raise ValueError(f"norm order must be one of 1, 2, inf; got {p}")
    return p


def p_label(p) -> str:
    p = parse_p(p)
    return "inf" if math.isinf(p) else str(int(p))


class BasisRegistry:
    """Pool of orthonormal basis rows and which task owns which row."""

    def __init__(self, matrix: np.ndarray, kind: str = "standard"):
        if kind not in BASIS_KINDS:
            raise ValueError(f"unknown basis kind {kind!r}; expected one of {BASIS_KINDS}")
        matrix = as_matrix(matrix)
        if matrix.shape[0] != matrix.shape[1]:
            raise ShapeError(f"basis matrix must be square, got {matrix.shape}")
        self.kind = kind
        self.matrix = matrix
        self.matrix.setflags(write=False)
        self.k = matrix.shape[0]
        self.available: list[int] = list(range(self.k))
        self.allocations: list[list[int]] = []

    @classmethod
    def standard(cls, k: int) -> "BasisRegistry":
        return cls(np.eye(k), "standard")

    @classmethod
    def random_orthogonal(cls, k: int, rng: np.random.Generator) -> "BasisRegistry":
        return cls(gram_schmidt(rng.standard_normal((k, k))), "random_orthogonal")

    @classmethod
    def from_gradient(cls, grad_w: np.ndarray) -> "BasisRegistry":
        """Right singular vectors of a (d x k) gradient, strongest first."""
        _, _, v = svd_small(grad_w)
        return cls(complete_basis(v.T), "gradient_svd")

    @property
    def fast(self) -> bool:
        return self.kind == "standard"

    def m_matrix(self) -> np.ndarray:
        """Rows not yet owned by any task, stacked in index order."""
        return self.matrix[self.available]

    def rows(self, indices: Sequence[int]) -> np.ndarray:
        return self.matrix[list(indices)]

    def allocate(self, indices: Sequence[int]) -> list[int]:
        indices = sorted(int(i) for i in indices)
        if len(set(indices)) != len(indices):
            raise ValueError(f"duplicate indices in allocation {indices}")
        avail = set(self.available)
        missing = [i for i in indices if i not in avail]
        if missing:
            raise BasisExhaustedError(f"indices {missing} are not available for allocation")
        self.available = [i for i in self.available if i not in set(indices)]
        self.allocations.append(indices)
        return indices

    def check(self, tol: float = 1e-10) -> None:
        owned = [i for alloc in self.allocations for i in alloc]
        if len(owned) != len(set(owned)) or set(owned) & set(self.available):
            raise AssertionError("allocations overlap")
        if set(owned) | set(self.available) != set(range(self.k)):
            raise AssertionError("allocations and available rows do not cover the basis")
        gram = self.matrix @ self.matrix.T
        if np.max(np.abs(gram - np.eye(self.k))) > tol:
            raise AssertionError("basis rows are not orthonormal")


def allocate_first(reg: BasisRegistry, r1: int) -> list[int]:
    if reg.allocations:
        raise RuntimeError("allocate_first called on a registry that already has allocations")
    if r1 < 1 or r1 > reg.k:
        raise BasisExhaustedError(f"cannot allocate {r1} of {reg.k} basis rows")
    return reg.allocate(range(r1))


def gather_gradient(grad_w: np.ndarray, reg: BasisRegistry, fast: bool | None = None) -> np.ndarray:
    """``grad_w @ M_t.T``; a column gather when the basis is the identity."""
    if grad_w.shape[1] != reg.k:
        raise ShapeError(f"gradient has {grad_w.shape[1]} columns, basis dimension is {reg.k}")
    if not reg.available:
        raise BasisExhaustedError("no unallocated basis rows remain")
    if reg.fast if fast is None else fast:
        if not reg.fast:
            raise ValueError("the gather fast path requires a standard basis")
        return grad_w[:, reg.available]
    return grad_w @ reg.m_matrix().T


def scatter_perturbation(eps: np.ndarray, reg: BasisRegistry, fast: bool | None = None) -> np.ndarray:
    """Map a perturbation in M_t coordinates back to weight space: ``eps @ M_t``."""
    if eps.shape[1] != len(reg.available):
        raise ShapeError(f"perturbation has {eps.shape[1]} columns, {len(reg.available)} rows are available")
    if reg.fast if fast is None else fast:
        if not reg.fast:
            raise ValueError("the scatter fast path requires a standard basis")
        out = np.zeros((eps.shape[0], reg.k))
        out[:, reg.available] = eps
        return out
    return eps @ reg.m_matrix()


def solve_epsilon(g: np.ndarray, rho: float, p) -> np.ndarray:
    """Maximizer of ``<eps, g>`` over ``||eps||_p <= rho`` (entries flattened).

    For 1 < p < inf this is ``rho * |g|^(q-1) * sign(g) / ||g||_q^(q/p)``
    with ``1/p + 1/q = 1``; p = inf gives ``rho * sign(g)``; p = 1 puts the
    whole budget on the first entry of largest magnitude.
    """
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    p = parse_p(p)
    g = np.asarray(g, dtype=np.float64)
    scale = float(np.max(np.abs(g))) if g.size else 0.0
    if scale == 0.0:
        return np.zeros_like(g)
    if math.isinf(p):
        return rho * np.sign(g)
    if p == 1.0:
        eps = np.zeros_like(g)
        flat = int(np.argmax(np.abs(g)))
        eps.flat[flat] = rho * np.sign(g.flat[flat])
        return eps
    q = p / (p - 1.0)
    u = np.abs(g) / scale
    denom = np.sum(u**q) ** (1.0 / p)
    return rho * np.sign(g) * u ** (q - 1.0) / denom


def column_norms(eps: np.ndarray) -> np.ndarray:
    """Column 2-norms, scaled so tiny perturbations do not underflow to ties."""
    scale = float(np.max(np.abs(eps))) if eps.size else 0.0
    if scale == 0.0:
        return np.zeros(eps.shape[1])
    return scale * np.sqrt(np.sum((eps / scale) ** 2, axis=0))


class PerturbationTracker:
    """Sliding window of per-step "least perturbed" index sets.

    ``window=None`` keeps every step (an unbounded window).
    """

    def __init__(self, window: int | None, r_next: int):
        if window is not None and window < 1:
            raise ValueError(f"window must be >= 1 or None, got {window}")
        self.window = window
        self.r_next = r_next
        self.buffer: deque[tuple[int, ...]] = deque(maxlen=window)
        self.steps = 0

    def push(self, winners: Sequence[int]) -> None:
        self.buffer.append(tuple(sorted(int(i) for i in winners)))
        self.steps += 1

    def frequencies(self) -> Counter:
        return Counter(i for w in self.buffer for i in w)

    def reset(self, r_next: int | None = None) -> None:
        self.buffer.clear()
        self.steps = 0
        if r_next is not None:
            self.r_next = r_next

    def __len__(self) -> int:
        return len(self.buffer)


def record_winners(tracker: PerturbationTracker, eps: np.ndarray, reg: BasisRegistry) -> tuple[int, ...]:
    """Push the ``r_next`` available rows whose perturbation columns are smallest."""
    if eps.shape[1] != len(reg.available):
        raise ShapeError(f"perturbation has {eps.shape[1]} columns, {len(reg.available)} rows are available")
    norms = column_norms(eps)
    idx = np.asarray(reg.available)
    order = np.lexsort((idx, norms))
    winners = tuple(int(i) for i in np.sort(idx[order[: tracker.r_next]]))
    tracker.push(winners)
    return winners


def rank_by_frequency(tracker: PerturbationTracker, reg: BasisRegistry) -> list[int]:
    """Available indices by descending window frequency, ties to the lowest index."""
    h = tracker.frequencies()
    return sorted(reg.available, key=lambda i: (-h.get(i, 0), i))


def select_next(tracker: PerturbationTracker, reg: BasisRegistry, r_next: int) -> list[int]:
    if len(tracker) == 0:
        raise RuntimeError("cannot select the next basis rows from an empty tracker")
    if len(reg.available) < r_next:
        raise BasisExhaustedError(f"{r_next} rows requested but only {len(reg.available)} remain")
    return reg.allocate(rank_by_frequency(tracker, reg)[:r_next])


@dataclass
class PlanConfig:
    rho: float = 0.01
    p: float = 2.0
    rank: int = 4
    ranks: list[int] | None = None  # per-task override of ``rank``
    window: int | None = 50  # None = every step of the task
    lr: float = 1e-3
    epochs: int = 5
    batch_size: int = 32
    seed: int = 0
    basis_kind: str = "standard"
    cumulative_frequency: bool = False
    head_std: float = 0.01
    mask_old_logits: bool = True

    def __post_init__(self):
        self.p = parse_p(self.p)

    def rank_for(self, t: int) -> int:
        return self.ranks[t] if self.ranks else self.rank

    def validate(self, n_tasks: int | None = None, k: int | None = None) -> None:
        if not self.rho > 0:
            raise ValueError(f"rho must be > 0, got {self.rho}")
        if self.basis_kind not in BASIS_KINDS:
            raise ValueError(f"unknown basis_kind {self.basis_kind!r}")
        if self.window is not None and self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if n_tasks is not None:
            ranks = [self.rank_for(t) for t in range(n_tasks)]
            if min(ranks) < 1:
                raise ValueError("every task rank must be >= 1")
            if k is not None and sum(ranks) > k:
                raise BasisExhaustedError(f"ranks {ranks} need {sum(ranks)} basis rows but only {k} exist")

    def snapshot(self) -> dict:
        d = asdict(self)
        d["p"] = p_label(self.p)
        return d


@dataclass
class StepOutcome:
    loss: float
    perturbed_loss: float
    winners: list[tuple[int, ...] | None]


@dataclass
class Optimizers:
    lr: float
    states: dict = field(default_factory=dict)

    def step(self, key, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return nn.adam_step(self.states.setdefault(key, nn.AdamState(lr=self.lr)), param, grad)


def perturbed_grad_step(
    model: nn.Mlp,
    x: np.ndarray,
    y: np.ndarray,
    registries: Sequence[BasisRegistry],
    trackers: Sequence[PerturbationTracker],
    cfg: PlanConfig,
    opt: Optimizers,
    perturb_update: bool = True,
) -> StepOutcome:
    """One training step on a mini-batch.

    The gradient at ``W_t`` gives each layer's perturbation ``eps @ M_t``
    (held constant); ``B_t`` and the live head block then move along the
    gradient taken at the perturbed weights.  With ``perturb_update=False``
    the perturbation is still computed and logged but the update uses the
    unperturbed gradient.  Layers with no unallocated rows are not perturbed.
    """
    n_live = model.head.blocks[-1].bias.shape[0]
    logits, cache = nn.forward(model, x)
    loss, dl = nn.task_cross_entropy(logits, y, n_live, cfg.mask_old_logits)
    grads = nn.backward(model, cache, dl)

    deltas: list[np.ndarray | None] = []
    winners: list[tuple[int, ...] | None] = []
    for layer_grad, reg, tracker in zip(grads.weights, registries, trackers):
        if not reg.available:
            deltas.append(None)
            winners.append(None)
            continue
        g = gather_gradient(layer_grad, reg)
        eps = solve_epsilon(g, cfg.rho, cfg.p)
        deltas.append(scatter_perturbation(eps, reg))
        winners.append(record_winners(tracker, eps, reg))

    perturbed_loss = loss
    if perturb_update and any(d is not None for d in deltas):
        logits_p, cache_p = nn.forward(model, x, deltas)
        perturbed_loss, dl_p = nn.task_cross_entropy(logits_p, y, n_live, cfg.mask_old_logits)
        grads = nn.backward(model, cache_p, dl_p)

    for i, layer in enumerate(model.layers):
        grad_b = grads.weights[i] @ layer.live_a.T
        layer.live_b = opt.step(("B", i), layer.live_b, grad_b)
    _step_head(model, grads, opt)
    return StepOutcome(loss, perturbed_loss, winners)


def _step_head(model: nn.Mlp, grads: nn.Gradients, opt: Optimizers) -> None:
    j = len(model.head.blocks) - 1
    block = model.head.blocks[j]
    dw, db = grads.head[j]
    model.head.set_block(j, opt.step(("head_w", j), block.weight, dw), opt.step(("head_b", j), block.bias, db))


@dataclass
class TaskSummary:
    epoch_losses: list[float]
    steps: int
    window_counts: list[dict[int, int]]


def train_task(
    model: nn.Mlp,
    x: np.ndarray,
    y: np.ndarray,
    registries: Sequence[BasisRegistry],
    trackers: Sequence[PerturbationTracker],
    cfg: PlanConfig,
    rng: np.random.Generator,
    perturb_update: bool = True,
) -> TaskSummary:
    """Run ``cfg.epochs`` epochs of perturbed steps, then freeze the live adapters and head."""
    for layer in model.layers:
        if layer.live_a is None:
            raise RuntimeError("train_task needs a live adapter on every layer")
    opt = Optimizers(cfg.lr)
    epoch_losses = []
    steps = 0
    for _ in range(cfg.epochs):
        total = 0.0
        for idx in nn.iterate_minibatches(len(y), cfg.batch_size, rng):
            out = perturbed_grad_step(model, x[idx], y[idx], registries, trackers, cfg, opt, perturb_update)
            total += out.loss * len(idx)
            steps += 1
        epoch_losses.append(total / len(y))
    for layer in model.layers:
        layer.freeze_live()
    model.head.freeze_all()
    counts = [dict(sorted(t.frequencies().items())) for t in trackers]
    return TaskSummary(epoch_losses, steps, counts)


def build_registries(
    model: nn.Mlp, cfg: PlanConfig, rng: np.random.Generator, first_task: tuple[np.ndarray, np.ndarray] | None = None
) -> list[BasisRegistry]:
    """One registry per layer.  ``gradient_svd`` needs the first task's data and a head block."""
    regs = []
    if cfg.basis_kind == "gradient_svd":
        if first_task is None:
            raise ValueError("gradient_svd basis needs the first task's training data")
        x, y = first_task
        logits, cache = nn.forward(model, x)
        _, dl = nn.task_cross_entropy(logits, y, model.head.blocks[-1].bias.shape[0], cfg.mask_old_logits)
        grads = nn.backward(model, cache, dl)
        return [BasisRegistry.from_gradient(g) for g in grads.weights]
    for layer in model.layers:
        k = layer.shape[1]
        if cfg.basis_kind == "standard":
            regs.append(BasisRegistry.standard(k))
        else:
            regs.append(BasisRegistry.random_orthogonal(k, rng))
    return regs


@dataclass
class SequenceLog:
    allocations: list[list[list[int]]]  # [task][layer] -> indices
    losses: list[list[float]]
    window_counts: list[list[dict[int, int]]]


def run_plan_sequence(
    model: nn.Mlp,
    tasks: Sequence,
    cfg: PlanConfig,
    seed,
    selection: str = "frequency",
    perturb_update: bool = True,
    on_task_end: Callable[[int], None] | None = None,
) -> SequenceLog:
    """Train ``tasks`` in order with PLAN-style adapters.

    ``selection`` is ``"frequency"`` (least-perturbed rows) or ``"random"``
    (uniform draw from the unallocated rows).  ``tasks`` items need
    ``train_x``, ``train_y`` and ``n_classes``.  ``seed`` is an int or a
    ``SeedSequence``; head init, random selection and batch order each get
    their own child stream.
    """
    if selection not in ("frequency", "random"):
        raise ValueError(f"unknown selection rule {selection!r}")
    n_tasks = len(tasks)
    cfg.validate(n_tasks, min(l.shape[1] for l in model.layers))
    init_rng, select_rng, train_rng = (make_rng(s) for s in child_seeds(seed, 3))
    log = SequenceLog([], [], [])
    registries: list[BasisRegistry] | None = None
    trackers = [PerturbationTracker(cfg.window, cfg.rank_for(0)) for _ in model.layers]
    for t, task in enumerate(tasks):
        model.head.add_block(task.n_classes, init_rng, cfg.head_std)
        if registries is None:
            registries = build_registries(model, cfg, init_rng, (task.train_x, task.train_y))
            alloc = [allocate_first(reg, cfg.rank_for(0)) for reg in registries]
        elif selection == "random":
            alloc = [
                reg.allocate(select_rng.choice(reg.available, size=cfg.rank_for(t), replace=False))
                for reg in registries
            ]
        else:
            alloc = [select_next(tr, reg, cfg.rank_for(t)) for tr, reg in zip(trackers, registries)]
        r_next = cfg.rank_for(t + 1) if t + 1 < n_tasks else cfg.rank_for(t)
        for tr in trackers:
            if cfg.cumulative_frequency:
                tr.r_next = r_next
            else:
                tr.reset(r_next)
        for layer, reg, idx in zip(model.layers, registries, alloc):
            layer.attach(np.zeros((layer.shape[0], len(idx))), reg.rows(idx))
        summary = train_task(model, task.train_x, task.train_y, registries, trackers, cfg, train_rng, perturb_update)
        log.allocations.append(alloc)
        log.losses.append(summary.epoch_losses)
        log.window_counts.append(summary.window_counts)
        if on_task_end is not None:
            on_task_end(t)
    return log
