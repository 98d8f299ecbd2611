"""Brute-force verifiers for the closed-form perturbation and for analytic gradients."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels, nn
from .plan import p_label, parse_p
from .tensor import make_rng

ASCENT_ITERS = 500
ASCENT_RESTARTS = 8


def _kernel_p(p: float) -> int:
    return kernels.P_INF if math.isinf(p) else int(p)


def dual_order(p: float) -> float:
    p = parse_p(p)
    if p == 1.0:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def dual_norm_value(g: np.ndarray, rho: float, p) -> float:
    """``rho * ||g||_q``: the maximum of ``<eps, g>`` over the l_p ball (Hölder)."""
    flat = np.asarray(g, dtype=np.float64).ravel()
    return rho * float(np.linalg.norm(flat, dual_order(p))) if flat.size else 0.0


def _equality_point(g: np.ndarray, rho: float, p: float) -> np.ndarray:
    # Point attaining Hölder's bound; built directly from the duality argument.
    flat = g.ravel()
    if not np.any(flat):
        return np.zeros_like(flat)
    if math.isinf(p):
        return rho * np.sign(flat)
    if p == 2.0:
        return rho * flat / np.linalg.norm(flat)
    out = np.zeros_like(flat)
    k = int(np.argmax(np.abs(flat)))
    out[k] = rho * math.copysign(1.0, flat[k])
    return out


def ball_max_oracle(
    g: np.ndarray,
    rho: float,
    p,
    iters: int = ASCENT_ITERS,
    restarts: int = ASCENT_RESTARTS,
    seed: int = 0,
    return_parts: bool = False,
):
    """Maximize ``<eps, g>`` over ``||eps||_p <= rho`` by projected ascent with restarts.

    Restart 0 starts at the origin, the rest at random points inside the
    ball; the step is ``rho / 10``.  The Hölder equality point is also
    evaluated, so the returned value is never below the analytic optimum by
    more than rounding.  With ``return_parts`` the ascent-only value and the
    analytic value are returned as well.
    """
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    p = parse_p(p)
    g = np.asarray(g, dtype=np.float64)
    flat = g.ravel()
    n = flat.size
    rng = make_rng(seed)
    starts = np.zeros((max(restarts, 1), n))
    if restarts > 1:
        raw = rng.standard_normal((restarts - 1, n))
        norms = np.linalg.norm(raw, ord=p, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        starts[1:] = raw / norms * rho * rng.uniform(0.0, 1.0, (restarts - 1, 1))
    eps, ascent_value = kernels.ball_ascent(flat, float(rho), _kernel_p(p), starts, int(iters), rho / 10.0)
    candidate = _equality_point(flat, rho, p)
    cand_value = float(candidate @ flat)
    best, value = (candidate, cand_value) if cand_value > ascent_value else (eps, ascent_value)
    best = best.reshape(g.shape)
    if return_parts:
        return best, value, ascent_value, dual_norm_value(g, rho, p)
    return best, value


@dataclass
class OracleReport:
    instance: dict
    closed_form_value: float
    oracle_value: float
    ascent_value: float
    analytic_value: float
    gap: float
    analytic_gap: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def relative_gap(oracle_value: float, closed_value: float) -> float:
    return (oracle_value - closed_value) / max(abs(oracle_value), 1e-300)


def check_closed_form(
    solver: Callable[[np.ndarray, float, float], np.ndarray],
    g: np.ndarray,
    rho: float,
    p,
    tol: float = 1e-6,
    analytic_tol: float = 1e-9,
    seed: int = 0,
    instance: dict | None = None,
) -> OracleReport:
    """Compare ``solver(g, rho, p)`` against the oracle and the analytic optimum."""
    p = parse_p(p)
    eps_hat = np.asarray(solver(g, rho, p), dtype=np.float64)
    closed = float(np.sum(eps_hat * g))
    _, value, ascent, analytic = ball_max_oracle(g, rho, p, seed=seed, return_parts=True)
    gap = relative_gap(value, closed)
    analytic_gap = abs(analytic - closed) / max(abs(analytic), 1e-300) if analytic != 0 else abs(closed)
    inside = float(np.linalg.norm(eps_hat.ravel(), p)) <= rho * (1 + 1e-9) if eps_hat.size else True
    desc = {"shape": list(g.shape), "rho": rho, "p": p_label(p), **(instance or {})}
    return OracleReport(desc, closed, value, ascent, analytic, gap, analytic_gap,
                        bool(gap <= tol and analytic_gap <= analytic_tol and inside))


# ---------------------------------------------------------------- finite differences


def _param_ref(model: nn.Mlp, which: tuple):
    kind, i = which
    if kind == "B":
        layer = model.layers[i]
        return lambda: layer.live_b, lambda v: setattr(layer, "live_b", v)
    if kind == "A":
        layer = model.layers[i]
        return lambda: layer.live_a, lambda v: setattr(layer, "live_a", v)
    if kind == "head_w":
        blk = model.head.blocks[i]
        return lambda: blk.weight, lambda v: setattr(blk, "weight", v)
    raise ValueError(f"unknown parameter selector {which!r}")


def analytic_gradient(model: nn.Mlp, x, y, which: tuple, loss, deltas=None) -> np.ndarray:
    logits, cache = nn.forward(model, x, deltas)
    _, dl = loss(logits, y)
    grads = nn.backward(model, cache, dl)
    kind, i = which
    if kind == "B":
        return grads.weights[i] @ model.layers[i].live_a.T
    if kind == "A":
        return model.layers[i].live_b.T @ grads.weights[i]
    if kind == "head_w":
        return grads.head[i][0]
    raise ValueError(f"unknown parameter selector {which!r}")


def fd_gradient_check(
    model: nn.Mlp,
    batch: tuple[np.ndarray, np.ndarray],
    which: tuple = ("B", 0),
    h: float = 1e-5,
    loss=nn.cross_entropy,
    perturbation: Sequence[np.ndarray | None] | None = None,
    mask: float = 1e-8,
) -> float:
    """Max relative error between the analytic gradient and central differences.

    ``which`` selects ``("B", layer)``, ``("A", layer)`` or ``("head_w", block)``.
    ``perturbation`` is a fixed list of per-layer weight offsets, so the check
    covers gradients taken at a perturbed point.  Entries whose analytic
    gradient is at most ``mask`` in magnitude are skipped.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step h must lie in [1e-7, 1e-3], got {h}")
    x, y = batch
    get, put = _param_ref(model, which)
    analytic = analytic_gradient(model, x, y, which, loss, perturbation)
    base = get().copy()
    numeric = np.zeros_like(base)
    try:
        for idx in np.ndindex(base.shape):
            vals = []
            for sign in (1.0, -1.0):
                trial = base.copy()
                trial[idx] += sign * h
                put(trial)
                vals.append(loss(nn.forward(model, x, perturbation)[0], y)[0])
            numeric[idx] = (vals[0] - vals[1]) / (2 * h)
    finally:
        put(base)
    keep = np.abs(analytic) > mask
    if not np.any(keep):
        return 0.0
    err = np.abs(analytic[keep] - numeric[keep]) / np.maximum(np.abs(analytic[keep]), np.abs(numeric[keep]))
    return float(np.max(err))


# ---------------------------------------------------------------- allocation invariants


def allocation_invariants(model: nn.Mlp, allocations: Sequence[Sequence[Sequence[int]]], basis_kind: str,
                          tol: float = 1e-10) -> list[str]:
    """Check the frozen adapters of a finished run; returns a list of violations.

    ``allocations[t][layer]`` are the registry rows given to task ``t``.
    Rows must be pairwise disjoint, ``A_i A_j^T`` must vanish (exactly for
    the standard basis) and, for the standard basis, the nonzero columns of
    each ``B_t A_t`` must be exactly task ``t``'s rows.
    """
    failures = []
    exact = basis_kind == "standard"
    for li, layer in enumerate(model.layers):
        sets = [set(int(i) for i in alloc[li]) for alloc in allocations]
        for a in range(len(sets)):
            for b in range(a + 1, len(sets)):
                if sets[a] & sets[b]:
                    failures.append(f"layer {li}: tasks {a} and {b} share rows {sorted(sets[a] & sets[b])}")
        adapters = layer.frozen
        for a in range(len(adapters)):
            for b in range(a + 1, len(adapters)):
                cross = np.max(np.abs(adapters[a][1] @ adapters[b][1].T))
                if (cross != 0.0) if exact else (cross > tol):
                    failures.append(f"layer {li}: A_{a} A_{b}^T has max entry {cross:.3e}")
        if exact:
            for t, (bm, am) in enumerate(adapters):
                support = set(np.flatnonzero(np.any(bm @ am != 0.0, axis=0)).tolist())
                if t < len(sets) and support != sets[t]:
                    failures.append(f"layer {li}: task {t} update touches columns {sorted(support)}, owns {sorted(sets[t])}")
    return failures


# ---------------------------------------------------------------- verification suite


def _random_instances(rng: np.random.Generator, n: int, max_dim: int = 8) -> list[np.ndarray]:
    return [rng.standard_normal(tuple(rng.integers(1, max_dim + 1, size=2))) for _ in range(n)]


def verify_closed_form(n_instances: int = 200, rho: float = 0.01, seed: int = 0) -> dict:
    """Closed-form perturbation vs oracle for every supported p, with per-p gap statistics."""
    from . import plan as plan_mod

    rng = make_rng(seed)
    out = {}
    for p in (1.0, 2.0, math.inf):
        reports = []
        for k, g in enumerate(_random_instances(rng, n_instances)):
            reports.append(check_closed_form(plan_mod.solve_epsilon, g, rho, p, seed=k, instance={"index": k}))
        zero = np.asarray(plan_mod.solve_epsilon(np.zeros((3, 3)), rho, p))
        boundary = [
            abs(float(np.linalg.norm(np.asarray(plan_mod.solve_epsilon(g, rho, p)).ravel(), p)) - rho) / rho
            for g in _random_instances(make_rng(seed + 1), 20)
        ]
        gaps = [r.gap for r in reports]
        out[p_label(p)] = {
            "instances": len(reports),
            "failed": [r.to_dict() for r in reports if not r.passed],
            "max_gap": max(gaps),
            "mean_gap": float(np.mean(gaps)),
            "max_analytic_gap": max(r.analytic_gap for r in reports),
            "max_boundary_error": max(boundary),
            "zero_input_ok": bool(zero.shape == (3, 3) and not np.any(zero)),
        }
    return out


def _small_model(rng: np.random.Generator, dims: Sequence[int], n_classes: int) -> nn.Mlp:
    model = nn.Mlp.build(list(dims), rng)
    model.head.add_block(n_classes, rng, std=0.5)
    for layer in model.layers:
        d, k = layer.shape
        r = int(rng.integers(1, min(4, k) + 1))
        a = np.eye(k)[np.sort(rng.choice(k, size=r, replace=False))]
        layer.attach(rng.normal(0.0, 0.3, size=(d, r)), a)
    return model


def verify_gradients(n_models: int = 20, h: float = 1e-5, rho: float = 0.05, seed: int = 0) -> dict:
    """Finite-difference check of the B gradient at the perturbed point on small random models."""
    from . import plan as plan_mod

    rng = make_rng(seed)
    errors = []
    for _ in range(n_models):
        k, d1, d2 = (int(v) for v in rng.integers(2, 17, size=3))
        c = int(rng.integers(2, 5))
        n = int(rng.integers(2, 9))
        model = _small_model(rng, [k, d1, d2], c)
        x = rng.standard_normal((n, k))
        y = rng.integers(0, c, size=n)
        logits, cache = nn.forward(model, x)
        _, dl = nn.cross_entropy(logits, y)
        grads = nn.backward(model, cache, dl)
        deltas = []
        for layer, gw in zip(model.layers, grads.weights):
            free = [i for i in range(layer.shape[1]) if not np.any(layer.live_a[:, i])]
            m = np.eye(layer.shape[1])[free]
            eps = plan_mod.solve_epsilon(gw @ m.T, rho, 2)
            deltas.append(eps @ m)
        for li in range(len(model.layers)):
            errors.append(fd_gradient_check(model, (x, y), ("B", li), h, nn.cross_entropy, deltas))
    return {"models": n_models, "h": h, "max_rel_error": max(errors), "errors": errors}


def verify_allocations(seed: int = 0) -> dict:
    """Run a short 5-task sequence per basis kind and check disjointness, orthogonality and support."""
    from . import plan as plan_mod
    from .tasks import gen_gaussian_clusters

    out = {}
    stream = gen_gaussian_clusters(5, 2, 12, 20, 3.0, seed)
    for kind in plan_mod.BASIS_KINDS:
        model = nn.Mlp.build([12, 16], make_rng(seed))
        cfg = plan_mod.PlanConfig(rank=2, epochs=1, batch_size=8, basis_kind=kind, window=5)
        seq = plan_mod.run_plan_sequence(model, stream.tasks, cfg, seed)
        out[kind] = allocation_invariants(model, seq.allocations, kind)
    return out


def run_verification(n_instances: int = 200, n_models: int = 20, seed: int = 0) -> tuple[dict, list[str]]:
    """Whole suite; returns the JSON-ready report and a list of failure messages."""
    failures: list[str] = []
    closed = verify_closed_form(n_instances, seed=seed)
    for p, stats in closed.items():
        if stats["failed"]:
            failures.append(f"closed_form_optimality[p={p}]: {len(stats['failed'])} of {stats['instances']} instances failed")
        if stats["max_boundary_error"] > 1e-9:
            failures.append(f"ball_boundary[p={p}]: |‖eps‖_p - rho|/rho = {stats['max_boundary_error']:.3e}")
        if not stats["zero_input_ok"]:
            failures.append(f"zero_gradient[p={p}]: nonzero perturbation for g = 0")
    grads = verify_gradients(n_models, seed=seed)
    if grads["max_rel_error"] > 1e-4:
        failures.append(f"gradient_fd: max relative error {grads['max_rel_error']:.3e}")
    allocs = verify_allocations(seed)
    for kind, msgs in allocs.items():
        failures.extend(f"allocation_invariants[{kind}]: {m}" for m in msgs)
    report = {
        "closed_form": closed,
        "gradients": {k: v for k, v in grads.items() if k != "errors"},
        "allocations": allocs,
        "failures": failures,
        "passed": not failures,
    }
    return report, failures
