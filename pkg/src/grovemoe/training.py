"""Desk-scale training utilities: a synthetic regression task, the toy
gradient-descent loop, and finite-difference gradient verification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from grovemoe.balance import LoadTracker, imbalance_metrics, update_bias, update_load
from grovemoe.layer import (
    Gradients,
    GroveLayer,
    accumulate_gradients,
    grove_backward,
    grove_forward_dedup,
    route_token,
    sgd_step,
)
from grovemoe.mathutils import make_rng


def finite_difference_check(layer: GroveLayer, x: np.ndarray, upstream: np.ndarray,
                            step: float = 1e-5, max_coords: int | None = None,
                            coord_seed: int = 0) -> float:
    """Max relative error between the analytic backward pass and central
    finite differences of upstream.forward(x), over router, selected expert,
    and activated adjugate parameters plus the input.

    max_coords caps the coordinates probed per tensor (a seeded random subset)
    so desk-scale layers stay fast; None checks every coordinate.
    """
    decision = route_token(layer, x)
    grads = grove_backward(layer, x, upstream, decision)
    coord_rng = make_rng(coord_seed)

    def loss() -> float:
        y, _ = grove_forward_dedup(layer, x)
        return float(upstream @ y)

    worst = 0.0

    def check(param: np.ndarray, analytic: np.ndarray) -> None:
        nonlocal worst
        flat = param.ravel()
        ana = analytic.ravel()
        if max_coords is not None and flat.size > max_coords:
            coords = coord_rng.choice(flat.size, size=max_coords, replace=False)
        else:
            coords = range(flat.size)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + step
            up = loss()
            flat[idx] = orig - step
            down = loss()
            flat[idx] = orig
            numeric = (up - down) / (2.0 * step)
            # floor keeps FD roundoff on near-zero entries from dominating:
            # below 1e-6 the comparison is effectively absolute
            scale = max(abs(numeric), abs(ana[idx]), 1e-6)
            worst = max(worst, abs(numeric - ana[idx]) / scale)

    check(layer.router.weight, grads.d_router)
    for i, fg in grads.d_experts.items():
        e = layer.experts[i]
        check(e.w_gate, fg.d_gate)
        check(e.w_up, fg.d_up)
        check(e.w_down, fg.d_down)
    for j, fg in grads.d_adjugates.items():
        a = layer.adjugates[j]
        check(a.w_gate, fg.d_gate)
        check(a.w_up, fg.d_up)
        check(a.w_down, fg.d_down)
    check(x, grads.d_x)
    return worst


@dataclass
class ToyTrainResult:
    loss_curve: list[float]
    imbalance_curve: list[float]


def toy_train(layer: GroveLayer, steps: int, batch_size: int = 32, lr: float = 2.0,
              seed: int = 1234) -> ToyTrainResult:
    """Fit y = T(x) for a fixed random linear target by full-batch gradient
    descent on the mean squared error over a fixed token set; the balance
    controller runs once per step."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cfg = layer.config
    rng = make_rng(seed)
    target = rng.normal(0.0, 1.0 / np.sqrt(cfg.d), size=(cfg.d, cfg.d))
    xs = rng.standard_normal((batch_size, cfg.d))
    tracker = LoadTracker(n=cfg.n, alpha=cfg.alpha)
    tracker.b = layer.bias  # controller owns the layer's bias between batches

    loss_curve: list[float] = []
    imbalance_curve: list[float] = []
    for _ in range(steps):
        total: Gradients | None = None
        batch_loss = 0.0
        load = np.zeros(cfg.n)
        for x in xs:
            decision = route_token(layer, x)
            y, _ = grove_forward_dedup(layer, x, decision)
            resid = y - target @ x
            batch_loss += float(resid @ resid) / cfg.d
            upstream = 2.0 * resid / (cfg.d * batch_size)
            total = accumulate_gradients(total, grove_backward(layer, x, upstream, decision))
            load[decision.selected] += 1.0 / cfg.k
        sgd_step(layer, total, lr)
        update_load(tracker, load / batch_size)
        update_bias(tracker)
        layer.bias = tracker.b
        loss_curve.append(batch_loss / batch_size)
        imbalance_curve.append(imbalance_metrics(tracker)["max_violation"])
    return ToyTrainResult(loss_curve=loss_curve, imbalance_curve=imbalance_curve)
