"""Auxiliary-loss-free load balancing: estimate the expert load, compare it
to the uniform target, and nudge the routing bias by an RMS-normalized step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from grovemoe.mathutils import Array, rms, sigmoid
from grovemoe.routing import RoutingDecision


@dataclass
class LoadTracker:
    """Running load estimate F, uniform target Q, and the routing bias b.

    F is an exponential moving average of per-batch mean assignment vectors;
    it stays unset until the first batch arrives so a constant stream keeps
    the trajectory exactly constant.
    """

    n: int
    alpha: float = 0.001
    ema_decay: float = 0.9
    F: Array | None = None
    Q: Array = field(init=False)
    b: Array = field(init=False)

    def __post_init__(self):
        self.Q = np.full(self.n, 1.0 / self.n)
        self.b = np.zeros(self.n)


def token_assignment(decision: RoutingDecision, n: int, k: int) -> Array:
    """Assignment vector: 1/k at each selected expert, 0 elsewhere."""
    f = np.zeros(n)
    f[decision.selected] = 1.0 / k
    return f


def update_load(tracker: LoadTracker, batch_mean_f: Array) -> None:
    batch_mean_f = np.asarray(batch_mean_f, dtype=np.float64)
    if batch_mean_f.shape != (tracker.n,):
        raise ValueError(f"load vector has shape {batch_mean_f.shape}, expected ({tracker.n},)")
    if tracker.F is None:
        tracker.F = batch_mean_f.copy()
    else:
        tracker.F = tracker.ema_decay * tracker.F + (1.0 - tracker.ema_decay) * batch_mean_f


def update_bias(tracker: LoadTracker) -> None:
    """b -= alpha * (F - Q) / rms(F - Q); no-op at perfect balance."""
    if tracker.F is None:
        return
    dev = tracker.F - tracker.Q
    scale = rms(dev)
    if scale == 0.0:
        return
    tracker.b = tracker.b - tracker.alpha * dev / scale


def imbalance_metrics(tracker: LoadTracker) -> dict[str, float]:
    dev = (tracker.F if tracker.F is not None else tracker.Q) - tracker.Q
    return {"max_violation": float(np.max(np.abs(dev))), "rms_violation": rms(dev)}


def skewed_logit_batch(n: int, batch: int, skew: float, rng: np.random.Generator) -> Array:
    """Standard scenario: standard-normal logits with a fixed offset added to
    the first quarter of the experts."""
    z = rng.standard_normal((batch, n))
    z[:, : max(n // 4, 1)] += skew
    return z


def simulate_balance(n: int, k: int, score_generator, steps: int,
                     alpha: float = 0.001, ema_decay: float = 0.9) -> list[dict[str, float]]:
    """Closed loop: generate logits, select top-k by sigmoid score + bias,
    accumulate assignment frequencies, update the bias; one record per step.

    score_generator(step) must return a (batch, n) array of router logits.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    tracker = LoadTracker(n=n, alpha=alpha, ema_decay=ema_decay)
    trajectory: list[dict[str, float]] = []
    for step in range(steps):
        z = score_generator(step)
        scores = sigmoid(z) + tracker.b
        # unordered top-k per row; only membership matters for the load vector
        sel = np.argpartition(-scores, k - 1, axis=1)[:, :k] if k < n else np.tile(np.arange(n), (z.shape[0], 1))
        f = np.zeros(n)
        np.add.at(f, sel.ravel(), 1.0 / k)
        update_load(tracker, f / z.shape[0])
        update_bias(tracker)
        rec = imbalance_metrics(tracker)
        rec["step"] = float(step)
        trajectory.append(rec)
    return trajectory


def write_trajectory_csv(trajectory: list[dict[str, float]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "max_violation", "rms_violation"])
        for rec in trajectory:
            writer.writerow([int(rec["step"]), repr(rec["max_violation"]), repr(rec["rms_violation"])])
