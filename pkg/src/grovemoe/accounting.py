"""Activated-parameter and FLOP accounting, plus analytic and Monte-Carlo
oracles for how many distinct adjugate groups a top-k selection hits.

FLOP convention: 2 ops per multiply-accumulate, activations ignored.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from grovemoe.config import GroveConfig
from grovemoe.mathutils import sigmoid


@dataclass
class ActivationReport:
    """Per-stream activation accounting for one layer configuration."""

    config: GroveConfig
    min_active_params: int
    max_active_params: int
    mean_active_params: float
    mean_distinct_groups: float
    histogram: dict[int, int] = field(default_factory=dict)  # n_adjugate_evals -> token count
    router_params: int = 0
    samples: int = 0

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "samples": self.samples,
            "min_active_params": self.min_active_params,
            "max_active_params": self.max_active_params,
            "mean_active_params": self.mean_active_params,
            "mean_distinct_groups": self.mean_distinct_groups,
            "router_params": self.router_params,
            "histogram": {str(kk): v for kk, v in sorted(self.histogram.items())},
        }

    def write_json(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    def write_histogram_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["n_adjugate_evals", "frequency"])
            for kk in sorted(self.histogram):
                writer.writerow([kk, self.histogram[kk]])


def adjugate_eval_bounds(config: GroveConfig) -> tuple[int, int]:
    """Distinct adjugates per token lie in [ceil(k / (n/g)), min(k, g)]."""
    lo = math.ceil(config.k / config.group_size)
    hi = min(config.k, config.g)
    return lo, hi


def conditional_params(config: GroveConfig) -> dict[str, int]:
    """Parameters touched per activated unit (gate + up + down)."""
    return {"per_expert": 3 * config.d * config.m, "per_adjugate": 3 * config.d * config.h}


def active_params(config: GroveConfig, n_adjugate_evals: int) -> int:
    """Expert + adjugate parameters touched for one token. Router (n*d) is
    reported separately."""
    lo, hi = adjugate_eval_bounds(config)
    if not (lo <= n_adjugate_evals <= hi):
        raise ValueError(f"adjugate eval count {n_adjugate_evals} outside [{lo}, {hi}]")
    per = conditional_params(config)
    return config.k * per["per_expert"] + n_adjugate_evals * per["per_adjugate"]


def flops_per_token(config: GroveConfig, n_adjugate_evals: int) -> int:
    return 2 * active_params(config, n_adjugate_evals)


def expected_distinct_groups(n: int, g: int, k: int) -> float:
    """Expected distinct groups hit when k of n experts are drawn uniformly
    without replacement: g * (1 - C(n - n/g, k) / C(n, k))."""
    if n % g != 0:
        raise ValueError(f"group count {g} must divide expert count {n}")
    if not (1 <= k <= n):
        raise ValueError(f"k {k} out of range [1, {n}]")
    miss = math.comb(n - n // g, k) / math.comb(n, k)
    return g * (1.0 - miss)


def monte_carlo_distinct_groups(n: int, g: int, k: int, samples: int,
                                rng: np.random.Generator) -> tuple[float, float]:
    """Uniform-selection Monte-Carlo mean and its standard error."""
    group_size = n // g
    counts = np.empty(samples)
    for s in range(samples):
        sel = rng.choice(n, size=k, replace=False)
        counts[s] = np.unique(sel // group_size).size
    return float(counts.mean()), float(counts.std(ddof=1) / math.sqrt(samples))


def routing_histogram(layer, tokens: np.ndarray) -> ActivationReport:
    """Empirical adjugate-activation histogram over a (samples, d) token block.

    Selection matches route(): top-k of sigmoid(logits) + bias, stable ties.
    """
    cfg = layer.config
    if tokens.ndim != 2 or tokens.shape[1] != cfg.d:
        raise ValueError(f"token block must be (samples, {cfg.d}), got {tokens.shape}")
    scores = sigmoid(tokens @ layer.router.weight.T) + layer.bias
    sel = np.argsort(-scores, axis=1, kind="stable")[:, : cfg.k]
    groups = np.sort(sel // cfg.group_size, axis=1)
    distinct = 1 + np.count_nonzero(np.diff(groups, axis=1), axis=1)

    histogram: dict[int, int] = {}
    for c in distinct:
        histogram[int(c)] = histogram.get(int(c), 0) + 1
    lo, hi = adjugate_eval_bounds(cfg)
    per = conditional_params(cfg)
    mean_active = cfg.k * per["per_expert"] + float(distinct.mean()) * per["per_adjugate"]
    return ActivationReport(
        config=cfg,
        min_active_params=active_params(cfg, lo),
        max_active_params=active_params(cfg, hi),
        mean_active_params=mean_active,
        mean_distinct_groups=float(distinct.mean()),
        histogram=histogram,
        router_params=cfg.n * cfg.d,
        samples=tokens.shape[0],
    )
