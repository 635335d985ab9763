"""Decoupled router: one logit projection feeds both a sigmoid head (selection,
together with the balance bias) and a softmax head (output weighting).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from grovemoe.mathutils import Array, matvec, sigmoid, softmax


@dataclass
class Router:
    """Logit projection over n experts; weight has shape (n, d)."""

    weight: Array

    @property
    def n(self) -> int:
        return self.weight.shape[0]

    @property
    def d(self) -> int:
        return self.weight.shape[1]


@dataclass
class RoutingDecision:
    """Per-token routing outcome.

    selected: the k chosen expert indices, sorted ascending
    gate_weights: softmax scores at the selected indices (positional)
    sigmoid_scores / softmax_scores: both heads over all n experts
    group_weights: group index -> lam * sum of gate weights of its selected members
    """

    selected: np.ndarray
    gate_weights: np.ndarray
    sigmoid_scores: Array
    softmax_scores: Array
    group_weights: dict[int, float]

    @property
    def k(self) -> int:
        return len(self.selected)


def logits(router: Router, x: Array) -> Array:
    return matvec(router.weight, x)


def select_topk(scores: Array, bias: Array, k: int) -> np.ndarray:
    """Indices of the k largest entries of scores+bias.

    Ties break toward the lowest index; result is sorted ascending.
    """
    scores = np.asarray(scores, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if scores.shape != bias.shape:
        raise ValueError(f"scores length {scores.shape} != bias length {bias.shape}")
    n = scores.shape[0]
    if not (1 <= k <= n):
        raise ValueError(f"top-k {k} out of range [1, {n}]")
    order = np.argsort(-(scores + bias), kind="stable")
    return np.sort(order[:k])


def route(router: Router, bias: Array, x: Array, k: int, lam: float, g: int) -> RoutingDecision:
    """Select by sigmoid score plus bias, weight by softmax, aggregate per group.

    g is the number of adjugate groups; experts i and i' share a group iff
    i // (n/g) == i' // (n/g).
    """
    z = logits(router, x)
    sig = sigmoid(z)
    soft = softmax(z)
    selected = select_topk(sig, bias, k)
    gate_weights = soft[selected]
    group_size = router.n // g
    group_weights: dict[int, float] = {}
    for idx, w in zip(selected, gate_weights):
        j = int(idx) // group_size
        group_weights[j] = group_weights.get(j, 0.0) + lam * float(w)
    return RoutingDecision(
        selected=selected,
        gate_weights=gate_weights,
        sigmoid_scores=sig,
        softmax_scores=soft,
        group_weights=group_weights,
    )
