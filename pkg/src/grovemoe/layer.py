"""The layer itself: gated-FFN experts, grouped adjugate experts, naive and
deduplicated forward passes, and a manual backward pass.

Top-k selection is treated as a constant in the backward pass; gradient flows
through the softmax weights, the selected experts, and the activated
adjugates only. The sigmoid head and the balance bias receive no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from grovemoe.config import GroveConfig
from grovemoe.mathutils import Array, make_rng, matvec, silu, silu_grad
from grovemoe.routing import Router, RoutingDecision, route


@dataclass
class GatedFfn:
    """Gated feed-forward block: down(silu(gate x) * (up x)).

    Experts and adjugates share this shape family and differ only in the
    intermediate width (m vs h).
    """

    w_gate: Array  # (inter, d)
    w_up: Array    # (inter, d)
    w_down: Array  # (d, inter)

    @property
    def inter(self) -> int:
        return self.w_gate.shape[0]

    def copy(self) -> "GatedFfn":
        return GatedFfn(self.w_gate.copy(), self.w_up.copy(), self.w_down.copy())


@dataclass
class MoeLayer:
    """Traditional MoE layer: router + n experts + balance bias."""

    router: Router
    experts: list[GatedFfn]
    bias: Array
    config: GroveConfig


@dataclass
class GroveLayer:
    """Grove MoE layer: a MoE layer plus g shared adjugate experts."""

    router: Router
    experts: list[GatedFfn]
    adjugates: list[GatedFfn]
    bias: Array
    config: GroveConfig


@dataclass
class DedupStats:
    """Bookkeeping from a dedup forward: how many adjugates actually ran."""

    n_adjugate_evals: int
    group_weights: dict[int, float]


@dataclass
class FfnGrads:
    d_gate: Array
    d_up: Array
    d_down: Array


@dataclass
class Gradients:
    """Gradients of u.y w.r.t. inputs and parameters for one token.

    Expert/adjugate entries exist only for activated indices; everything
    absent has exactly zero gradient.
    """

    d_x: Array
    d_router: Array
    d_experts: dict[int, FfnGrads] = field(default_factory=dict)
    d_adjugates: dict[int, FfnGrads] = field(default_factory=dict)


def group_of(i: int, n: int, g: int) -> int:
    """Group index of expert i (0-based); groups are n/g consecutive experts."""
    if n % g != 0:
        raise ValueError(f"group count {g} must divide expert count {n}")
    if not (0 <= i < n):
        raise ValueError(f"expert index {i} out of range [0, {n})")
    return i // (n // g)


def _random_ffn(rng: np.random.Generator, d: int, inter: int) -> GatedFfn:
    return GatedFfn(
        w_gate=rng.normal(0.0, 1.0 / np.sqrt(d), size=(inter, d)),
        w_up=rng.normal(0.0, 1.0 / np.sqrt(d), size=(inter, d)),
        w_down=rng.normal(0.0, 1.0 / np.sqrt(max(inter, 1)), size=(d, inter)),
    )


def random_moe_layer(config: GroveConfig, rng: np.random.Generator | None = None) -> MoeLayer:
    rng = rng if rng is not None else make_rng(config.seed)
    router = Router(rng.normal(0.0, 1.0 / np.sqrt(config.d), size=(config.n, config.d)))
    experts = [_random_ffn(rng, config.d, config.m) for _ in range(config.n)]
    return MoeLayer(router=router, experts=experts, bias=np.zeros(config.n), config=config)


def random_grove_layer(config: GroveConfig, rng: np.random.Generator | None = None) -> GroveLayer:
    rng = rng if rng is not None else make_rng(config.seed)
    moe = random_moe_layer(config, rng)
    adjugates = [_random_ffn(rng, config.d, config.h) for _ in range(config.g)]
    return GroveLayer(
        router=moe.router, experts=moe.experts, adjugates=adjugates, bias=moe.bias, config=config
    )


def expert_forward(ffn: GatedFfn, x: Array) -> Array:
    return matvec(ffn.w_down, silu(matvec(ffn.w_gate, x)) * matvec(ffn.w_up, x))


def route_token(layer: MoeLayer | GroveLayer, x: Array) -> RoutingDecision:
    cfg = layer.config
    return route(layer.router, layer.bias, x, cfg.k, cfg.lam, cfg.g)


def moe_forward(layer: MoeLayer | GroveLayer, x: Array,
                decision: RoutingDecision | None = None) -> Array:
    """Traditional MoE output: softmax-weighted sum of selected experts only."""
    decision = decision if decision is not None else route_token(layer, x)
    y = np.zeros(layer.config.d)
    for i, w in zip(decision.selected, decision.gate_weights):
        y += w * expert_forward(layer.experts[int(i)], x)
    return y


def grove_forward_naive(layer: GroveLayer, x: Array,
                        decision: RoutingDecision | None = None) -> Array:
    """Reference semantics: the group adjugate is re-evaluated for every
    selected expert, each time scaled by lam and that expert's gate weight."""
    decision = decision if decision is not None else route_token(layer, x)
    cfg = layer.config
    y = np.zeros(cfg.d)
    for i, w in zip(decision.selected, decision.gate_weights):
        i = int(i)
        j = group_of(i, cfg.n, cfg.g)
        y += w * (expert_forward(layer.experts[i], x) + cfg.lam * expert_forward(layer.adjugates[j], x))
    return y


def grove_forward_dedup(layer: GroveLayer, x: Array,
                        decision: RoutingDecision | None = None) -> tuple[Array, DedupStats]:
    """Each needed adjugate runs once, scaled by its aggregated group weight.

    Algebraically identical to the naive path.
    """
    decision = decision if decision is not None else route_token(layer, x)
    y = moe_forward(layer, x, decision)
    for j, w in decision.group_weights.items():
        y += w * expert_forward(layer.adjugates[j], x)
    stats = DedupStats(
        n_adjugate_evals=len(decision.group_weights),
        group_weights=dict(decision.group_weights),
    )
    return y, stats


def _ffn_backward(ffn: GatedFfn, x: Array, upstream: Array) -> tuple[FfnGrads, Array]:
    """Gradients of upstream.ffn(x) w.r.t. the three weights and x."""
    zg = matvec(ffn.w_gate, x)
    zu = matvec(ffn.w_up, x)
    a = silu(zg)
    hidden = a * zu
    d_down = np.outer(upstream, hidden)
    dh = ffn.w_down.T @ upstream
    dzu = dh * a
    dzg = (dh * zu) * silu_grad(zg)
    grads = FfnGrads(d_gate=np.outer(dzg, x), d_up=np.outer(dzu, x), d_down=d_down)
    dx = ffn.w_gate.T @ dzg + ffn.w_up.T @ dzu
    return grads, dx


def grove_backward(layer: GroveLayer, x: Array, upstream: Array,
                   decision: RoutingDecision | None = None) -> Gradients:
    """Backward pass of upstream.grove_forward(x) with selection frozen."""
    cfg = layer.config
    decision = decision if decision is not None else route_token(layer, x)
    selected = [int(i) for i in decision.selected]
    p = decision.softmax_scores

    expert_out = {i: expert_forward(layer.experts[i], x) for i in selected}
    adj_out = {j: expert_forward(layer.adjugates[j], x) for j in decision.group_weights}

    # d(u.y)/d softmax_i for selected i; the adjugate term contributes through
    # the aggregated group weight lam * sum(rho).
    d_soft = np.zeros(cfg.n)
    for i in selected:
        j = group_of(i, cfg.n, cfg.g)
        d_soft[i] = float(upstream @ expert_out[i]) + cfg.lam * float(upstream @ adj_out[j])

    # Softmax jacobian: d logit_t = p_t * (d_soft_t - sum_s d_soft_s p_s).
    d_logits = p * (d_soft - float(d_soft @ p))
    d_router = np.outer(d_logits, x)
    d_x = layer.router.weight.T @ d_logits

    d_experts: dict[int, FfnGrads] = {}
    for i, w in zip(selected, decision.gate_weights):
        grads, dx_i = _ffn_backward(layer.experts[i], x, float(w) * upstream)
        d_experts[i] = grads
        d_x += dx_i

    d_adjugates: dict[int, FfnGrads] = {}
    for j, w in decision.group_weights.items():
        grads, dx_j = _ffn_backward(layer.adjugates[j], x, w * upstream)
        d_adjugates[j] = grads
        d_x += dx_j

    return Gradients(d_x=d_x, d_router=d_router, d_experts=d_experts, d_adjugates=d_adjugates)


def batch_forward(layer: MoeLayer | GroveLayer, tokens: list[Array] | Array,
                  mode: str = "dedup") -> tuple[list[Array], list[DedupStats | None], Array]:
    """Forward a batch; also returns the batch-mean expert assignment vector
    (each token contributes 1/k at its k selected experts)."""
    if mode not in ("naive", "dedup", "moe"):
        raise ValueError(f"unknown mode {mode!r}")
    cfg = layer.config
    outputs: list[Array] = []
    stats: list[DedupStats | None] = []
    load = np.zeros(cfg.n)
    n_tokens = 0
    for x in tokens:
        decision = route_token(layer, x)
        if mode == "moe":
            outputs.append(moe_forward(layer, x, decision))
            stats.append(None)
        elif mode == "naive":
            outputs.append(grove_forward_naive(layer, x, decision))
            stats.append(DedupStats(len(decision.group_weights), dict(decision.group_weights)))
        else:
            y, st = grove_forward_dedup(layer, x, decision)
            outputs.append(y)
            stats.append(st)
        load[decision.selected] += 1.0 / cfg.k
        n_tokens += 1
    if n_tokens == 0:
        raise ValueError("empty batch")
    return outputs, stats, load / n_tokens


def accumulate_gradients(total: Gradients | None, g: Gradients) -> Gradients:
    """Sum gradients across tokens; sparse entries merge by index."""
    if total is None:
        return g
    total.d_x = total.d_x + g.d_x
    total.d_router = total.d_router + g.d_router
    for store, incoming in ((total.d_experts, g.d_experts), (total.d_adjugates, g.d_adjugates)):
        for idx, fg in incoming.items():
            if idx in store:
                store[idx].d_gate += fg.d_gate
                store[idx].d_up += fg.d_up
                store[idx].d_down += fg.d_down
            else:
                store[idx] = FfnGrads(fg.d_gate.copy(), fg.d_up.copy(), fg.d_down.copy())
    return total


def sgd_step(layer: GroveLayer, grads: Gradients, lr: float) -> None:
    """In-place descent step on router, touched experts, and touched adjugates."""
    layer.router.weight -= lr * grads.d_router
    for i, fg in grads.d_experts.items():
        e = layer.experts[i]
        e.w_gate -= lr * fg.d_gate
        e.w_up -= lr * fg.d_up
        e.w_down -= lr * fg.d_down
    for j, fg in grads.d_adjugates.items():
        a = layer.adjugates[j]
        a.w_gate -= lr * fg.d_gate
        a.w_up -= lr * fg.d_up
        a.w_down -= lr * fg.d_down
