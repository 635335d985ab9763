"""Grove MoE at desk scale: grouped adjugate experts with compute-once dedup,
decoupled sigmoid/softmax routing with a balance bias, loss-free load
balancing, and function-preserving upcycling from a plain MoE layer.
"""

from grovemoe.config import GroveConfig
from grovemoe.layer import (
    GatedFfn,
    GroveLayer,
    MoeLayer,
    expert_forward,
    grove_backward,
    grove_forward_dedup,
    grove_forward_naive,
    group_of,
    moe_forward,
    random_grove_layer,
    random_moe_layer,
)
from grovemoe.routing import Router, RoutingDecision, route, select_topk
from grovemoe.balance import LoadTracker, simulate_balance
from grovemoe.checkpoint import load_layer, save_layer, upcycle

__all__ = [
    "GroveConfig",
    "GatedFfn",
    "GroveLayer",
    "MoeLayer",
    "LoadTracker",
    "Router",
    "RoutingDecision",
    "expert_forward",
    "grove_backward",
    "grove_forward_dedup",
    "grove_forward_naive",
    "group_of",
    "load_layer",
    "moe_forward",
    "random_grove_layer",
    "random_moe_layer",
    "route",
    "save_layer",
    "select_topk",
    "simulate_balance",
    "upcycle",
]
