import math

import numpy as np
import pytest

from grovemoe.config import GroveConfig
from grovemoe.layer import (
    GatedFfn,
    batch_forward,
    expert_forward,
    grove_backward,
    grove_forward_dedup,
    grove_forward_naive,
    group_of,
    moe_forward,
    random_grove_layer,
    route_token,
)
from grovemoe.mathutils import make_rng, silu

SMALL = GroveConfig(d=8, n=8, k=3, g=4, h=4, m=6, lam=0.5, seed=11)


def small_layer(seed=11):
    return random_grove_layer(GroveConfig(d=8, n=8, k=3, g=4, h=4, m=6, lam=0.5, seed=seed))


def test_group_of_pairs():
    assert group_of(0, 128, 64) == 0
    assert group_of(1, 128, 64) == 0
    assert group_of(2, 128, 64) == 1


def test_group_of_singletons_and_last():
    assert all(group_of(i, 16, 16) == i for i in range(16))
    assert group_of(7, 8, 2) == 1


def test_group_of_errors():
    with pytest.raises(ValueError):
        group_of(0, 10, 3)
    with pytest.raises(ValueError):
        group_of(9, 8, 2)


def test_expert_forward_zero_down():
    rng = make_rng(0)
    ffn = GatedFfn(rng.standard_normal((4, 3)), rng.standard_normal((4, 3)), np.zeros((3, 4)))
    assert np.array_equal(expert_forward(ffn, rng.standard_normal(3)), np.zeros(3))


def test_expert_forward_zero_input():
    rng = make_rng(1)
    ffn = GatedFfn(rng.standard_normal((4, 3)), rng.standard_normal((4, 3)),
                   rng.standard_normal((3, 4)))
    assert np.array_equal(expert_forward(ffn, np.zeros(3)), np.zeros(3))


def test_expert_forward_composition_oracle():
    rng = make_rng(2)
    ffn = GatedFfn(rng.standard_normal((5, 3)), rng.standard_normal((5, 3)),
                   rng.standard_normal((3, 5)))
    x = rng.standard_normal(3)
    gate = ffn.w_gate @ x
    up = ffn.w_up @ x
    expected = ffn.w_down @ (silu(gate) * up)
    np.testing.assert_allclose(expert_forward(ffn, x), expected, atol=1e-14)


def test_moe_forward_single_expert():
    cfg = GroveConfig(d=4, n=1, k=1, g=1, h=2, m=3, lam=1.0, seed=5)
    layer = random_grove_layer(cfg)
    x = make_rng(6).standard_normal(4)
    np.testing.assert_allclose(moe_forward(layer, x),
                               expert_forward(layer.experts[0], x), atol=1e-14)


def test_moe_forward_identical_experts_k_equals_n():
    layer = small_layer()
    proto = layer.experts[0]
    layer.experts = [proto.copy() for _ in range(layer.config.n)]
    layer.config = GroveConfig(d=8, n=8, k=8, g=4, h=4, m=6, lam=0.5, seed=11)
    x = make_rng(7).standard_normal(8)
    np.testing.assert_allclose(moe_forward(layer, x), expert_forward(proto, x), rtol=1e-12)


def test_moe_forward_brute_force():
    layer = small_layer()
    x = make_rng(8).standard_normal(8)
    d = route_token(layer, x)
    expected = sum(w * expert_forward(layer.experts[int(i)], x)
                   for i, w in zip(d.selected, d.gate_weights))
    np.testing.assert_allclose(moe_forward(layer, x), expected, atol=1e-14)


def test_grove_naive_reduces_to_moe_with_zero_adjugates():
    layer = small_layer()
    for a in layer.adjugates:
        a.w_down[:] = 0.0
    x = make_rng(9).standard_normal(8)
    np.testing.assert_allclose(grove_forward_naive(layer, x), moe_forward(layer, x), atol=1e-12)
    y_dedup, _ = grove_forward_dedup(layer, x)
    np.testing.assert_allclose(y_dedup, moe_forward(layer, x), atol=1e-12)


def test_grove_naive_k1_single_term():
    cfg = GroveConfig(d=6, n=4, k=1, g=2, h=3, m=5, lam=0.4, seed=13)
    layer = random_grove_layer(cfg)
    x = make_rng(14).standard_normal(6)
    d = route_token(layer, x)
    i = int(d.selected[0])
    j = group_of(i, cfg.n, cfg.g)
    expected = d.gate_weights[0] * (
        expert_forward(layer.experts[i], x) + cfg.lam * expert_forward(layer.adjugates[j], x)
    )
    np.testing.assert_allclose(grove_forward_naive(layer, x), expected, atol=1e-14)


def test_grove_naive_per_term_oracle():
    layer = small_layer(seed=21)
    cfg = layer.config
    x = make_rng(15).standard_normal(8)
    d = route_token(layer, x)
    expected = np.zeros(cfg.d)
    for i, w in zip(d.selected, d.gate_weights):
        i = int(i)
        expected += w * expert_forward(layer.experts[i], x)
        expected += w * cfg.lam * expert_forward(layer.adjugates[group_of(i, cfg.n, cfg.g)], x)
    np.testing.assert_allclose(grove_forward_naive(layer, x), expected, atol=1e-13)


def test_dedup_matches_naive():
    rng = make_rng(16)
    for seed in range(5):
        layer = small_layer(seed=seed)
        for _ in range(10):
            x = rng.standard_normal(8)
            naive = grove_forward_naive(layer, x)
            dedup, stats = grove_forward_dedup(layer, x)
            denom = 1.0 + np.max(np.abs(naive))
            assert np.max(np.abs(dedup - naive)) / denom < 1e-9
            lo = math.ceil(layer.config.k / layer.config.group_size)
            assert lo <= stats.n_adjugate_evals <= min(layer.config.k, layer.config.g)


def test_dedup_full_collision():
    cfg = GroveConfig(d=6, n=8, k=2, g=4, h=3, m=5, lam=0.5, seed=31)
    layer = random_grove_layer(cfg)
    layer.bias = np.zeros(cfg.n)
    layer.bias[:2] = 100.0  # force both selections into group 0
    x = make_rng(32).standard_normal(6)
    d = route_token(layer, x)
    assert {group_of(int(i), cfg.n, cfg.g) for i in d.selected} == {0}
    _, stats = grove_forward_dedup(layer, x, d)
    assert stats.n_adjugate_evals == 1
    assert stats.group_weights[0] == pytest.approx(cfg.lam * d.gate_weights.sum(), abs=1e-12)


def test_lambda_linearity():
    # lam=0.5 is the g/n bound here; the adjugate contribution at 0.5 must be
    # exactly twice the contribution at 0.25 on identical weights
    layer = small_layer(seed=41)
    x = make_rng(42).standard_normal(8)
    base = moe_forward(layer, x)
    y_full, _ = grove_forward_dedup(layer, x)
    layer.config = GroveConfig(d=8, n=8, k=3, g=4, h=4, m=6, lam=0.25, seed=41)
    y_half, _ = grove_forward_dedup(layer, x)
    np.testing.assert_allclose(y_full - base, 2.0 * (y_half - base), rtol=1e-9, atol=1e-12)


def test_backward_zero_upstream():
    layer = small_layer()
    x = make_rng(50).standard_normal(8)
    g = grove_backward(layer, x, np.zeros(8))
    assert np.all(g.d_x == 0.0)
    assert np.all(g.d_router == 0.0)
    for fg in list(g.d_experts.values()) + list(g.d_adjugates.values()):
        assert np.all(fg.d_gate == 0.0) and np.all(fg.d_up == 0.0) and np.all(fg.d_down == 0.0)


def test_backward_nonselected_experts_exactly_zero():
    layer = small_layer()
    x = make_rng(51).standard_normal(8)
    d = route_token(layer, x)
    g = grove_backward(layer, x, make_rng(52).standard_normal(8), d)
    selected = {int(i) for i in d.selected}
    assert set(g.d_experts) == selected
    assert set(g.d_adjugates) == set(d.group_weights)


def test_batch_forward_single_token_load():
    layer = small_layer()
    x = make_rng(60).standard_normal(8)
    _, _, load = batch_forward(layer, [x])
    k = layer.config.k
    assert np.count_nonzero(load) == k
    assert np.all(load[load > 0] == pytest.approx(1.0 / k))


def test_batch_forward_duplicate_token_deterministic():
    layer = small_layer()
    x = make_rng(61).standard_normal(8)
    outs, stats, _ = batch_forward(layer, [x, x])
    assert np.array_equal(outs[0], outs[1])
    assert stats[0].n_adjugate_evals == stats[1].n_adjugate_evals
    assert stats[0].group_weights == stats[1].group_weights


def test_batch_forward_load_sums_to_one():
    layer = small_layer()
    rng = make_rng(62)
    _, _, load = batch_forward(layer, [rng.standard_normal(8) for _ in range(17)])
    assert load.sum() == pytest.approx(1.0, abs=1e-12)


def test_batch_forward_bad_mode():
    layer = small_layer()
    with pytest.raises(ValueError):
        batch_forward(layer, [np.zeros(8)], mode="fused")
