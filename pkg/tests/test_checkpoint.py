import numpy as np
import pytest

from grovemoe.checkpoint import (
    MAGIC,
    BadMagicError,
    TruncatedPayloadError,
    UnknownDtypeError,
    load_layer,
    save_layer,
    upcycle,
)
from grovemoe.config import GroveConfig
from grovemoe.layer import (
    GroveLayer,
    grove_forward_dedup,
    moe_forward,
    random_moe_layer,
    route_token,
)
from grovemoe.mathutils import make_rng

CFG = GroveConfig(d=8, n=8, k=3, g=4, h=4, m=6, lam=0.5, seed=7)


def test_upcycle_preserves_function():
    moe = random_moe_layer(CFG)
    grove = upcycle(moe)
    rng = make_rng(1)
    for _ in range(100):
        x = rng.standard_normal(CFG.d)
        y_grove, _ = grove_forward_dedup(grove, x)
        assert np.max(np.abs(y_grove - moe_forward(moe, x))) < 1e-12


def test_upcycle_preserves_routing():
    moe = random_moe_layer(CFG)
    grove = upcycle(moe)
    rng = make_rng(2)
    for _ in range(20):
        x = rng.standard_normal(CFG.d)
        dm, dg = route_token(moe, x), route_token(grove, x)
        assert np.array_equal(dm.selected, dg.selected)
        np.testing.assert_array_equal(dm.gate_weights, dg.gate_weights)


def test_upcycle_zero_sigma():
    grove = upcycle(random_moe_layer(CFG), sigma_init=0.0)
    for a in grove.adjugates:
        assert np.all(a.w_gate == 0.0) and np.all(a.w_up == 0.0) and np.all(a.w_down == 0.0)


def test_upcycle_adjugate_init_std():
    cfg = GroveConfig(d=64, n=64, k=4, g=32, h=32, m=8, lam=0.5, sigma_init=0.006, seed=9)
    grove = upcycle(random_moe_layer(cfg))
    entries = np.concatenate([np.concatenate([a.w_gate.ravel(), a.w_up.ravel()])
                              for a in grove.adjugates])
    assert entries.size >= 10 ** 5
    assert abs(entries.std() - 0.006) / 0.006 < 0.05
    for a in grove.adjugates:
        assert np.all(a.w_down == 0.0)


def test_upcycle_deterministic():
    moe = random_moe_layer(CFG)
    a, b = upcycle(moe), upcycle(moe)
    for fa, fb in zip(a.adjugates, b.adjugates):
        assert np.array_equal(fa.w_gate, fb.w_gate)
        assert np.array_equal(fa.w_up, fb.w_up)


def test_upcycle_rejects_bad_grouping():
    moe = random_moe_layer(CFG)
    with pytest.raises(ValueError):
        upcycle(moe, g=3)  # 3 does not divide 8
    with pytest.raises(ValueError):
        upcycle(moe, lam=0.75)  # above g/n = 0.5


def test_roundtrip_bitexact(tmp_path):
    moe = random_moe_layer(CFG)
    grove = upcycle(moe)
    path = tmp_path / "layer.ckpt"
    save_layer(grove, path)
    loaded = load_layer(path)
    assert isinstance(loaded, GroveLayer)
    assert loaded.config == grove.config
    x = make_rng(3).standard_normal(CFG.d)
    y0, _ = grove_forward_dedup(grove, x)
    y1, _ = grove_forward_dedup(loaded, x)
    assert np.array_equal(y0, y1)
    for e0, e1 in zip(grove.experts, loaded.experts):
        assert np.array_equal(e0.w_gate, e1.w_gate)
        assert np.array_equal(e0.w_up, e1.w_up)
        assert np.array_equal(e0.w_down, e1.w_down)


def test_roundtrip_moe_kind(tmp_path):
    moe = random_moe_layer(CFG)
    path = tmp_path / "moe.ckpt"
    save_layer(moe, path)
    loaded = load_layer(path)
    assert not isinstance(loaded, GroveLayer)
    x = make_rng(4).standard_normal(CFG.d)
    assert np.array_equal(moe_forward(moe, x), moe_forward(loaded, x))


def test_f32_roundtrip_close(tmp_path):
    moe = random_moe_layer(CFG)
    path = tmp_path / "moe32.ckpt"
    save_layer(moe, path, dtype="f32")
    loaded = load_layer(path)
    np.testing.assert_allclose(loaded.router.weight, moe.router.weight, atol=1e-6)


def test_bad_magic(tmp_path):
    path = tmp_path / "layer.ckpt"
    save_layer(random_moe_layer(CFG), path)
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        load_layer(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "layer.ckpt"
    save_layer(random_moe_layer(CFG), path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 64])
    with pytest.raises(TruncatedPayloadError):
        load_layer(path)


def test_unknown_dtype_on_save():
    with pytest.raises(UnknownDtypeError):
        save_layer(random_moe_layer(CFG), "/tmp/never-written.ckpt", dtype="f16")


def test_unknown_dtype_in_header(tmp_path):
    path = tmp_path / "layer.ckpt"
    save_layer(random_moe_layer(CFG), path)
    raw = path.read_bytes()
    patched = raw.replace(b'"dtype": "f64"', b'"dtype": "f99"')
    assert patched != raw
    (tmp_path / "bad.ckpt").write_bytes(patched)
    with pytest.raises(UnknownDtypeError):
        load_layer(tmp_path / "bad.ckpt")


def test_magic_is_versioned():
    assert MAGIC == b"GROVEMOE1"
    assert len(MAGIC) == 9
