"""Checkpoint container and function-preserving upcycling.

Layout: 9-byte magic "GROVEMOE1", u32 little-endian header length, JSON header
(kind, config, tensor table with name/shape/dtype/offset), then raw
little-endian tensor payload in table order. f64 is the default dtype; f32 is
accepted for smaller files at the cost of bit-exactness of f64 round-trips.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from grovemoe.config import GroveConfig
from grovemoe.layer import GatedFfn, GroveLayer, MoeLayer
from grovemoe.mathutils import normal_init
from grovemoe.routing import Router

MAGIC = b"GROVEMOE1"

_DTYPES = {"f32": "<f4", "f64": "<f8"}


class CheckpointError(Exception):
    """Base class; `code` distinguishes the failure modes."""

    code = "checkpoint_error"


class BadMagicError(CheckpointError):
    code = "bad_magic"


class TruncatedPayloadError(CheckpointError):
    code = "truncated_payload"


class UnknownDtypeError(CheckpointError):
    code = "unknown_dtype"


class BadHeaderError(CheckpointError):
    code = "bad_header"


def _layer_tensors(layer: MoeLayer | GroveLayer) -> list[tuple[str, np.ndarray]]:
    tensors = [("router.weight", layer.router.weight), ("bias", layer.bias)]
    for i, e in enumerate(layer.experts):
        tensors += [(f"expert.{i}.gate", e.w_gate), (f"expert.{i}.up", e.w_up),
                    (f"expert.{i}.down", e.w_down)]
    if isinstance(layer, GroveLayer):
        for j, a in enumerate(layer.adjugates):
            tensors += [(f"adjugate.{j}.gate", a.w_gate), (f"adjugate.{j}.up", a.w_up),
                        (f"adjugate.{j}.down", a.w_down)]
    return tensors


def save_layer(layer: MoeLayer | GroveLayer, path: str | Path, dtype: str = "f64") -> None:
    if dtype not in _DTYPES:
        raise UnknownDtypeError(f"unknown dtype {dtype!r}; expected one of {sorted(_DTYPES)}")
    np_dtype = np.dtype(_DTYPES[dtype])
    tensors = _layer_tensors(layer)
    table = []
    offset = 0
    blobs = []
    for name, arr in tensors:
        blob = np.ascontiguousarray(arr, dtype=np_dtype).tobytes()
        table.append({"name": name, "shape": list(arr.shape), "dtype": dtype, "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "kind": "grove" if isinstance(layer, GroveLayer) else "moe",
        "config": layer.config.to_dict(),
        "tensors": table,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def load_layer(path: str | Path) -> MoeLayer | GroveLayer:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic in {path}")
    pos = len(MAGIC)
    if len(raw) < pos + 4:
        raise TruncatedPayloadError(f"missing header length in {path}")
    (header_len,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if len(raw) < pos + header_len:
        raise TruncatedPayloadError(f"header truncated in {path}")
    try:
        header = json.loads(raw[pos : pos + header_len])
    except json.JSONDecodeError as exc:
        raise BadHeaderError(f"unparseable header in {path}: {exc}") from exc
    payload = raw[pos + header_len :]

    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        if entry["dtype"] not in _DTYPES:
            raise UnknownDtypeError(f"unknown dtype {entry['dtype']!r} for tensor {entry['name']}")
        np_dtype = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start, end = entry["offset"], entry["offset"] + count * np_dtype.itemsize
        if end > len(payload):
            raise TruncatedPayloadError(
                f"tensor {entry['name']} extends past payload end ({end} > {len(payload)})"
            )
        arr = np.frombuffer(payload[start:end], dtype=np_dtype).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(np.float64)

    config = GroveConfig.from_dict(header["config"])
    router = Router(tensors["router.weight"])
    experts = [
        GatedFfn(tensors[f"expert.{i}.gate"], tensors[f"expert.{i}.up"], tensors[f"expert.{i}.down"])
        for i in range(config.n)
    ]
    bias = tensors["bias"]
    if header["kind"] == "moe":
        return MoeLayer(router=router, experts=experts, bias=bias, config=config)
    adjugates = [
        GatedFfn(tensors[f"adjugate.{j}.gate"], tensors[f"adjugate.{j}.up"],
                 tensors[f"adjugate.{j}.down"])
        for j in range(config.g)
    ]
    return GroveLayer(router=router, experts=experts, adjugates=adjugates, bias=bias, config=config)


def upcycle(moe: MoeLayer, g: int | None = None, h: int | None = None,
            lam: float | None = None, sigma_init: float | None = None,
            seed: int | None = None) -> GroveLayer:
    """Grow a plain MoE layer into a Grove layer without changing its function.

    Router, experts, and bias are copied verbatim. Each new adjugate gets a
    zero down-projection (so it initially outputs zero) and normal(0,
    sigma_init) gate/up projections.
    """
    base = moe.config
    cfg = GroveConfig(
        d=base.d, n=base.n, k=base.k,
        g=base.g if g is None else g,
        h=base.h if h is None else h,
        m=base.m,
        lam=base.lam if lam is None else lam,
        alpha=base.alpha,
        sigma_init=base.sigma_init if sigma_init is None else sigma_init,
        seed=base.seed if seed is None else seed,
    )
    rng = np.random.default_rng(cfg.seed)
    adjugates = [
        GatedFfn(
            w_gate=normal_init(rng, cfg.h, cfg.d, cfg.sigma_init),
            w_up=normal_init(rng, cfg.h, cfg.d, cfg.sigma_init),
            w_down=np.zeros((cfg.d, cfg.h)),
        )
        for _ in range(cfg.g)
    ]
    return GroveLayer(
        router=Router(moe.router.weight.copy()),
        experts=[e.copy() for e in moe.experts],
        adjugates=adjugates,
        bias=moe.bias.copy(),
        config=cfg,
    )
