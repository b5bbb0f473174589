"""Versioned binary checkpoint container.

Layout: magic "WMCK", u32 version, u64 header length, UTF-8 JSON header,
then the raw payload: every tensor named in the header, row-major
float32 little-endian, in header order. The header echoes the full model
config, the step counter, and optionally training RNG state.

Parameters train in float64 and are stored in single precision, so the
first save after training quantizes them; loading yields
float32-representable float64 values, and every save/load cycle after
that is lossless and byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .model import (
    DecoderConfig,
    EncoderConfig,
    ModelConfig,
    ModelState,
    parameter_shapes,
)

MAGIC = b"WMCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_to_dict(config: ModelConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    enc = EncoderConfig(**d.pop("encoder"))
    dec = DecoderConfig(**d.pop("decoder"))
    return ModelConfig(encoder=enc, decoder=dec, **d)


def save_checkpoint(state: ModelState, path=None, rng_state=None) -> bytes:
    """Serialize a ModelState (and optional RNG state) to bytes; also
    writes to `path` when given. Output bytes are a pure function of the
    state, so reruns produce identical files."""
    tensors = []
    chunks = []
    for kind, table in (
        ("param", {n: p.data for n, p in state.params.items()}),
        ("m", state.moments_m),
        ("v", state.moments_v),
    ):
        for name, arr in table.items():
            tensors.append({"name": name, "kind": kind, "shape": list(arr.shape)})
            chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    header = {
        "version": VERSION,
        "config": config_to_dict(state.config),
        "step": state.step,
        "tensors": tensors,
        "rng": rng_state,
    }
    hj = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = b"".join(
        [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(hj)), hj] + chunks
    )
    if path is not None:
        Path(path).write_bytes(blob)
    return blob


def load_checkpoint(src) -> tuple[ModelState, dict | None]:
    """Rebuild (ModelState, rng_state) from bytes or a file path."""
    if isinstance(src, (str, Path)):
        blob = Path(src).read_bytes()
    else:
        blob = bytes(src)
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {blob[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<Q", blob, 8)
    header_end = 16 + hlen
    if len(blob) < header_end:
        raise CheckpointError(
            f"truncated header: need {header_end} bytes, have {len(blob)}"
        )
    header = json.loads(blob[16:header_end].decode("utf-8"))
    config = config_from_dict(header["config"])
    expected = header_end + sum(
        4 * int(np.prod(t["shape"], dtype=np.int64)) for t in header["tensors"]
    )
    if len(blob) != expected:
        raise CheckpointError(
            f"truncated payload: expected {expected} bytes, have {len(blob)}"
        )
    offset = header_end
    params: dict[str, Tensor] = {}
    moments_m: dict[str, np.ndarray] = {}
    moments_v: dict[str, np.ndarray] = {}
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        value = arr.reshape(shape).astype(np.float64)
        if t["kind"] == "param":
            params[t["name"]] = Tensor(value, requires_grad=True)
        elif t["kind"] == "m":
            moments_m[t["name"]] = value
        elif t["kind"] == "v":
            moments_v[t["name"]] = value
        else:
            raise CheckpointError(f"unknown tensor kind {t['kind']!r}")
    expected_names = set(parameter_shapes(config))
    if set(params) != expected_names:
        missing = sorted(expected_names - set(params))
        extra = sorted(set(params) - expected_names)
        raise CheckpointError(
            f"checkpoint/config mismatch: missing {missing}, unexpected {extra}"
        )
    state = ModelState(
        config=config, params=params,
        moments_m=moments_m, moments_v=moments_v,
        step=int(header["step"]),
    )
    return state, header.get("rng")
