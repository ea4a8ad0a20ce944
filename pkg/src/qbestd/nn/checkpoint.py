"""Binary model checkpoints.

Layout, all little-endian:
    magic "QBEM"
    u32 format version (currently 1)
    u32 header length, then that many bytes of UTF-8 JSON: a list of
        {"kind": ..., "config": {...}} entries, one per layer in order
    per layer, its state tensors in declaration order (trainable
        parameters first, then buffers), each as:
        u32 ndim, u32 x ndim shape, then f32 values row-major

Round-trips are bit-exact for float32 models. Loading reconstructs each
layer from a kind registry; composite layers (residual blocks, input
normalization) register themselves alongside the primitives.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import DataError

MAGIC = b"QBEM"
VERSION = 1

_REGISTRY: dict[str, type] = {}


def register_layer(kind: str):
    """Class decorator: make `kind` loadable from checkpoints."""

    def deco(cls):
        _REGISTRY[kind] = cls
        return cls

    return deco


def layer_spec(layer) -> dict:
    return {"kind": layer.kind, "config": layer.config()}


def save_layers(layers, path) -> None:
    header = json.dumps([layer_spec(l) for l in layers]).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for layer in layers:
            for tensor in layer.state_tensors():
                fh.write(struct.pack("<I", tensor.ndim))
                fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
                fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_layers(path) -> list:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise DataError(f"bad magic in {path}: not a model checkpoint")
    off = 4

    def take(n):
        nonlocal off
        if off + n > len(blob):
            raise DataError(f"truncated checkpoint {path} at byte {off}")
        chunk = blob[off : off + n]
        off += n
        return chunk

    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version} in {path}")
    (hlen,) = struct.unpack("<I", take(4))
    specs = json.loads(take(hlen).decode("utf-8"))

    layers = []
    for spec in specs:
        kind, config = spec["kind"], spec["config"]
        if kind not in _REGISTRY:
            raise DataError(f"unknown layer kind {kind!r} in {path}")
        layer = _REGISTRY[kind].from_config(config)
        for tensor in layer.state_tensors():
            (ndim,) = struct.unpack("<I", take(4))
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
            if shape != tensor.shape:
                raise DataError(
                    f"checkpoint shape {shape} does not match layer "
                    f"{kind!r} tensor of shape {tensor.shape}"
                )
            data = np.frombuffer(take(4 * int(np.prod(shape))), dtype="<f4")
            tensor[...] = data.reshape(shape)
        layers.append(layer)
    if off != len(blob):
        raise DataError(f"trailing bytes after checkpoint payload in {path}")
    return layers
