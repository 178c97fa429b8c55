"""Named-tensor checkpoint files.

Layout: a JSON header `{"version", "config", "tensors"}` where
`tensors` maps each parameter name to `{"shape", "offset"}`, padded
with spaces to a multiple of 64 bytes, followed by the concatenated
little-endian float32 payloads in directory order.  Offsets are bytes
relative to the payload start, so the header can grow without shifting
tensor math.  The header is plain ASCII; it is recovered by decoding
the file as latin-1 and letting the JSON decoder find its own end.
"""

from __future__ import annotations

import json

import numpy as np

from . import tensor as T
from .errors import FormatError, ParameterError
from .model import ModelConfig

CHECKPOINT_VERSION = 1
_ALIGN = 64
_STATIC_SUFFIXES = (".running_mean", ".running_var")


def save_checkpoint(path, params: T.ParamStore, config: ModelConfig) -> None:
    directory = {}
    blobs = []
    offset = 0
    for name, tensor in params.items():
        arr = np.ascontiguousarray(tensor.data, dtype="<f4")
        directory[name] = {"shape": list(arr.shape), "offset": offset}
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "tensors": directory,
    }
    encoded = json.dumps(header, separators=(",", ":")).encode("ascii")
    encoded += b" " * (-len(encoded) % _ALIGN)
    with open(path, "wb") as fh:
        fh.write(encoded)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[T.ParamStore, ModelConfig]:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        header, end = json.JSONDecoder().raw_decode(raw.decode("latin-1"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: cannot parse checkpoint header: {exc}") from exc
    if not isinstance(header, dict) or set(header) != {"version", "config", "tensors"}:
        raise FormatError(f"{path}: malformed checkpoint header")
    if header["version"] != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {header['version']}")
    config = ModelConfig.from_dict(header["config"])

    payload = raw[end + (-end % _ALIGN):]
    params = T.ParamStore()
    expected = 0
    for name, entry in header["tensors"].items():
        if not isinstance(entry, dict) or set(entry) != {"shape", "offset"}:
            raise FormatError(f"{path}: malformed directory entry for {name!r}")
        shape = tuple(int(s) for s in entry["shape"])
        offset = int(entry["offset"])
        if offset != expected:
            raise FormatError(f"{path}: tensor {name!r} offset {offset}, expected {expected}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = 4 * count
        if offset + nbytes > len(payload):
            raise FormatError(f"{path}: payload truncated at tensor {name!r}")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape)
        params.add(name, arr.copy(), requires_grad=not name.endswith(_STATIC_SUFFIXES))
        expected = offset + nbytes
    if expected != len(payload):
        raise FormatError(f"{path}: {len(payload) - expected} trailing payload bytes")
    return params, config


def average_checkpoints(paths, weights=None) -> tuple[T.ParamStore, ModelConfig]:
    """Convex combination of checkpoints with identical tensor directories."""
    paths = list(paths)
    if not paths:
        raise ParameterError("need at least one checkpoint to average")
    if weights is None:
        weights = [1.0 / len(paths)] * len(paths)
    weights = [float(w) for w in weights]
    if len(weights) != len(paths):
        raise ParameterError(f"{len(paths)} checkpoints but {len(weights)} weights")
    if abs(sum(weights) - 1.0) > 1e-6:
        raise ParameterError(f"weights must sum to 1, got {sum(weights)}")

    loaded = [load_checkpoint(p) for p in paths]
    base_params, base_config = loaded[0]
    base_dir = [(n, t.shape) for n, t in base_params.items()]
    for path, (other, other_config) in zip(paths[1:], loaded[1:]):
        if [(n, t.shape) for n, t in other.items()] != base_dir:
            raise FormatError(f"{path}: tensor directory differs from {paths[0]}")
        if other_config.to_dict() != base_config.to_dict():
            raise FormatError(f"{path}: model config differs from {paths[0]}")

    out = T.ParamStore()
    for name, tensor in base_params.items():
        acc = np.zeros_like(tensor.data, dtype=np.float64)
        for w, (store, _) in zip(weights, loaded):
            acc += w * store[name].data.astype(np.float64)
        # accumulate in float64, store in the checkpoint dtype
        out.add(name, acc.astype(np.float32), requires_grad=tensor.requires_grad)
    return out, base_config
