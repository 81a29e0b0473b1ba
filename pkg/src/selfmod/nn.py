"""Multilayer perceptrons over flat parameter vectors.

Parameters live in a single flat float64 array with a deterministic manifest
(layer by layer, weight before bias, row-major), so a contiguous slice of the
flat vector is a well-defined expansion target and checkpoints are portable.
mlp_apply accepts parameter arrays with leading batch axes, which is how a
whole pool of candidate weights is evaluated in one call.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops, shape_of, tensor
from .autodiff.core import as_value
from .errors import ConfigError, FormatError, ShapeError

_ALLOWED_ACTIVATIONS = ("swish", "softplus", "relu", "tanh", "identity", "sin")


@dataclass(frozen=True)
class MlpSpec:
    """Widths (input, hidden..., output) plus activation names."""

    layer_widths: tuple
    activation: str = "swish"
    final_activation: str | None = None

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ConfigError("an MLP needs at least input and output widths")
        if any(w < 1 for w in widths):
            raise ConfigError(f"all widths must be >= 1, got {widths}")
        if self.activation not in _ALLOWED_ACTIVATIONS:
            raise ConfigError(f"unknown activation '{self.activation}'")
        if self.final_activation is not None and self.final_activation not in _ALLOWED_ACTIVATIONS:
            raise ConfigError(f"unknown final activation '{self.final_activation}'")

    @property
    def in_dim(self):
        return self.layer_widths[0]

    @property
    def out_dim(self):
        return self.layer_widths[-1]

    def manifest(self):
        """Ordered (name, shape, offset) entries for the flat layout."""
        entries = []
        offset = 0
        for i, (w_in, w_out) in enumerate(
            zip(self.layer_widths[:-1], self.layer_widths[1:])
        ):
            entries.append((f"layer{i}/weight", (w_in, w_out), offset))
            offset += w_in * w_out
            entries.append((f"layer{i}/bias", (w_out,), offset))
            offset += w_out
        return tuple(entries)

    def param_count(self):
        name, shape, offset = self.manifest()[-1]
        return offset + int(np.prod(shape))


@dataclass
class ParamVector:
    """Flat float64 parameters plus the manifest that unflattens them."""

    data: np.ndarray
    manifest: tuple

    def __post_init__(self):
        self.data = tensor(self.data).reshape(-1)
        for (_, shape, offset), nxt in zip(self.manifest, list(self.manifest[1:]) + [None]):
            end = offset + int(np.prod(shape))
            if nxt is not None and end != nxt[2]:
                raise ShapeError("manifest offsets are not contiguous")
        total = self.manifest[-1][2] + int(np.prod(self.manifest[-1][1]))
        if total != self.data.size:
            raise ShapeError(
                f"manifest covers {total} entries, data has {self.data.size}"
            )

    def unflatten(self):
        out = {}
        for name, shape, offset in self.manifest:
            n = int(np.prod(shape))
            out[name] = self.data[offset : offset + n].reshape(shape).copy()
        return out

    @staticmethod
    def flatten(named, manifest):
        parts = []
        for name, shape, offset in manifest:
            arr = np.asarray(named[name], dtype=np.float64)
            if arr.shape != tuple(shape):
                raise ShapeError(f"{name}: expected shape {shape}, got {arr.shape}")
            parts.append(arr.reshape(-1))
        return ParamVector(np.concatenate(parts), manifest)

    def copy(self):
        return ParamVector(self.data.copy(), self.manifest)


def init_params(spec: MlpSpec, seed: int, mode: str = "standard") -> ParamVector:
    """Zero or fan-in-uniform initialization, deterministic per seed.

    Standard mode draws weights from U(-sqrt(1/fan_in), +sqrt(1/fan_in)) and
    zeros the biases. Zero mode zeros everything, which is what keeps freshly
    created context functions from perturbing the model.
    """
    manifest = spec.manifest()
    if mode == "zero":
        return ParamVector(np.zeros(spec.param_count()), manifest)
    if mode != "standard":
        raise ConfigError(f"unknown init mode '{mode}'")
    rng = np.random.default_rng(seed)
    parts = []
    for name, shape, _ in manifest:
        if name.endswith("/weight"):
            bound = np.sqrt(1.0 / shape[0])
            parts.append(rng.uniform(-bound, bound, size=shape).reshape(-1))
        else:
            parts.append(np.zeros(int(np.prod(shape))))
    return ParamVector(np.concatenate(parts), manifest)


def _flat_data(params):
    return params.data if isinstance(params, ParamVector) else params


def mlp_apply(spec: MlpSpec, params, x):
    """Evaluate the MLP on rows of x.

    x has shape (..., M, in_dim). params is the flat vector, optionally with
    leading batch axes (..., P); batch axes broadcast against x's.
    """
    p = _flat_data(params)
    x = as_value(x)
    x_shape = shape_of(x)
    if len(x_shape) < 2 or x_shape[-1] != spec.in_dim:
        raise ShapeError(
            f"input of shape {x_shape} does not end in a ({'...'}, M, {spec.in_dim}) block"
        )
    p_shape = shape_of(p)
    if p_shape[-1] != spec.param_count():
        raise ShapeError(
            f"parameter vector has {p_shape[-1]} entries, spec needs {spec.param_count()}"
        )
    batch = tuple(p_shape[:-1])
    act = ops.activation(spec.activation)
    h = x
    n_layers = len(spec.layer_widths) - 1
    offset = 0
    for i, (w_in, w_out) in enumerate(zip(spec.layer_widths[:-1], spec.layer_widths[1:])):
        w_flat = ops.slice_(p, start=offset, stop=offset + w_in * w_out, axis=-1)
        w = ops.reshape(w_flat, shape=batch + (w_in, w_out))
        offset += w_in * w_out
        b_flat = ops.slice_(p, start=offset, stop=offset + w_out, axis=-1)
        b = ops.reshape(b_flat, shape=batch + (1, w_out))
        offset += w_out
        h = ops.add(ops.matmul(h, w), b)
        if i < n_layers - 1:
            h = act(h)
        elif spec.final_activation is not None:
            h = ops.activation(spec.final_activation)(h)
    return h


def concat_inputs(x, ctx_embedding, per_row=False):
    """Append a context embedding to every row of x, order (x, ctx).

    By default the embedding is per-task, shape (..., d), and is repeated
    across x's row axis. With per_row=True it already carries a row axis,
    shape (..., M, d). Batch axes broadcast either way; an empty embedding
    leaves x unchanged.
    """
    x = as_value(x)
    x_shape = shape_of(x)
    if len(x_shape) < 2:
        raise ShapeError("x must have a (..., M, d) shape")
    ctx_shape = shape_of(ctx_embedding)
    if len(ctx_shape) >= 1 and ctx_shape[-1] == 0:
        return x
    m = x_shape[-2]
    if per_row:
        ctx_rows = ctx_embedding
        ctx_batch = ctx_shape[:-2]
    else:
        ctx_rows = ops.reshape(ctx_embedding, shape=ctx_shape[:-1] + (1,) + ctx_shape[-1:])
        ctx_batch = ctx_shape[:-1]
    try:
        batch = np.broadcast_shapes(x_shape[:-2], ctx_batch)
    except ValueError as e:
        raise ShapeError(f"incompatible batch shapes {x_shape} vs {ctx_shape}") from e
    x_full = ops.broadcast_to(x, shape=batch + x_shape[-2:])
    ctx_full = ops.broadcast_to(ctx_rows, shape=batch + (m, ctx_shape[-1]))
    return ops.concat([x_full, ctx_full], axis=-1)


# ---------------------------------------------------------------------------
# checkpoint format: "SMOD" magic, u32 version, length-prefixed JSON manifest,
# raw little-endian float64 payload
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"SMOD"
CHECKPOINT_VERSION = 1


def write_checkpoint(path, sections, meta=None):
    """Write named float arrays plus a JSON metadata block."""
    entries = []
    payload = []
    offset = 0
    for name, arr in sections.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        payload.append(arr.reshape(-1))
    manifest = {
        "sections": entries,
        "meta": meta or {},
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        if payload:
            fh.write(np.concatenate(payload).astype("<f8").tobytes())


def read_checkpoint(path):
    """Read a checkpoint written by write_checkpoint; returns (sections, meta)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (blob_len,) = struct.unpack("<I", raw[8:12])
    blob = raw[12 : 12 + blob_len]
    if len(blob) != blob_len:
        raise FormatError("truncated manifest")
    manifest = json.loads(blob.decode("utf-8"))
    payload = np.frombuffer(raw[12 + blob_len :], dtype="<f8")
    total = sum(int(np.prod(e["shape"])) for e in manifest["sections"])
    if payload.size != total:
        raise FormatError(
            f"payload has {payload.size} floats, manifest expects {total}"
        )
    sections = {}
    for e in manifest["sections"]:
        n = int(np.prod(e["shape"]))
        sections[e["name"]] = (
            payload[e["offset"] : e["offset"] + n].reshape(e["shape"]).copy()
        )
    return sections, manifest.get("meta", {})
