"""Neural inference primitives (forward only, float32).

Everything here is deterministic and written against plain numpy; each
primitive has an independent naive reference in the test suite. Weight
bundles are ordered named tensors plus an architecture descriptor that lets
the consuming network validate shapes before running.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError

WEIGHTS_MAGIC = b"W4DB"


def conv3d(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """3-d cross-correlation, 3x3x3 kernels, stride 1, zero padding 1.

    x: (C, L, W, H), kernels: (F, C, 3, 3, 3), bias: (F,) -> (F, L, W, H).
    """
    x = np.asarray(x, np.float32)
    kernels = np.asarray(kernels, np.float32)
    bias = np.asarray(bias, np.float32)
    if x.ndim != 4 or kernels.ndim != 5 or kernels.shape[2:] != (3, 3, 3):
        raise ValueError(f"conv3d: bad shapes {x.shape} / {kernels.shape}")
    if kernels.shape[1] != x.shape[0] or bias.shape != (kernels.shape[0],):
        raise ValueError("conv3d: channel mismatch between input, kernels, bias")
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(padded, (3, 3, 3), axis=(1, 2, 3))
    out = np.tensordot(kernels, win, axes=([1, 2, 3, 4], [0, 4, 5, 6]))
    return out + bias[:, None, None, None]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, np.float32), np.float32(0))


def maxpool3d(x: np.ndarray) -> np.ndarray:
    """2x2x2 max pooling, stride 2; trailing odd slices are dropped."""
    x = np.asarray(x, np.float32)
    if x.ndim != 4:
        raise ValueError("maxpool3d expects (C, L, W, H)")
    c, l, w, h = x.shape
    l2, w2, h2 = l // 2, w // 2, h // 2
    if min(l2, w2, h2) < 1:
        raise ValueError(f"maxpool3d: extent too small to pool {x.shape}")
    t = x[:, :l2 * 2, :w2 * 2, :h2 * 2].reshape(c, l2, 2, w2, 2, h2, 2)
    return t.max(axis=(2, 4, 6))


def global_maxpool(x: np.ndarray) -> np.ndarray:
    """Per-channel max over all spatial cells: (F, L, W, H) -> (F,)."""
    x = np.asarray(x, np.float32)
    if x.ndim != 4 or min(x.shape[1:]) < 1:
        raise ValueError("global_maxpool expects non-empty (F, L, W, H)")
    return x.reshape(x.shape[0], -1).max(axis=1)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stabilized softmax over a flat vector.

    Accumulates in float64 (shift invariance then holds to well under 1e-7)
    and returns float32 like every other primitive.
    """
    z = np.asarray(logits, np.float64).reshape(-1)
    if z.size == 0 or not np.all(np.isfinite(z)):
        raise ValueError("softmax needs a non-empty finite vector")
    e = np.exp(z - z.max())
    return (e / e.sum()).astype(np.float32)


def _sigmoid(x):
    # evaluated piecewise to avoid float32 exp overflow for large gates
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1 / (1 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1 + ex)
    return out


@dataclass(frozen=True)
class LstmParams:
    """Gate weights in i, f, g, o order (stacked along the first axis)."""

    w_x: np.ndarray  # (4D, X)
    w_h: np.ndarray  # (4D, D)
    b: np.ndarray    # (4D,)


def lstm_step(x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
              params: LstmParams):
    """One standard LSTM cell update; returns (h, c)."""
    x = np.asarray(x, np.float32)
    h_prev = np.asarray(h_prev, np.float32)
    c_prev = np.asarray(c_prev, np.float32)
    d = h_prev.shape[0]
    if params.w_x.shape != (4 * d, x.shape[0]) or params.w_h.shape != (4 * d, d) \
            or params.b.shape != (4 * d,):
        raise ValueError("lstm_step: parameter shapes do not match the state")
    gates = params.w_x @ x + params.w_h @ h_prev + params.b
    i = _sigmoid(gates[:d])
    f = _sigmoid(gates[d:2 * d])
    g = np.tanh(gates[2 * d:3 * d])
    o = _sigmoid(gates[3 * d:])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


def mlp_forward(x: np.ndarray, layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Affine + relu chain; the final layer is affine only."""
    out = np.asarray(x, np.float32)
    for k, (w, b) in enumerate(layers):
        if w.shape[1] != out.shape[0] or b.shape != (w.shape[0],):
            raise ValueError(f"mlp layer {k}: shape mismatch {w.shape} @ {out.shape}")
        out = w @ out + b
        if k < len(layers) - 1:
            out = relu(out)
    return out


@dataclass
class WeightBundle:
    """Ordered named tensors plus the architecture descriptor they feed."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    arch: list[dict] = field(default_factory=list)

    def get(self, name: str, shape: tuple | None = None) -> np.ndarray:
        if name not in self.tensors:
            raise ConfigurationError(f"weight bundle is missing tensor {name!r}")
        t = self.tensors[name]
        if shape is not None and t.shape != tuple(shape):
            raise ConfigurationError(
                f"tensor {name!r} has shape {t.shape}, expected {tuple(shape)}")
        return t

    def mlp_layers(self, name: str, sizes: list[int]):
        return [(self.get(f"{name}.{k}.weight", (sizes[k + 1], sizes[k])),
                 self.get(f"{name}.{k}.bias", (sizes[k + 1],)))
                for k in range(len(sizes) - 1)]


def save_weights(path, bundle: WeightBundle):
    """Tensor file: magic, u32 count, per tensor (u16 name length, name, u8
    rank, u32 dims, float32 LE data), then a JSON architecture block."""
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(struct.pack("<I", len(bundle.tensors)))
        for name, tensor in bundle.tensors.items():
            data = np.ascontiguousarray(tensor, dtype="<f4")
            raw = name.encode()
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())
        arch = json.dumps(bundle.arch, sort_keys=True).encode()
        f.write(struct.pack("<I", len(arch)))
        f.write(arch)


def load_weights(path) -> WeightBundle:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise ConfigurationError(f"cannot read weights {path}: {e}") from e
    if raw[:4] != WEIGHTS_MAGIC:
        raise ConfigurationError(f"{path}: not a weight bundle file")
    try:
        pos = 4
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + nlen].decode()
            pos += nlen
            (rank,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            tensors[name] = np.frombuffer(raw, "<f4", n, pos).reshape(dims).copy()
            pos += 4 * n
        (alen,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        arch = json.loads(raw[pos:pos + alen].decode())
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, ValueError) as e:
        raise DataError(f"{path}: corrupt weight bundle: {e}") from e
    return WeightBundle(tensors=tensors, arch=arch)


def zero_bundle(arch: list[dict]) -> WeightBundle:
    """All-zero tensors matching an architecture descriptor (testing aid)."""
    bundle = WeightBundle(arch=list(arch))
    for layer in arch:
        kind = layer["kind"]
        if kind == "conv3d":
            f, c = layer["out_channels"], layer["in_channels"]
            bundle.tensors[f"{layer['name']}.weight"] = np.zeros((f, c, 3, 3, 3), np.float32)
            bundle.tensors[f"{layer['name']}.bias"] = np.zeros(f, np.float32)
        elif kind == "mlp":
            sizes = layer["sizes"]
            for k in range(len(sizes) - 1):
                bundle.tensors[f"{layer['name']}.{k}.weight"] = \
                    np.zeros((sizes[k + 1], sizes[k]), np.float32)
                bundle.tensors[f"{layer['name']}.{k}.bias"] = np.zeros(sizes[k + 1], np.float32)
        elif kind == "lstm":
            d, x = layer["hidden"], layer["input"]
            bundle.tensors[f"{layer['name']}.w_x"] = np.zeros((4 * d, x), np.float32)
            bundle.tensors[f"{layer['name']}.w_h"] = np.zeros((4 * d, d), np.float32)
            bundle.tensors[f"{layer['name']}.b"] = np.zeros(4 * d, np.float32)
        elif kind == "attention":
            bundle.tensors[f"{layer['name']}.U"] = \
                np.zeros((layer["hidden"], layer["features"]), np.float32)
        elif kind not in ("relu", "maxpool3d", "global_maxpool"):
            raise ConfigurationError(f"unknown layer kind {kind!r}")
    return bundle
