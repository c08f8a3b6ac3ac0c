"""Per-person action inference over cropped person volumes.

Each frame, the person volume runs through a 3-d conv stack; the resulting
feature volume is pooled two ways, by soft attention conditioned on the
previous recurrent state (the "where to look" signal) and by a global
max-pool branch (the "what does it all look like" signal). Both feed an LSTM
whose hidden state drives a 16-way action head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .carving import CROP_DIMS
from .errors import ConfigurationError
from .nn import (LstmParams, WeightBundle, conv3d, global_maxpool, lstm_step,
                 maxpool3d, mlp_forward, relu, softmax)
from .simulator import NUM_ACTIONS

HIDDEN_SIZE = 64
FEATURE_CHANNELS = 32


def action_arch() -> list[dict]:
    """Default net: 3 conv blocks (two pooled) -> 32x7x7x10 feature volume,
    attention + a one-conv global branch, LSTM(64), 16-way mlp head."""
    return [
        {"kind": "conv3d", "name": "conv1", "in_channels": 1, "out_channels": 8},
        {"kind": "relu"},
        {"kind": "maxpool3d"},
        {"kind": "conv3d", "name": "conv2", "in_channels": 8, "out_channels": 16},
        {"kind": "relu"},
        {"kind": "maxpool3d"},
        {"kind": "conv3d", "name": "conv3", "in_channels": 16, "out_channels": 32},
        {"kind": "relu"},
        {"kind": "conv3d", "name": "convg", "in_channels": 32, "out_channels": 32,
         "branch": "global"},
        {"kind": "attention", "name": "attn", "hidden": HIDDEN_SIZE,
         "features": FEATURE_CHANNELS},
        {"kind": "lstm", "name": "lstm", "input": 2 * FEATURE_CHANNELS,
         "hidden": HIDDEN_SIZE},
        {"kind": "mlp", "name": "head", "sizes": [HIDDEN_SIZE, 32, NUM_ACTIONS]},
    ]


@dataclass
class ActionState:
    """Per-trajectory recurrent state."""

    h: np.ndarray
    c: np.ndarray

    @classmethod
    def initial(cls, hidden: int = HIDDEN_SIZE) -> "ActionState":
        return cls(np.zeros(hidden, np.float32), np.zeros(hidden, np.float32))


def attention_pool(feature_volume: np.ndarray, h_prev: np.ndarray,
                   u: np.ndarray):
    """Soft attention over feature-volume cells conditioned on h_prev.

    Logit of cell (i,j,k) is h_prev^T U v_ijk; the softmax over all cells
    weights a convex combination of the cell features. Returns (pooled (F,),
    alpha (L, W, H)); alpha sums to 1.
    """
    v = np.asarray(feature_volume, np.float32)
    h_prev = np.asarray(h_prev, np.float32)
    u = np.asarray(u, np.float32)
    if v.ndim != 4 or u.shape != (h_prev.shape[0], v.shape[0]):
        raise ValueError(f"attention shapes disagree: V {v.shape}, U {u.shape}, "
                         f"h {h_prev.shape}")
    query = h_prev @ u                                   # (F,)
    beta = np.tensordot(query, v, axes=([0], [0]))       # (L, W, H)
    alpha = softmax(beta.reshape(-1)).reshape(beta.shape)
    pooled = np.tensordot(v, alpha, axes=([1, 2, 3], [0, 1, 2]))
    return pooled, alpha


def _feature_stack(volume: np.ndarray, bundle: WeightBundle):
    """Main conv stack output V plus the global-branch feature vector."""
    if volume.shape != CROP_DIMS:
        raise ConfigurationError(f"person volume must be {CROP_DIMS}, got {volume.shape}")
    x = volume.astype(np.float32)[None]
    g = None
    for layer in bundle.arch:
        kind = layer["kind"]
        if kind == "conv3d" and layer.get("branch") == "global":
            branch = conv3d(x, bundle.get(f"{layer['name']}.weight"),
                            bundle.get(f"{layer['name']}.bias"))
            g = global_maxpool(relu(branch))
        elif kind == "conv3d":
            x = conv3d(x, bundle.get(f"{layer['name']}.weight"),
                       bundle.get(f"{layer['name']}.bias"))
        elif kind == "relu":
            x = relu(x)
        elif kind == "maxpool3d":
            x = maxpool3d(x)
        elif kind in ("attention", "lstm", "mlp"):
            break
        else:
            raise ConfigurationError(f"action net: unsupported layer {kind!r}")
    if g is None:
        raise ConfigurationError("action net descriptor lacks a global branch")
    return x, g


def _recurrent_layers(bundle: WeightBundle):
    attn = next((l for l in bundle.arch if l["kind"] == "attention"), None)
    lstm = next((l for l in bundle.arch if l["kind"] == "lstm"), None)
    head = next((l for l in bundle.arch if l["kind"] == "mlp"), None)
    if attn is None or lstm is None or head is None:
        raise ConfigurationError("action net needs attention, lstm and mlp layers")
    u = bundle.get(f"{attn['name']}.U", (attn["hidden"], attn["features"]))
    d, xdim = lstm["hidden"], lstm["input"]
    params = LstmParams(
        w_x=bundle.get(f"{lstm['name']}.w_x", (4 * d, xdim)),
        w_h=bundle.get(f"{lstm['name']}.w_h", (4 * d, d)),
        b=bundle.get(f"{lstm['name']}.b", (4 * d,)))
    layers = bundle.mlp_layers(head["name"], head["sizes"])
    if head["sizes"][-1] != NUM_ACTIONS:
        raise ConfigurationError(f"action head must be {NUM_ACTIONS}-way")
    return u, params, layers


def action_step(crop: np.ndarray, state: ActionState, bundle: WeightBundle):
    """One frame of action inference for one person.

    Returns (probabilities (16,), new ActionState, alpha map). Attention uses
    the hidden state from the previous frame.
    """
    u, lstm_params, head = _recurrent_layers(bundle)
    v, g = _feature_stack(crop, bundle)
    pooled, alpha = attention_pool(v, state.h, u)
    h, c = lstm_step(np.concatenate([pooled, g]), state.h, state.c, lstm_params)
    probs = softmax(mlp_forward(h, head))
    return probs, ActionState(h, c), alpha


def classify_sequence(crops, bundle: WeightBundle) -> list[int]:
    """Per-frame action labels for a time-ordered crop sequence.

    The recurrent state starts at zero and threads through the frames;
    argmax ties resolve to the lowest label id.
    """
    if not len(crops):
        raise ValueError("classify_sequence needs a non-empty sequence")
    state = ActionState.initial()
    labels = []
    for crop in crops:
        probs, state, _ = action_step(crop, state, bundle)
        labels.append(int(np.argmax(probs)))
    return labels
