"""Person/non-person scoring of candidate volumes (inference only)."""

from __future__ import annotations

import numpy as np

from .carving import CROP_DIMS
from .errors import ConfigurationError
from .nn import WeightBundle, conv3d, global_maxpool, maxpool3d, mlp_forward, relu, softmax


def people_arch() -> list[dict]:
    """Default classifier: 3 conv blocks into a global max pool and a 2-way head."""
    return [
        {"kind": "conv3d", "name": "conv1", "in_channels": 1, "out_channels": 8},
        {"kind": "relu"},
        {"kind": "maxpool3d"},
        {"kind": "conv3d", "name": "conv2", "in_channels": 8, "out_channels": 16},
        {"kind": "relu"},
        {"kind": "maxpool3d"},
        {"kind": "conv3d", "name": "conv3", "in_channels": 16, "out_channels": 32},
        {"kind": "relu"},
        {"kind": "global_maxpool"},
        {"kind": "mlp", "name": "head", "sizes": [32, 16, 2]},
    ]


def _validate_arch(bundle: WeightBundle):
    if not bundle.arch:
        raise ConfigurationError("people weights carry no architecture descriptor")
    head = bundle.arch[-1]
    if head.get("kind") != "mlp" or head.get("sizes", [0])[-1] != 2:
        raise ConfigurationError("people classifier must end in a 2-way mlp head")


def person_logits(volume: np.ndarray, bundle: WeightBundle) -> np.ndarray:
    """Run the descriptor over a person volume; returns the 2 class logits."""
    _validate_arch(bundle)
    if volume.shape != CROP_DIMS:
        raise ConfigurationError(f"person volume must be {CROP_DIMS}, got {volume.shape}")
    x = volume.astype(np.float32)[None]
    for layer in bundle.arch:
        kind = layer["kind"]
        if kind == "conv3d":
            x = conv3d(x, bundle.get(f"{layer['name']}.weight"),
                       bundle.get(f"{layer['name']}.bias"))
        elif kind == "relu":
            x = relu(x)
        elif kind == "maxpool3d":
            x = maxpool3d(x)
        elif kind == "global_maxpool":
            x = global_maxpool(x)
        elif kind == "mlp":
            x = mlp_forward(x, bundle.mlp_layers(layer["name"], layer["sizes"]))
        else:
            raise ConfigurationError(f"people classifier: unsupported layer {kind!r}")
    return x


def classify_person(volume: np.ndarray, bundle: WeightBundle) -> float:
    """Probability that the volume is centered on a person."""
    return float(softmax(person_logits(volume, bundle))[1])


def _heuristic_regions(voxel_size: float):
    """Meter-scaled human-proportion regions of the crop: a core cylinder, its
    upper (torso/head) part, and a surrounding clearance ring."""
    def z_range(lo_m, hi_m):
        lo = int(np.floor(lo_m / voxel_size))
        hi = int(np.ceil(hi_m / voxel_size))
        return max(lo, 0), min(hi, CROP_DIMS[2])

    cx, cy = CROP_DIMS[0] // 2, CROP_DIMS[1] // 2
    xs, ys = np.meshgrid(np.arange(CROP_DIMS[0]), np.arange(CROP_DIMS[1]),
                         indexing="ij")
    r2 = ((xs - cx) ** 2 + (ys - cy) ** 2) * voxel_size ** 2
    core_disk = r2 <= 0.35 ** 2
    ring_disk = (r2 > 0.45 ** 2) & (r2 <= 0.75 ** 2)

    def region(disk, lo_m, hi_m):
        lo, hi = z_range(lo_m, hi_m)
        mask = np.zeros(CROP_DIMS, bool)
        mask[:, :, lo:hi] = disk[:, :, None]
        return mask

    return (region(core_disk, 0.2, 2.0), region(core_disk, 1.0, 2.0),
            region(ring_disk, 0.2, 2.0))


def heuristic_person_score(volume: np.ndarray, voxel_size: float = 0.05) -> float:
    """Weights-free fallback: occupancy of human-proportion regions mapped
    through a logistic curve.

    Rewards a filled person-sized core (especially torso/head heights) with
    clearance around it; squat or sprawling furniture scores low. Pipelines
    must flag records produced with this scorer.
    """
    core, upper, ring = _heuristic_regions(voxel_size)
    raw = 0.5 * float(volume[core].mean()) + float(volume[upper].mean()) \
        - 0.5 * float(volume[ring].mean())
    return float(1.0 / (1.0 + np.exp(-10.0 * (raw - 0.28))))
