"""Person candidate proposal from the top-down height envelope.

The envelope collapses the volume to a per-column maximum occupied height;
people show up as local maxima after Gaussian smoothing, which non-maximum
suppression turns into a short candidate list.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .carving import VoxelGrid


@dataclass
class Candidate:
    """A proposed person column: the implied cuboid is the fixed crop
    footprint around the column, full grid height."""

    column: tuple[int, int]
    peak_height: float
    person_prob: float = 0.0
    crop: np.ndarray | None = None


def topdown_envelope(grid: VoxelGrid) -> np.ndarray:
    """Max occupied z-index per column (0 for empty columns), (Lx, Ly) float32."""
    lz = grid.spec.dims[2]
    heights = grid.occupancy * np.arange(lz, dtype=np.int32)
    return heights.max(axis=2).astype(np.float32)


def smooth(envelope: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel radius ceil(3*sigma), replicate border.

    sigma 0 is the identity. The kernel is normalized, so constant maps pass
    through unchanged.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    env = np.asarray(envelope, np.float32)
    if sigma == 0:
        return env.copy()
    radius = int(np.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()
    out = ndimage.correlate1d(env.astype(np.float64), kernel, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="nearest")
    return out.astype(np.float32)


def detect_candidates(envelope: np.ndarray, nms_radius: int = 5,
                      min_height: float = 16.0) -> list[Candidate]:
    """Strict local maxima of the envelope, sorted by descending height.

    A cell survives only if it is strictly greater than every other cell
    within the Chebyshev nms_radius and at least min_height tall. Plateau
    cells suppress each other, so output order (height desc, then column) is
    the only tie-breaking needed and results are fully deterministic.
    """
    if nms_radius < 1:
        raise ValueError("nms_radius must be >= 1")
    env = np.asarray(envelope)
    size = 2 * nms_radius + 1
    window_max = ndimage.maximum_filter(env, size=size, mode="constant", cval=-np.inf)
    peaks = np.argwhere((env >= window_max) & (env >= min_height))
    out = []
    lx, ly = env.shape
    for m, n in peaks:
        value = env[m, n]
        block = env[max(m - nms_radius, 0):m + nms_radius + 1,
                    max(n - nms_radius, 0):n + nms_radius + 1]
        # strictly greater than all neighbors <=> unique maximum in the window
        if np.count_nonzero(block == value) == 1 and value == block.max():
            out.append(Candidate(column=(int(m), int(n)), peak_height=float(value)))
    out.sort(key=lambda c: (-c.peak_height, c.column))
    return out
