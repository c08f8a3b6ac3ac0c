"""Camera model and world<->pixel projection math.

Coordinate conventions (OpenCV style):
  - World: right-handed, +Z up, z=0 is the ground plane.
  - Camera: +Z forward (into the scene), +X right, +Y down.
    X_cam = R @ X_world + t.
  - Image: u right, v down, pixel centers at integer coordinates,
    (0, 0) is the top-left pixel.

Depth is always camera-space z-distance (third row of [R|t]), not ray length.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError

# Perspective division is skipped (point reported out of view) below this
# camera-space depth.
MIN_PROJECTIVE_DEPTH = 1e-12


@dataclass(frozen=True)
class Camera:
    """Calibrated pinhole camera with a working depth range."""

    name: str
    intrinsics: np.ndarray      # 3x3 K, pixels
    rotation: np.ndarray        # 3x3 R, orthonormal, world -> camera
    translation: np.ndarray     # 3-vector t, meters
    width: int
    height: int
    min_depth: float
    max_depth: float

    def __post_init__(self):
        object.__setattr__(self, "intrinsics", np.asarray(self.intrinsics, np.float64).reshape(3, 3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, np.float64).reshape(3))
        r = self.rotation
        if np.max(np.abs(r.T @ r - np.eye(3))) >= 1e-6:
            raise ConfigurationError(f"camera {self.name!r}: rotation is not orthonormal")
        if self.width <= 0 or self.height <= 0:
            raise ConfigurationError(f"camera {self.name!r}: image size must be positive")
        if not (0 <= self.min_depth < self.max_depth):
            raise ConfigurationError(f"camera {self.name!r}: need 0 <= min_depth < max_depth")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates (-R^T t)."""
        return -self.rotation.T @ self.translation

    def ray_directions(self) -> np.ndarray:
        """Per-pixel world-space ray directions, shape (height, width, 3).

        Directions are scaled so that a point at parameter s along the ray
        (from the camera center) has camera-space depth exactly s.
        """
        us, vs = np.meshgrid(np.arange(self.width), np.arange(self.height))
        k_inv = np.linalg.inv(self.intrinsics)
        pix = np.stack([us, vs, np.ones_like(us)], axis=-1).astype(np.float64)
        dirs_cam = pix @ k_inv.T
        # normalize so the camera-space z component is 1: ray parameter == depth
        dirs_cam /= dirs_cam[..., 2:3]
        return dirs_cam @ self.rotation


@dataclass(frozen=True)
class DepthImage:
    """Row-major depth map in meters; 0 marks an invalid sample."""

    samples: np.ndarray  # (height, width) float32

    def __post_init__(self):
        s = np.asarray(self.samples, np.float32)
        if s.ndim != 2:
            raise DataError("depth image must be a 2-d array")
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise DataError("depth samples must be finite and >= 0 (0 = invalid)")
        object.__setattr__(self, "samples", s)

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]


def nearest_pixel(pixel) -> tuple[int, int]:
    """Round a continuous pixel coordinate to the nearest raster pixel."""
    return int(np.rint(pixel[0])), int(np.rint(pixel[1]))


def project(point, camera: Camera):
    """Project a world point into a camera.

    Returns (pixel, cam_depth, in_fov) where pixel is the continuous image
    coordinate, cam_depth the camera-space z-distance, and in_fov is True iff
    the point is in front of the camera and its nearest pixel is inside the
    image. For points at or behind the camera plane no division is performed
    and pixel is (0, 0).
    """
    p_cam = camera.rotation @ np.asarray(point, np.float64) + camera.translation
    cam_depth = float(p_cam[2])
    if cam_depth <= MIN_PROJECTIVE_DEPTH:
        return np.zeros(2), cam_depth, False
    hom = camera.intrinsics @ p_cam
    pixel = hom[:2] / hom[2]
    px, py = nearest_pixel(pixel)
    in_fov = 0 <= px < camera.width and 0 <= py < camera.height
    return pixel, cam_depth, in_fov


def project_points(points: np.ndarray, camera: Camera):
    """Vectorized projection of (N, 3) world points.

    Returns (uv, depth) with uv (N, 2) continuous pixel coordinates and depth
    (N,) camera-space z. Where depth <= MIN_PROJECTIVE_DEPTH the uv entries
    are NaN (no division performed).
    """
    pts = np.asarray(points, np.float64)
    p_cam = pts @ camera.rotation.T + camera.translation
    depth = p_cam[:, 2]
    hom = p_cam @ camera.intrinsics.T
    uv = np.full((len(pts), 2), np.nan)
    ok = depth > MIN_PROJECTIVE_DEPTH
    uv[ok] = hom[ok, :2] / hom[ok, 2:3]
    return uv, depth


def unproject(depth: DepthImage, camera: Camera, rays: np.ndarray | None = None) -> np.ndarray:
    """Back-project valid depth samples to a world point cloud, shape (P, 3)."""
    if (depth.height, depth.width) != (camera.height, camera.width):
        raise ConfigurationError(
            f"depth image {depth.width}x{depth.height} does not match "
            f"camera {camera.name!r} {camera.width}x{camera.height}")
    if rays is None:
        rays = camera.ray_directions()
    valid = depth.samples > 0
    return camera.center + rays[valid] * depth.samples[valid][:, None].astype(np.float64)


def look_at_camera(name, eye, target, intrinsics, width, height,
                   min_depth=0.3, max_depth=20.0) -> Camera:
    """Build a camera at `eye` looking at `target`, world +Z as up."""
    eye = np.asarray(eye, np.float64)
    fwd = np.asarray(target, np.float64) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-9:
        raise ConfigurationError("look_at_camera: eye and target coincide")
    z_axis = fwd / n
    up = np.array([0.0, 0.0, 1.0])
    x_axis = np.cross(z_axis, up)
    xn = np.linalg.norm(x_axis)
    if xn < 1e-9:
        raise ConfigurationError("look_at_camera: view direction is vertical")
    x_axis /= xn
    y_axis = np.cross(z_axis, x_axis)
    rot = np.stack([x_axis, y_axis, z_axis])
    return Camera(name=name, intrinsics=intrinsics, rotation=rot,
                  translation=-rot @ eye, width=width, height=height,
                  min_depth=min_depth, max_depth=max_depth)


def load_calibration(path) -> list[Camera]:
    """Read a calibration file (JSON, one entry per camera)."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read calibration {path}: {e}") from e
    try:
        return [
            Camera(name=c["name"], intrinsics=c["K"], rotation=c["R"],
                   translation=c["t"], width=c["width"], height=c["height"],
                   min_depth=c["min_depth"], max_depth=c["max_depth"])
            for c in doc["cameras"]
        ]
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigurationError(f"malformed calibration {path}: {e}") from e


def save_calibration(path, cameras: list[Camera]):
    doc = {"cameras": [
        {"name": c.name, "width": c.width, "height": c.height,
         "K": c.intrinsics.ravel().tolist(), "R": c.rotation.ravel().tolist(),
         "t": c.translation.tolist(),
         "min_depth": c.min_depth, "max_depth": c.max_depth}
        for c in cameras
    ]}
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
