"""Solid occupancy volume construction from calibrated depth images.

A voxel survives carving only if every camera agrees it may be solid: a
camera votes "solid" when the voxel projects outside its view, when the
depth sample there is invalid, or when the voxel lies at or behind the
measured surface. Two refinements follow the base carve: a top-down
point-cloud mask that removes unsupported columns, and point injection that
stamps the raw surface points back into the volume.

Voxel indexing is x-major, then y, then z: flat = (ix * Ly + iy) * Lz + iz,
i.e. numpy C-order on arrays of shape (Lx, Ly, Lz).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import backend
from .errors import ConfigurationError, DataError
from .geometry import MIN_PROJECTIVE_DEPTH, Camera, DepthImage

# Person crops are a fixed footprint around a grid column, full person height,
# measured in voxels (31 x 31 columns x 43 up from the ground).
CROP_DIMS = (31, 31, 43)

OCCUPANCY_MAGIC = b"C4DV"

# Fraction of the voxel size subtracted from the carve threshold. Covers the
# curvature sag of the conservative neighborhood-minimum depth sampling so
# that voxels inside solid geometry are never carved (see _carve_thresholds).
DEFAULT_MARGIN_FRACTION = 0.25

_TABLE_CHUNK = 1 << 19


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned voxel lattice; origin is the center of voxel (0, 0, 0).

    z index 0 sits on the ground plane.
    """

    origin: np.ndarray        # (3,) world meters
    voxel_size: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, np.float64).reshape(3))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.voxel_size <= 0:
            raise ConfigurationError("voxel_size must be positive")
        if any(d < 1 for d in self.dims):
            raise ConfigurationError("grid dims must all be >= 1")

    @property
    def num_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def voxel_centers(self, flat_slice: slice) -> np.ndarray:
        """World centers for a flat-index range, shape (k, 3)."""
        idx = np.arange(flat_slice.start, flat_slice.stop)
        ly, lz = self.dims[1], self.dims[2]
        ix = idx // (ly * lz)
        iy = (idx // lz) % ly
        iz = idx % lz
        return self.origin + np.stack([ix, iy, iz], axis=1) * self.voxel_size

    def world_to_voxel(self, points: np.ndarray) -> np.ndarray:
        """Voxel indices (may be out of bounds) of world points, shape (N, 3)."""
        pts = np.asarray(points, np.float64).reshape(-1, 3)
        return np.floor((pts - self.origin) / self.voxel_size + 0.5).astype(np.int64)

    def column_to_world(self, column) -> np.ndarray:
        """World (x, y, z=0 plane of the grid) of a (possibly fractional) column."""
        m, n = float(column[0]), float(column[1])
        return self.origin + np.array([m, n, 0.0]) * self.voxel_size


@dataclass
class VoxelGrid:
    """Dense boolean occupancy over a GridSpec."""

    spec: GridSpec
    occupancy: np.ndarray  # (Lx, Ly, Lz) bool

    def __post_init__(self):
        occ = np.asarray(self.occupancy)
        if occ.shape != self.spec.dims:
            raise ConfigurationError(
                f"occupancy shape {occ.shape} does not match grid dims {self.spec.dims}")
        self.occupancy = occ.astype(bool, copy=False)

    @classmethod
    def empty(cls, spec: GridSpec) -> "VoxelGrid":
        return cls(spec, np.zeros(spec.dims, bool))

    @classmethod
    def full(cls, spec: GridSpec) -> "VoxelGrid":
        return cls(spec, np.ones(spec.dims, bool))

    def count(self) -> int:
        return int(self.occupancy.sum())


class ProjectionTables:
    """Precomputed per-camera voxel projections for the carve hot loop.

    For every voxel and camera: the nearest pixel as a linear index (-1 when
    the projection is out of view or the voxel is not in front of the
    camera), and the camera-space depth. Build once per (grid, rig); carving
    then reduces to a gather/compare pass.
    """

    def __init__(self, spec: GridSpec, cameras: list[Camera],
                 pix: np.ndarray, cam_depth: np.ndarray):
        self.spec = spec
        self.cameras = list(cameras)
        self.pix = pix              # (M, N) int32
        self.cam_depth = cam_depth  # (M, N) float32

    @classmethod
    def build(cls, spec: GridSpec, cameras: list[Camera]) -> "ProjectionTables":
        m, n = len(cameras), spec.num_voxels
        pix = np.full((m, n), -1, np.int32)
        cam_depth = np.zeros((m, n), np.float32)
        for start in range(0, n, _TABLE_CHUNK):
            sl = slice(start, min(start + _TABLE_CHUNK, n))
            centers = spec.voxel_centers(sl)
            for j, cam in enumerate(cameras):
                p_cam = centers @ cam.rotation.T + cam.translation
                z = p_cam[:, 2]
                hom = p_cam @ cam.intrinsics.T
                front = z > MIN_PROJECTIVE_DEPTH
                u = np.where(front, hom[:, 0], 0.0) / np.where(front, hom[:, 2], 1.0)
                v = np.where(front, hom[:, 1], 0.0) / np.where(front, hom[:, 2], 1.0)
                px = np.rint(u).astype(np.int64)
                py = np.rint(v).astype(np.int64)
                ok = front & (px >= 0) & (px < cam.width) & (py >= 0) & (py < cam.height)
                pix[j, sl] = np.where(ok, py * cam.width + px, -1).astype(np.int32)
                cam_depth[j, sl] = z.astype(np.float32)
        return cls(spec, cameras, pix, cam_depth)


def _carve_thresholds(depth: DepthImage, margin: float) -> np.ndarray:
    """Carve threshold image: a voxel with camera depth below the threshold
    at its pixel is provably in free space and gets carved.

    The threshold is the 3x3 neighborhood minimum of the valid depth samples
    minus the margin. The neighborhood minimum bounds the surface depth along
    every ray a voxel center can round to, so voxels inside solid geometry
    always measure at or behind it; invalid samples never carve (threshold
    -inf), mirroring the out-of-view rule.
    """
    d = depth.samples.astype(np.float32, copy=True)
    invalid = d <= 0
    d[invalid] = np.inf
    d = ndimage.minimum_filter(d, size=3, mode="nearest")
    d -= np.float32(margin)
    d[invalid] = -np.inf
    return d.ravel()


def carve(spec: GridSpec, cameras: list[Camera], depths: list[DepthImage],
          *, tables: ProjectionTables | None = None,
          depth_margin: float | None = None, workers: int = 1,
          backend_name: str | None = None) -> VoxelGrid:
    """Carve the occupancy volume from all cameras (intersection of votes).

    With no cameras nothing is carved and the grid is fully occupied. Pass a
    prebuilt ProjectionTables for the same spec/cameras to skip the one-time
    projection cost. `workers` parallelizes the compiled backend; results are
    identical for any worker count and backend.
    """
    if len(cameras) != len(depths):
        raise ConfigurationError(
            f"{len(cameras)} cameras but {len(depths)} depth images")
    for cam, d in zip(cameras, depths):
        if (d.height, d.width) != (cam.height, cam.width):
            raise ConfigurationError(
                f"camera {cam.name!r} is {cam.width}x{cam.height} but depth "
                f"image is {d.width}x{d.height}")
    if not cameras:
        return VoxelGrid.full(spec)
    if tables is None:
        tables = ProjectionTables.build(spec, cameras)
    elif tables.spec != spec or len(tables.cameras) != len(cameras):
        raise ConfigurationError("projection tables do not match spec/cameras")
    margin = DEFAULT_MARGIN_FRACTION * spec.voxel_size if depth_margin is None else depth_margin

    thresholds = np.concatenate([_carve_thresholds(d, margin) for d in depths])
    sizes = [d.samples.size for d in depths]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    out = np.empty(spec.num_voxels, np.uint8)
    backend.get_backend(backend_name).carve_occupancy(
        tables.pix, tables.cam_depth, thresholds, offsets, out, workers)
    return VoxelGrid(spec, out.view(bool).reshape(spec.dims))


def apply_topdown_mask(grid: VoxelGrid, cloud: np.ndarray, dilation: int = 0) -> VoxelGrid:
    """Keep only columns supported by at least one cloud point in the volume.

    The support footprint of a point is its exact x-y voxel cell, optionally
    dilated by a Chebyshev radius; points outside the grid volume (including
    floors below it or ceilings above it) give no support. Removes the thin
    carve tails that appear at camera view boundaries. Returns a new grid.
    """
    spec = grid.spec
    support = np.zeros(spec.dims[:2], bool)
    pts = np.asarray(cloud, np.float64).reshape(-1, 3)
    if len(pts):
        idx = spec.world_to_voxel(pts)
        ok = np.all((idx >= 0) & (idx < np.array(spec.dims)), axis=1)
        support[idx[ok, 0], idx[ok, 1]] = True
        if dilation > 0:
            support = ndimage.binary_dilation(
                support, structure=np.ones((2 * dilation + 1,) * 2, bool))
    return VoxelGrid(spec, grid.occupancy & support[:, :, None])


def inject_points(grid: VoxelGrid, clouds: list[np.ndarray]) -> VoxelGrid:
    """Union the voxels containing any cloud point into the occupancy.

    Counters surface dropout from camera mis-synchronization: the measured
    surface points always survive. Monotone (never clears a voxel).
    """
    spec = grid.spec
    occ = grid.occupancy.copy()
    for cloud in clouds:
        pts = np.asarray(cloud, np.float64).reshape(-1, 3)
        if not len(pts):
            continue
        idx = spec.world_to_voxel(pts)
        ok = np.all((idx >= 0) & (idx < np.array(spec.dims)), axis=1)
        idx = idx[ok]
        occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return VoxelGrid(spec, occ)


def crop_person(grid: VoxelGrid, center) -> np.ndarray:
    """Extract the fixed person volume around a grid column, ground up.

    Output voxel (a, b, c) reads grid voxel (m-15+a, n-15+b, c); out-of-bounds
    reads are empty. `center` may be fractional (rounded to nearest column).
    """
    cm, cn = int(np.rint(center[0])), int(np.rint(center[1]))
    out = np.zeros(CROP_DIMS, bool)
    lx, ly, lz = grid.spec.dims
    half_x, half_y = CROP_DIMS[0] // 2, CROP_DIMS[1] // 2
    x0, y0 = cm - half_x, cn - half_y
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + CROP_DIMS[0], lx), min(y0 + CROP_DIMS[1], ly)
    sz = min(CROP_DIMS[2], lz)
    if sx0 < sx1 and sy0 < sy1:
        out[sx0 - x0:sx1 - x0, sy0 - y0:sy1 - y0, :sz] = \
            grid.occupancy[sx0:sx1, sy0:sy1, :sz]
    return out


def save_occupancy(path, grid: VoxelGrid):
    """Write the occupancy grid file: magic, u32 dims, u32 reserved, then
    bit-packed occupancy, little-endian, x-major voxel order."""
    with open(path, "wb") as f:
        f.write(OCCUPANCY_MAGIC)
        f.write(np.asarray([*grid.spec.dims, 0], np.uint32).astype("<u4").tobytes())
        f.write(np.packbits(grid.occupancy.reshape(-1), bitorder="little").tobytes())


def load_occupancy(path, origin=(0.0, 0.0, 0.0), voxel_size: float = 1.0) -> VoxelGrid:
    """Read an occupancy grid file. The file stores only dims + bits; world
    placement comes from the caller."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != OCCUPANCY_MAGIC:
        raise DataError(f"{path}: not an occupancy grid file")
    header = np.frombuffer(raw[4:20], "<u4")
    dims = tuple(int(d) for d in header[:3])
    n = dims[0] * dims[1] * dims[2]
    bits = np.unpackbits(np.frombuffer(raw[20:], np.uint8), bitorder="little")
    if bits.size < n:
        raise DataError(f"{path}: truncated occupancy payload")
    spec = GridSpec(origin=origin, voxel_size=voxel_size, dims=dims)
    return VoxelGrid(spec, bits[:n].astype(bool).reshape(dims))
