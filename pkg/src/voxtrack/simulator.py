"""Synthetic scenes, exact depth rendering and ground-truth oracles.

Stands in for a physical multi-camera rig: scripted scenes of boxes and
vertical capsules are ray-cast analytically into depth images, and the same
primitives provide exact occupancy / detection ground truth for tests.

Persons are a vertical capsule body plus a small action-dependent "arm"
primitive, giving action classes a geometric signature without mocap data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .carving import GridSpec, VoxelGrid
from .errors import ConfigurationError, DataError
from .geometry import MIN_PROJECTIVE_DEPTH, Camera, DepthImage, project_points

NUM_ACTIONS = 16

_RAY_EPS = 1e-9


@dataclass(frozen=True)
class ScenePrimitive:
    """A solid box or vertical capsule posed in the world.

    kind "box": size = (ex, ey, ez) full extents, yaw about +Z at the center.
    kind "vertical_capsule": size = (radius, total_height); yaw is ignored.
    label is "furniture" or "person"; persons carry their id.
    """

    kind: str
    center: np.ndarray
    yaw: float = 0.0
    size: tuple = ()
    label: str = "furniture"
    person_id: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, np.float64).reshape(3))
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))
        if self.kind == "box":
            if len(self.size) != 3 or min(self.size) <= 0:
                raise ConfigurationError("box size must be 3 positive extents")
        elif self.kind == "vertical_capsule":
            if len(self.size) != 2 or min(self.size) <= 0:
                raise ConfigurationError("capsule size must be (radius, height) > 0")
            if self.size[1] < 2 * self.size[0]:
                raise ConfigurationError("capsule height must cover both caps")
        else:
            raise ConfigurationError(f"unknown primitive kind {self.kind!r}")

    def capsule_axis(self):
        r, h = self.size
        lo = self.center + np.array([0.0, 0.0, -(h / 2 - r)])
        hi = self.center + np.array([0.0, 0.0, +(h / 2 - r)])
        return lo, hi, r


def box(center, extents, yaw=0.0, label="furniture", person_id=None) -> ScenePrimitive:
    return ScenePrimitive("box", center, yaw, tuple(extents), label, person_id)


def capsule(center, radius, height, label="furniture", person_id=None) -> ScenePrimitive:
    return ScenePrimitive("vertical_capsule", center, 0.0, (radius, height),
                          label, person_id)


def person_primitives(x, y, yaw, action, *, radius=0.22, height=1.7,
                      person_id=0) -> list[ScenePrimitive]:
    """Body capsule plus an arm posed by the action label.

    Arm poses cycle through four geometric variants: 0 hanging at the side,
    1 raised overhead, 2 reaching forward along the yaw, 3 extended sideways.
    """
    body = capsule((x, y, height / 2), radius, height, "person", person_id)
    shoulder_z = 0.80 * height
    arm_r, arm_len = 0.11, 0.65
    side = np.array([-np.sin(yaw), np.cos(yaw)])
    fwd = np.array([np.cos(yaw), np.sin(yaw)])
    pose = action % 4
    if pose == 0:
        ax, ay = np.array([x, y]) + side * (radius + arm_r)
        arm = capsule((ax, ay, shoulder_z - arm_len / 2), arm_r, arm_len,
                      "person", person_id)
    elif pose == 1:
        ax, ay = np.array([x, y]) + side * (radius + arm_r)
        arm = capsule((ax, ay, shoulder_z + arm_len / 2), arm_r, arm_len,
                      "person", person_id)
    elif pose == 2:
        ax, ay = np.array([x, y]) + fwd * (radius + arm_len / 2)
        arm = box((ax, ay, shoulder_z), (arm_len, 2 * arm_r, 2 * arm_r), yaw,
                  "person", person_id)
    else:
        ax, ay = np.array([x, y]) + side * (radius + arm_len / 2)
        arm = box((ax, ay, shoulder_z), (2 * arm_r, arm_len, 2 * arm_r), yaw,
                  "person", person_id)
    return [body, arm]


@dataclass
class PersonTrack:
    """Keyframed pose and per-frame action labels for one scripted person."""

    person_id: int
    keyframes: list  # (frame, x, y, yaw), frames strictly increasing
    actions: list    # (frame, label) steps, frames strictly increasing
    radius: float = 0.22
    height: float = 1.7

    def __post_init__(self):
        frames = [k[0] for k in self.keyframes]
        if not frames or any(b <= a for a, b in zip(frames, frames[1:])):
            raise ConfigurationError("track keyframes must be strictly increasing")
        aframes = [a[0] for a in self.actions]
        if not aframes or any(b <= a for a, b in zip(aframes, aframes[1:])):
            raise ConfigurationError("action steps must be strictly increasing")
        if any(not (0 <= a[1] < NUM_ACTIONS) for a in self.actions):
            raise ConfigurationError(f"action labels must be in [0, {NUM_ACTIONS})")

    def pose_at(self, frame: int):
        """Linear interpolation between keyframes, clamped at the ends."""
        ks = self.keyframes
        if frame <= ks[0][0]:
            return ks[0][1:]
        if frame >= ks[-1][0]:
            return ks[-1][1:]
        nxt = next(i for i, k in enumerate(ks) if k[0] >= frame)
        f0, x0, y0, w0 = ks[nxt - 1]
        f1, x1, y1, w1 = ks[nxt]
        a = (frame - f0) / (f1 - f0)
        return (x0 + a * (x1 - x0), y0 + a * (y1 - y0), w0 + a * (w1 - w0))

    def action_at(self, frame: int) -> int:
        label = self.actions[0][1]
        for f, a in self.actions:
            if f > frame:
                break
            label = a
        return label


@dataclass
class SceneScript:
    """Static furniture plus scripted persons over a frame range."""

    num_frames: int
    frame_rate: float = 15.0
    furniture: list = field(default_factory=list)
    persons: list = field(default_factory=list)

    def scene_at(self, frame: int) -> list[ScenePrimitive]:
        prims = list(self.furniture)
        for p in self.persons:
            x, y, yaw = p.pose_at(frame)
            prims += person_primitives(x, y, yaw, p.action_at(frame),
                                       radius=p.radius, height=p.height,
                                       person_id=p.person_id)
        return prims

    def labels_for(self, person_id: int) -> list[int]:
        track = next(p for p in self.persons if p.person_id == person_id)
        return [track.action_at(f) for f in range(self.num_frames)]


def _ray_box(origin, dirs, prim: ScenePrimitive):
    """Smallest positive ray parameter hitting the (yawed) box, inf if none."""
    c, s = np.cos(prim.yaw), np.sin(prim.yaw)
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])  # world -> box
    o = rot @ (origin - prim.center)
    d = dirs @ rot.T
    half = np.asarray(prim.size) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = (-half - o) / d
        t_hi = (half - o) / d
        near = np.minimum(t_lo, t_hi)
        far = np.maximum(t_lo, t_hi)
        # axis-parallel rays: inside slab -> (-inf, inf), outside -> no hit
        par = np.abs(d) < _RAY_EPS
        inside = np.abs(o) <= half
        near = np.where(par, np.where(inside, -np.inf, np.inf), near)
        far = np.where(par, np.where(inside, np.inf, -np.inf), far)
    t_in = near.max(axis=-1)
    t_out = far.min(axis=-1)
    hit = t_out >= np.maximum(t_in, _RAY_EPS)
    t = np.where(t_in > _RAY_EPS, t_in, t_out)
    return np.where(hit & (t > _RAY_EPS), t, np.inf)


def _first_root(a, b, c):
    """Smallest positive root of a t^2 + 2 b t + c = 0 elementwise, inf if none."""
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = b * b - a * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = (-b - sq) / a
        t1 = (-b + sq) / a
    t0 = np.where((disc >= 0) & (t0 > _RAY_EPS), t0, np.inf)
    t1 = np.where((disc >= 0) & (t1 > _RAY_EPS), t1, np.inf)
    return np.minimum(t0, t1)


def _ray_capsule(origin, dirs, prim: ScenePrimitive):
    """Smallest positive ray parameter hitting the vertical capsule."""
    lo, hi, r = prim.capsule_axis()
    o = origin - lo
    h = hi[2] - lo[2]
    dx, dy, dz = dirs[..., 0], dirs[..., 1], dirs[..., 2]

    # infinite cylinder around the axis, keep hits with z within the segment
    a = dx * dx + dy * dy
    b = o[0] * dx + o[1] * dy
    c = o[0] * o[0] + o[1] * o[1] - r * r
    safe_a = np.where(a < _RAY_EPS, 1.0, a)
    t_cyl = _first_root(safe_a, b, np.broadcast_to(c, b.shape))
    t_cyl = np.where(a < _RAY_EPS, np.inf, t_cyl)
    z_at = o[2] + t_cyl * dz
    t_cyl = np.where((z_at >= 0) & (z_at <= h), t_cyl, np.inf)

    best = t_cyl
    for cap_z in (0.0, h):
        oc = o - np.array([0.0, 0.0, cap_z])
        a_s = dx * dx + dy * dy + dz * dz
        b_s = oc[0] * dx + oc[1] * dy + oc[2] * dz
        c_s = oc @ oc - r * r
        t_sph = _first_root(a_s, b_s, np.broadcast_to(c_s, b_s.shape))
        z_s = oc[2] + t_sph * dz
        outward = z_s <= 0 if cap_z == 0.0 else z_s >= 0
        best = np.minimum(best, np.where(outward, t_sph, np.inf))
    return best


def _pixel_bbox(prim: ScenePrimitive, camera: Camera, shape, pad=2):
    """Image rectangle covering the primitive's silhouette (whole image when
    the bound reaches behind the camera), or None if off screen."""
    if prim.kind == "box":
        c, s = np.abs(np.cos(prim.yaw)), np.abs(np.sin(prim.yaw))
        ex, ey, ez = prim.size
        half = np.array([c * ex + s * ey, s * ex + c * ey, ez]) / 2
    else:
        r, h = prim.size
        half = np.array([r, r, h / 2])
    corners = prim.center + half * np.array(
        [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    uv, z = project_points(corners, camera)
    if np.any(z <= MIN_PROJECTIVE_DEPTH):
        return 0, shape[1], 0, shape[0]
    x0 = max(int(np.floor(uv[:, 0].min())) - pad, 0)
    x1 = min(int(np.ceil(uv[:, 0].max())) + pad + 1, shape[1])
    y0 = max(int(np.floor(uv[:, 1].min())) - pad, 0)
    y1 = min(int(np.ceil(uv[:, 1].max())) + pad + 1, shape[0])
    if x0 >= x1 or y0 >= y1:
        return None
    return x0, x1, y0, y1


def render_depth(primitives: list[ScenePrimitive], camera: Camera, *,
                 noise_sigma: float = 0.0, rng=None,
                 rays: np.ndarray | None = None) -> DepthImage:
    """Ray-cast the scene into a depth image for the camera.

    Each pixel gets the camera-space depth of the nearest primitive along the
    pixel's ray; hits outside [min_depth, max_depth] and misses map to the
    invalid sentinel 0. Optional additive Gaussian noise on valid samples.
    """
    if rays is None:
        rays = camera.ray_directions()
    origin = camera.center
    depth = np.full(rays.shape[:2], np.inf)
    for prim in primitives:
        bbox = _pixel_bbox(prim, camera, depth.shape)
        if bbox is None:
            continue
        x0, x1, y0, y1 = bbox
        sub = rays[y0:y1, x0:x1]
        if prim.kind == "box":
            t = _ray_box(origin, sub, prim)
        else:
            t = _ray_capsule(origin, sub, prim)
        np.minimum(depth[y0:y1, x0:x1], t, out=depth[y0:y1, x0:x1])
    valid = (depth >= camera.min_depth) & (depth <= camera.max_depth)
    out = np.where(valid, depth, 0.0).astype(np.float32)
    if noise_sigma > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        out[valid] += rng.normal(0.0, noise_sigma, size=int(valid.sum())).astype(np.float32)
        bad = (out < camera.min_depth) | (out > camera.max_depth)
        out[bad] = 0.0
    return DepthImage(out)


def _inside_any(points: np.ndarray, primitives: list[ScenePrimitive]) -> np.ndarray:
    inside = np.zeros(len(points), bool)
    for prim in primitives:
        if prim.kind == "box":
            c, s = np.cos(prim.yaw), np.sin(prim.yaw)
            rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
            local = (points - prim.center) @ rot.T
            half = np.asarray(prim.size) / 2
            inside |= np.all(np.abs(local) <= half, axis=1)
        else:
            lo, hi, r = prim.capsule_axis()
            z = np.clip(points[:, 2], lo[2], hi[2])
            nearest = np.stack([np.full(len(points), lo[0]),
                                np.full(len(points), lo[1]), z], axis=1)
            inside |= np.einsum("ij,ij->i", points - nearest, points - nearest) <= r * r
    return inside


def ground_truth_occupancy(primitives: list[ScenePrimitive], spec: GridSpec) -> VoxelGrid:
    """Exact solid: voxel occupied iff its center lies inside any primitive."""
    occ = np.zeros(spec.num_voxels, bool)
    chunk = 1 << 19
    for start in range(0, spec.num_voxels, chunk):
        sl = slice(start, min(start + chunk, spec.num_voxels))
        occ[sl] = _inside_any(spec.voxel_centers(sl), primitives)
    return VoxelGrid(spec, occ.reshape(spec.dims))


def ground_truth_detections(script: SceneScript, frame: int,
                            spec: GridSpec) -> list[tuple[int, tuple[int, int]]]:
    """True (person_id, grid column) pairs at a frame."""
    out = []
    for p in script.persons:
        x, y, _ = p.pose_at(frame)
        idx = spec.world_to_voxel(np.array([[x, y, 0.0]]))[0]
        out.append((p.person_id, (int(idx[0]), int(idx[1]))))
    return out


def save_scene(path, script: SceneScript):
    doc = {
        "num_frames": script.num_frames,
        "frame_rate": script.frame_rate,
        "furniture": [
            {"kind": p.kind, "center": p.center.tolist(), "yaw": p.yaw,
             "size": list(p.size)}
            for p in script.furniture
        ],
        "persons": [
            {"id": p.person_id, "radius": p.radius, "height": p.height,
             "track": [list(k) for k in p.keyframes],
             "actions": [list(a) for a in p.actions]}
            for p in script.persons
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_scene(path) -> SceneScript:
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read scene script {path}: {e}") from e
    try:
        furniture = [ScenePrimitive(p["kind"], p["center"], p.get("yaw", 0.0),
                                    tuple(p["size"]))
                     for p in doc.get("furniture", [])]
        persons = [PersonTrack(person_id=p["id"],
                               keyframes=[tuple(k) for k in p["track"]],
                               actions=[tuple(a) for a in p["actions"]],
                               radius=p.get("radius", 0.22),
                               height=p.get("height", 1.7))
                   for p in doc.get("persons", [])]
        return SceneScript(num_frames=doc["num_frames"],
                           frame_rate=doc.get("frame_rate", 15.0),
                           furniture=furniture, persons=persons)
    except (KeyError, TypeError, ValueError, ConfigurationError) as e:
        raise DataError(f"malformed scene script {path}: {e}") from e


def room_shell(size_x: float, size_y: float, *, height: float = 4.5,
               thickness: float = 0.25, margin: float = 0.06) -> list[ScenePrimitive]:
    """Floor, walls and ceiling surrounding [0,size_x] x [0,size_y].

    Every surface sits `margin` outside that volume (floor top just below
    z=0), so a voxel grid inside it never intersects the shell, while depth
    cameras measure valid background depth instead of seeing out to infinity.
    """
    t, m = thickness, margin
    cx, cy, cz = size_x / 2, size_y / 2, height / 2
    return [
        box((cx, cy, -m - t / 2), (size_x + 4 * t, size_y + 4 * t, t)),
        box((cx, cy, height + m + t / 2), (size_x + 4 * t, size_y + 4 * t, t)),
        box((-m - t / 2, cy, cz), (t, size_y + 4 * t, height + 2 * t)),
        box((size_x + m + t / 2, cy, cz), (t, size_y + 4 * t, height + 2 * t)),
        box((cx, -m - t / 2, cz), (size_x + 4 * t, t, height + 2 * t)),
        box((cx, size_y + m + t / 2, cz), (size_x + 4 * t, t, height + 2 * t)),
    ]


def random_static_scene(rng, bounds_lo, bounds_hi, *, max_boxes=6, max_capsules=3,
                        min_gap=0.3) -> list[ScenePrimitive]:
    """Random non-overlapping boxes and capsules inside world bounds.

    Primitives rest on the ground; placements keep centers at least min_gap +
    radii apart so solids never interpenetrate.
    """
    lo = np.asarray(bounds_lo, np.float64)
    hi = np.asarray(bounds_hi, np.float64)
    prims, placed = [], []

    def fits(x, y, rad):
        return all(np.hypot(x - px, y - py) >= rad + prad + min_gap
                   for px, py, prad in placed)

    for _ in range(rng.integers(1, max_boxes + 1)):
        ex, ey = rng.uniform(0.3, 1.2, 2)
        ez = rng.uniform(0.3, 1.6)
        rad = float(np.hypot(ex, ey) / 2)
        for _ in range(40):
            x = rng.uniform(lo[0] + rad, hi[0] - rad)
            y = rng.uniform(lo[1] + rad, hi[1] - rad)
            if fits(x, y, rad):
                prims.append(box((x, y, ez / 2), (ex, ey, ez), rng.uniform(0, np.pi)))
                placed.append((x, y, rad))
                break
    for _ in range(rng.integers(0, max_capsules + 1)):
        r = rng.uniform(0.15, 0.3)
        h = rng.uniform(1.2, 1.9)
        for _ in range(40):
            x = rng.uniform(lo[0] + r, hi[0] - r)
            y = rng.uniform(lo[1] + r, hi[1] - r)
            if fits(x, y, r):
                prims.append(capsule((x, y, h / 2), r, h))
                placed.append((x, y, r))
                break
    return prims
