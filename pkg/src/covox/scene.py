"""Seeded synthetic worlds and ray-cast sensor simulators.

A scene is a flat ground plane (z = 0) with oriented box objects, opaque
vertical walls acting as occluders, and agents carrying a spinning LiDAR
and/or a forward camera mounted 1.5 m above the agent origin.  Everything
is deterministic given the scenario seed: object sampling, agent placement
and per-agent sensor noise each consume their own counter-based stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import CameraIntrinsics, Pose, compose, pixel_rays
from .robust import NoiseModel, perturb_pose

_EPS = 1e-12

# Hit classes reported by the ray caster (and one-hot encoded per pixel).
HIT_NONE = 0
HIT_GROUND = 1
HIT_WALL = 2
HIT_OBJECT = 3
_N_HIT_CLASSES = 4

# Sub-stream tags hung off the scenario seed.
_STREAM_OBJECTS = 0
_STREAM_AGENTS = 1
_STREAM_POSE_NOISE = 2
_STREAM_LIDAR = 3

AGENT_RADIUS = 1.5  # footprint clearance used when placing agents
_PLACEMENT_MARGIN = 0.2

DEFAULT_LIDAR_MOUNT = Pose.from_translation(0.0, 0.0, 1.5)
# Camera at the same perch, z axis looking along the agent's +x,
# image x to the agent's right (-y), image y down (-z).
DEFAULT_CAMERA_MOUNT = Pose.from_rt(
    np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]),
    (0.0, 0.0, 1.5),
)


class GenerationFailure(RuntimeError):
    """Rejection sampling could not place the requested scene content."""


class SensorAbsent(RuntimeError):
    """A simulator was invoked for a sensor the agent does not carry."""


@dataclass(frozen=True)
class Wall:
    """Opaque vertical rectangle from p1 to p2, spanning z0 .. z0 + height."""

    p1: tuple[float, float]
    p2: tuple[float, float]
    height: float
    z0: float = 0.0

    def __post_init__(self):
        if self.height <= 0:
            raise ValueError("wall height must be positive")


@dataclass(frozen=True)
class BoxObject:
    """Ground-standing oriented box; extent is (length, width, height)."""

    object_id: int
    center: tuple[float, float]
    yaw: float
    extent: tuple[float, float, float]

    def __post_init__(self):
        if min(self.extent) <= 0:
            raise ValueError("box extent components must be positive")

    @property
    def footprint_radius(self) -> float:
        return float(np.hypot(self.extent[0], self.extent[1]) / 2.0)


@dataclass(frozen=True)
class LidarSpec:
    n_azimuth: int = 360
    elevation_angles: tuple[float, ...] = tuple(np.deg2rad(np.linspace(-12.0, 4.0, 12)))
    max_range: float = 45.0
    range_noise_sigma: float = 0.0

    def __post_init__(self):
        if self.n_azimuth < 4:
            raise ValueError("need at least 4 azimuth steps")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")
        object.__setattr__(self, "elevation_angles", tuple(self.elevation_angles))


@dataclass
class AgentState:
    id: int
    true_pose: Pose
    believed_pose: Pose
    has_lidar: bool = True
    has_camera: bool = True

    def __post_init__(self):
        if not (self.has_lidar or self.has_camera):
            raise ValueError("an agent must keep at least one sensor")


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    n_agents: int = 2
    area: tuple[float, float, float, float] = (-20.0, 20.0, -20.0, 20.0)
    n_objects: int = 6
    occluders: tuple[Wall, ...] = ()
    lidar: LidarSpec = field(default_factory=LidarSpec)
    camera: CameraIntrinsics = field(
        default_factory=lambda: CameraIntrinsics(70.0, 70.0, 48.0, 32.0, 96, 64)
    )
    comm_range: float = 40.0
    dropout: Mapping[int, tuple[str, ...]] = field(default_factory=dict)
    pose_noise_sigma_xy: float = 0.0
    pose_noise_sigma_yaw: float = 0.0

    def __post_init__(self):
        x0, x1, y0, y1 = self.area
        if not (x1 > x0 and y1 > y0):
            raise ValueError("area must be non-degenerate")
        if self.n_agents < 1:
            raise ValueError("need at least one agent")
        if self.comm_range <= 0:
            raise ValueError("comm_range must be positive")
        object.__setattr__(self, "occluders", tuple(self.occluders))
        object.__setattr__(
            self, "dropout", {int(k): tuple(v) for k, v in dict(self.dropout).items()}
        )


def _sample_free_spot(rng, area, radius, taken, n_attempts):
    """Uniform rejection sampling of a disc that clears every taken disc."""
    x0, x1, y0, y1 = area
    for attempt in range(n_attempts):
        x = rng.uniform(x0 + radius, x1 - radius)
        y = rng.uniform(y0 + radius, y1 - radius)
        ok = all(
            np.hypot(x - tx, y - ty) > radius + tr + _PLACEMENT_MARGIN
            for tx, ty, tr in taken
        )
        if ok:
            return x, y, attempt + 1
    raise GenerationFailure(
        f"could not place content after {n_attempts} rejection attempts"
    )


def generate_scene(cfg: ScenarioConfig) -> tuple[list[AgentState], list[BoxObject]]:
    """Sample a deterministic scene: non-overlapping objects, agents on free
    ground, believed poses perturbed per the configured noise sigmas."""
    budget = 10_000
    obj_rng = np.random.default_rng((cfg.seed, _STREAM_OBJECTS))
    objects: list[BoxObject] = []
    taken: list[tuple[float, float, float]] = []
    for oid in range(cfg.n_objects):
        length = obj_rng.uniform(3.6, 5.0)
        width = obj_rng.uniform(1.7, 2.2)
        height = obj_rng.uniform(1.4, 1.9)
        yaw = obj_rng.uniform(-np.pi, np.pi)
        radius = float(np.hypot(length, width) / 2.0)
        x, y, used = _sample_free_spot(obj_rng, cfg.area, radius, taken, budget)
        budget -= used - 1
        objects.append(BoxObject(oid, (x, y), yaw, (length, width, height)))
        taken.append((x, y, radius))

    agent_rng = np.random.default_rng((cfg.seed, _STREAM_AGENTS))
    agents: list[AgentState] = []
    for aid in range(cfg.n_agents):
        x, y, used = _sample_free_spot(agent_rng, cfg.area, AGENT_RADIUS, taken, budget)
        budget -= used - 1
        yaw = agent_rng.uniform(-np.pi, np.pi)
        true_pose = Pose.from_planar(x, y, yaw)
        noise = NoiseModel(cfg.pose_noise_sigma_xy, cfg.pose_noise_sigma_yaw)
        believed = perturb_pose(
            true_pose,
            noise,
            np.random.default_rng((cfg.seed, _STREAM_POSE_NOISE, aid)),
        )
        dropped = cfg.dropout.get(aid, ())
        agents.append(
            AgentState(
                aid,
                true_pose,
                believed,
                has_lidar="lidar" not in dropped,
                has_camera="camera" not in dropped,
            )
        )
        taken.append((x, y, AGENT_RADIUS))
    return agents, objects


def lidar_rng(seed: int, agent_id: int) -> np.random.Generator:
    """Per-agent LiDAR noise stream; parallel simulation stays reproducible."""
    return np.random.default_rng((seed, _STREAM_LIDAR, agent_id))


def _ray_box_t(origin, dirs, box: BoxObject) -> np.ndarray:
    """Slab-method entry distance per ray (inf where the box is missed)."""
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])  # world -> box
    o = rot @ (np.asarray(origin, dtype=np.float64) - np.array([*box.center, 0.0]))
    d = np.asarray(dirs, dtype=np.float64) @ rot.T
    lo = np.array([-box.extent[0] / 2, -box.extent[1] / 2, 0.0])
    hi = np.array([box.extent[0] / 2, box.extent[1] / 2, box.extent[2]])

    near = np.full(d.shape[0], -np.inf)
    far = np.full(d.shape[0], np.inf)
    for ax in range(3):
        da = d[:, ax]
        moving = np.abs(da) > _EPS
        with np.errstate(divide="ignore"):
            t1 = (lo[ax] - o[ax]) / np.where(moving, da, 1.0)
            t2 = (hi[ax] - o[ax]) / np.where(moving, da, 1.0)
        a_near = np.minimum(t1, t2)
        a_far = np.maximum(t1, t2)
        inside = lo[ax] <= o[ax] <= hi[ax]
        a_near = np.where(moving, a_near, -np.inf if inside else np.inf)
        a_far = np.where(moving, a_far, np.inf if inside else -np.inf)
        near = np.maximum(near, a_near)
        far = np.minimum(far, a_far)
    hit = (near <= far) & (near > _EPS)
    return np.where(hit, near, np.inf)


def _ray_wall_t(origin, dirs, wall: Wall) -> np.ndarray:
    """First intersection with an opaque vertical rectangle (inf = miss)."""
    p1 = np.array(wall.p1, dtype=np.float64)
    edge = np.array(wall.p2, dtype=np.float64) - p1
    n = np.array([-edge[1], edge[0], 0.0])
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    denom = d @ n
    moving = np.abs(denom) > _EPS
    t = np.where(
        moving,
        ((np.array([*p1, 0.0]) - o) @ n) / np.where(moving, denom, 1.0),
        np.inf,
    )
    q = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    along = ((q[:, :2] - p1) @ edge) / (edge @ edge)
    ok = (
        moving
        & (t > _EPS)
        & (along >= 0.0)
        & (along <= 1.0)
        & (q[:, 2] >= wall.z0)
        & (q[:, 2] <= wall.z0 + wall.height)
    )
    return np.where(ok, t, np.inf)


def _ray_ground_t(origin, dirs) -> np.ndarray:
    dz = np.asarray(dirs)[:, 2]
    falling = dz < -_EPS
    t = np.where(falling, -origin[2] / np.where(falling, dz, 1.0), np.inf)
    return np.where(t > _EPS, t, np.inf)


def raycast(
    origin,
    dirs: np.ndarray,
    objects: Sequence[BoxObject],
    occluders: Sequence[Wall],
    max_range: float = np.inf,
    include_ground: bool = True,
):
    """First-hit distances for a bundle of rays from one origin.

    Returns (t, kind): t is the scalar along each direction (inf = no hit
    within max_range; directions need not be unit length, so t is in units
    of the direction vector), kind is one of the HIT_* classes.
    """
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    best = np.full(dirs.shape[0], np.inf)
    kind = np.full(dirs.shape[0], HIT_NONE, dtype=np.uint8)
    if include_ground:
        t = _ray_ground_t(origin, dirs)
        closer = t < best
        best[closer] = t[closer]
        kind[closer] = HIT_GROUND
    for wall in occluders:
        t = _ray_wall_t(origin, dirs, wall)
        closer = t < best
        best[closer] = t[closer]
        kind[closer] = HIT_WALL
    for box in objects:
        t = _ray_box_t(origin, dirs, box)
        closer = t < best
        best[closer] = t[closer]
        kind[closer] = HIT_OBJECT
    out_of_range = best > max_range
    best[out_of_range] = np.inf
    kind[out_of_range] = HIT_NONE
    return best, kind


def lidar_directions(spec: LidarSpec) -> np.ndarray:
    """Unit ray directions in the sensor frame, elevation-major order."""
    az = 2.0 * np.pi * np.arange(spec.n_azimuth) / spec.n_azimuth
    el = np.asarray(spec.elevation_angles, dtype=np.float64)
    ce, se = np.cos(el)[:, None], np.sin(el)[:, None]
    ca, sa = np.cos(az)[None, :], np.sin(az)[None, :]
    dirs = np.stack(
        [ce * ca, ce * sa, np.broadcast_to(se, (el.size, az.size))], axis=-1
    )
    return dirs.reshape(-1, 3)


def simulate_lidar(
    agent: AgentState,
    objects: Sequence[BoxObject],
    occluders: Sequence[Wall],
    spec: LidarSpec,
    rng: np.random.Generator,
    mount: Pose = DEFAULT_LIDAR_MOUNT,
) -> np.ndarray:
    """Spin the LiDAR once; returns hit points (N, 3) in the sensor frame.

    Every (azimuth, elevation) ray keeps its first intersection with an
    object, wall or the ground within max_range, plus Gaussian range noise.
    Rays that hit nothing contribute no point.
    """
    if not agent.has_lidar:
        raise SensorAbsent(f"agent {agent.id} carries no lidar")
    sensor = compose(agent.true_pose, mount)
    dirs_local = lidar_directions(spec)
    dirs_world = dirs_local @ sensor.rotation.T
    t, kind = raycast(
        sensor.translation, dirs_world, objects, occluders, spec.max_range
    )
    hit = kind != HIT_NONE
    ranges = t[hit] + rng.normal(0.0, spec.range_noise_sigma, size=int(hit.sum()))
    return dirs_local[hit] * ranges[:, None]


def simulate_camera(
    agent: AgentState,
    objects: Sequence[BoxObject],
    occluders: Sequence[Wall],
    intr: CameraIntrinsics,
    mount: Pose = DEFAULT_CAMERA_MOUNT,
    channels: int = 8,
):
    """Render ground-truth depth plus a deterministic per-pixel feature image.

    Depth is the first-hit pinhole depth per pixel-center ray (inf where
    nothing is hit).  Features are [hit-class one-hot (4), clipped inverse
    depth, constant bias, zero padding to `channels`].
    """
    if not agent.has_camera:
        raise SensorAbsent(f"agent {agent.id} carries no camera")
    if channels < _N_HIT_CLASSES + 2:
        raise ValueError("feature image needs at least 6 channels")
    cam = compose(agent.true_pose, mount)
    dirs_cam = pixel_rays(intr).reshape(-1, 3)
    dirs_world = dirs_cam @ cam.rotation.T
    t, kind = raycast(cam.translation, dirs_world, objects, occluders)
    depth = np.where(kind != HIT_NONE, t, np.inf).reshape(intr.height, intr.width)
    kind = kind.reshape(intr.height, intr.width)

    feats = np.zeros((intr.height, intr.width, channels))
    for cls in range(_N_HIT_CLASSES):
        feats[:, :, cls] = kind == cls
    with np.errstate(divide="ignore"):
        feats[:, :, _N_HIT_CLASSES] = np.where(
            np.isfinite(depth), np.minimum(1.0, 1.0 / depth), 0.0
        )
    feats[:, :, _N_HIT_CLASSES + 1] = 1.0
    return depth, feats
