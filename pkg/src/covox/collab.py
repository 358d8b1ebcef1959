"""Modality-guided collaboration: preference thresholds, importance masking,
sparse message packing, BEV warping, attention aggregation and the
synchronous two-phase exchange round.

Round protocol (lockstep, deterministic):

* phase 1 — agents exchange believed poses and downsampled point clouds;
  each agent runs cooperative depth generation and local modal fusion;
* phase 2 — agents broadcast confidence-masked sparse BEV features; each
  receiver warps them into its own frame and aggregates.

Every transmitted scalar is charged to a per-edge ledger, reported both as
a raw element count and in log2 scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import nnkit
from .depth import (
    DepthBins,
    DepthMap,
    UniformPredictor,
    finalize_distribution,
    merge_cooperative,
    predict_depth,
    project_cloud_to_depthmap,
)
from .fusion import (
    FusionParams,
    fuse_modalities,
    fuse_modalities_equal,
    make_equal_params,
    make_fusion_params,
)
from .geometry import Pose, compose, invert, planar_parts, relative, transform_points
from .robust import (
    correct_relative_pose,
    detect_local,
    occupancy_from_grid,
    relative_pose_error,
    transform_detections,
)
from .scene import (
    DEFAULT_CAMERA_MOUNT,
    DEFAULT_LIDAR_MOUNT,
    AgentState,
    BoxObject,
    ScenarioConfig,
    Wall,
    lidar_rng,
    simulate_camera,
    simulate_lidar,
)
from .voxel import Category, GridSpec, VoxelGrid, categorize, collapse, lift_camera, voxelize_points

# Importance surrogate: logistic in the normalised feature norm.
_IMPORTANCE_GAIN = 4.0
_IMPORTANCE_SHIFT = 1.0

# Scalars charged per shared detection box (cx, cy, yaw, l, w, score).
_DETECTION_ELEMENTS = 6

_PRIORITY = np.array([0, 2, 1, 3])  # NORMAL < CAMERA < LIDAR < HYBRID


@dataclass
class Message:
    """One broadcast payload: pose, masked sparse BEV cells, optional cloud."""

    sender_id: int
    pose: Pose
    indices: np.ndarray  # (K, 2) BEV cell indices
    vectors: np.ndarray  # (K, F) cell features, each row has a nonzero entry
    depth_points: Optional[np.ndarray] = None
    feature_elements: int = 0
    depth_elements: int = 0

    @property
    def volume_elements(self) -> int:
        return self.feature_elements + self.depth_elements


@dataclass(frozen=True)
class EdgeRecord:
    sender: int
    receiver: int
    phase: str  # "depth" | "feature" | "detections"
    elements: int

    @property
    def log2(self) -> float:
        return comm_volume_log(self.elements)


@dataclass
class RoundLedger:
    records: list[EdgeRecord] = field(default_factory=list)

    def add(self, sender: int, receiver: int, phase: str, elements: int) -> None:
        self.records.append(EdgeRecord(sender, receiver, phase, int(elements)))

    def total(self, phase: str | None = None, receiver: int | None = None) -> int:
        return sum(
            r.elements
            for r in self.records
            if (phase is None or r.phase == phase)
            and (receiver is None or r.receiver == receiver)
        )

    def total_log2(self, phase: str | None = None) -> float:
        return comm_volume_log(self.total(phase))


@dataclass
class WarpResult:
    bev: np.ndarray
    collisions: int
    dropped: int


@dataclass
class AgentRound:
    """Everything one agent produced during a round."""

    agent_id: int
    fused: VoxelGrid
    bev: np.ndarray  # own collapsed BEV feature plane
    aggregated: np.ndarray  # post-collaboration BEV
    preference: np.ndarray
    scores: np.ndarray
    mask: np.ndarray
    message: Message
    depth_map: Optional[DepthMap] = None
    depth_dist: Optional[np.ndarray] = None
    warp_collisions: int = 0
    # per neighbor id: (error of believed rel pose, error of the pose used)
    pose_errors: dict[int, tuple[tuple[float, float], tuple[float, float]]] = field(
        default_factory=dict
    )


@dataclass(frozen=True)
class PipelineConfig:
    """Per-run processing knobs shared by every agent."""

    grid: GridSpec
    bins: DepthBins
    predictor: object = field(default_factory=UniformPredictor)
    mass_threshold: float = 0.05
    lidar_mount: Pose = DEFAULT_LIDAR_MOUNT
    camera_mount: Pose = DEFAULT_CAMERA_MOUNT
    fusion_mode: str = "biased"  # none | equal | biased
    depth_projection: str = "all"  # no | ego | all
    collab_mode: str = "attention"  # max | concat | attention
    robust: bool = False
    gate_radius: float = 2.0
    collaborate: bool = True
    payload_cell: float = 0.5
    concat_slots: int = 4

    def __post_init__(self):
        if self.fusion_mode not in ("none", "equal", "biased"):
            raise ValueError(f"unknown fusion mode {self.fusion_mode!r}")
        if self.depth_projection not in ("no", "ego", "all"):
            raise ValueError(f"unknown depth projection {self.depth_projection!r}")
        if self.collab_mode not in ("max", "concat", "attention"):
            raise ValueError(f"unknown collaboration mode {self.collab_mode!r}")


@dataclass(frozen=True)
class PipelineParams:
    """Frozen seeded weights for every learned-surrogate component."""

    fusion: FusionParams
    equal_lin: nnkit.LinearMap
    agg_mha: nnkit.MhaParams
    concat_lin: nnkit.LinearMap


def make_pipeline_params(
    grid: GridSpec, seed: int, agg_heads: int = 4, concat_slots: int = 4
) -> PipelineParams:
    f = grid.bev_channels
    return PipelineParams(
        fusion=make_fusion_params(grid.channels, seed),
        equal_lin=make_equal_params(grid.channels, seed),
        agg_mha=nnkit.init_mha(f, agg_heads, (seed, 20)),
        concat_lin=nnkit.init_linear(concat_slots * f, f, (seed, 21)),
    )


def build_comm_graph(
    agents: Sequence[AgentState], comm_range: float
) -> dict[int, tuple[int, ...]]:
    """Symmetric neighbor sets: planar believed-pose distance <= comm_range."""
    if comm_range <= 0:
        raise ValueError("comm_range must be positive")
    graph: dict[int, tuple[int, ...]] = {}
    for a in agents:
        ax, ay, _ = planar_parts(a.believed_pose)
        near = []
        for b in agents:
            if b.id == a.id:
                continue
            bx, by, _ = planar_parts(b.believed_pose)
            if np.hypot(ax - bx, ay - by) <= comm_range:
                near.append(b.id)
        graph[a.id] = tuple(sorted(near))
    return graph


def column_preference(grid: VoxelGrid) -> np.ndarray:
    """Preferred category per BEV column: hybrid > lidar > camera > normal."""
    prio = _PRIORITY[grid.category].max(axis=2)
    lookup = np.array(
        [Category.NORMAL, Category.CAMERA, Category.LIDAR, Category.HYBRID],
        dtype=np.uint8,
    )
    return lookup[prio]


def preference_map(grid: VoxelGrid) -> np.ndarray:
    """Per-column transmission threshold: 0 for hybrid-preferred cells
    (always worth sharing), 0.5 for everything else."""
    return np.where(column_preference(grid) == Category.HYBRID, 0.0, 0.5)


def importance_scores(bev: np.ndarray) -> np.ndarray:
    """Surrogate classification head: logistic in the cell's RMS feature size.

    All-zero cells score sigma(-1) ~ 0.269; scores always lie in (0, 1).
    """
    bev = np.asarray(bev, dtype=np.float64)
    level = np.linalg.norm(bev, axis=2) / np.sqrt(bev.shape[2])
    return 1.0 / (1.0 + np.exp(-(_IMPORTANCE_GAIN * level - _IMPORTANCE_SHIFT)))


def confidence_mask(scores: np.ndarray, preference: np.ndarray) -> np.ndarray:
    """Transmit a cell iff its importance strictly exceeds its threshold."""
    if scores.shape != preference.shape:
        raise ValueError("scores and preference map must share a shape")
    return (scores > preference).astype(np.uint8)


def pack_message(
    bev: np.ndarray,
    mask: np.ndarray,
    pose: Pose,
    sender_id: int = 0,
    depth_payload: Optional[np.ndarray] = None,
) -> Message:
    """Sparse-pack the masked BEV cells and tally the transmitted scalars.

    Only mask=1 cells with at least one nonzero scalar are included; the
    volume ledger counts nonzero feature scalars plus 3 per shared point.
    """
    idx = np.argwhere(np.asarray(mask) == 1)
    vecs = np.asarray(bev)[idx[:, 0], idx[:, 1]]
    keep = np.any(vecs != 0.0, axis=1) if vecs.size else np.zeros(0, dtype=bool)
    idx, vecs = idx[keep], vecs[keep]
    depth_elements = 0 if depth_payload is None else 3 * len(depth_payload)
    return Message(
        sender_id=sender_id,
        pose=pose,
        indices=idx,
        vectors=np.array(vecs),
        depth_points=depth_payload,
        feature_elements=int(np.count_nonzero(vecs)),
        depth_elements=depth_elements,
    )


def comm_volume_log(total_elements: int) -> float:
    """log2 of the element count; 0 maps to 0.0 by convention."""
    if total_elements < 0:
        raise ValueError("element count cannot be negative")
    if total_elements == 0:
        return 0.0
    return float(np.log2(total_elements))


def downsample_cloud(points: np.ndarray, cell: float = 0.5) -> np.ndarray:
    """Voxel-dedup filter: keep the first point per `cell`-sized cube."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return pts
    keys = np.floor(pts / cell).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return pts[np.sort(first)]


def warp_sparse(
    indices: np.ndarray, vectors: np.ndarray, rel_pose: Pose, spec: GridSpec
) -> WarpResult:
    """Resample sparse sender cells into the receiver's BEV lattice.

    Cell centers are mapped through the planar part of the relative pose and
    written to the containing destination cell; on collision the later entry
    wins (collisions are counted), out-of-grid cells are dropped.
    """
    f = spec.bev_channels
    bev = np.zeros((spec.nx, spec.ny, f))
    indices = np.asarray(indices).reshape(-1, 2)
    if indices.shape[0] == 0:
        return WarpResult(bev, 0, 0)
    vectors = np.asarray(vectors, dtype=np.float64).reshape(-1, f)
    centers = spec.bev_cell_centers(indices[:, 0], indices[:, 1])
    x, y, yaw = planar_parts(rel_pose)
    c, s = np.cos(yaw), np.sin(yaw)
    px = c * centers[:, 0] - s * centers[:, 1] + x
    py = s * centers[:, 0] + c * centers[:, 1] + y
    ix = np.floor((px - spec.x_range[0]) / spec.dx).astype(np.int64)
    iy = np.floor((py - spec.y_range[0]) / spec.dy).astype(np.int64)
    inb = (ix >= 0) & (ix < spec.nx) & (iy >= 0) & (iy < spec.ny)
    dropped = int(np.count_nonzero(~inb))
    ix, iy, vecs = ix[inb], iy[inb], vectors[inb]
    if ix.size == 0:
        return WarpResult(bev, 0, dropped)
    flat = ix * spec.ny + iy
    # Later writer wins: keep the last arrival targeting each cell.
    uniq, first_in_rev = np.unique(flat[::-1], return_index=True)
    last = flat.size - 1 - first_in_rev
    bev.reshape(-1, f)[uniq] = vecs[last]
    return WarpResult(bev, int(flat.size - uniq.size), dropped)


def warp_to_ego(msg: Message, ego_pose: Pose, spec: GridSpec) -> WarpResult:
    """Warp a received message using the believed poses on both ends."""
    return warp_sparse(msg.indices, msg.vectors, relative(ego_pose, msg.pose), spec)


def aggregate(
    params: nnkit.MhaParams, ego: np.ndarray, warped: Sequence[np.ndarray]
) -> np.ndarray:
    """Attention aggregation over the per-cell token stack [ego, neighbors...].

    The stack acts as queries, keys and values; the output is the ego
    token's attention result.  All-zero neighbor tokens carry no signal and
    are excluded from the softmax.
    """
    ego = np.asarray(ego, dtype=np.float64)
    nx, ny, f = ego.shape
    n_cells = nx * ny
    tokens = np.stack([ego] + [np.asarray(w, dtype=np.float64) for w in warped])
    t = tokens.shape[0]
    flat = tokens.reshape(t, n_cells, f)
    valid = np.ones((t, n_cells), dtype=bool)
    if t > 1:
        valid[1:] = np.any(flat[1:] != 0.0, axis=2)

    h, dh = params.n_heads, params.head_dim
    q = params.wq.apply(flat[0]).reshape(n_cells, h, dh)
    k = params.wk.apply(flat).reshape(t, n_cells, h, dh)
    v = params.wv.apply(flat).reshape(t, n_cells, h, dh)
    scores = np.einsum("chd,tchd->tch", q, k) / np.sqrt(dh)
    scores[~valid] = -np.inf
    weights = nnkit.softmax(scores, axis=0)
    ctx = np.einsum("tch,tchd->chd", weights, v).reshape(n_cells, f)
    return params.wo.apply(ctx).reshape(nx, ny, f)


def aggregate_max(ego: np.ndarray, warped: Sequence[np.ndarray]) -> np.ndarray:
    """Ablation baseline: elementwise max over the token stack."""
    out = np.array(ego, dtype=np.float64)
    for w in warped:
        out = np.maximum(out, w)
    return out


def aggregate_concat(
    lin: nnkit.LinearMap, ego: np.ndarray, warped: Sequence[np.ndarray], slots: int
) -> np.ndarray:
    """Ablation baseline: channel-concatenate a fixed token budget + linear."""
    toks = [np.asarray(ego, dtype=np.float64)]
    toks += [np.asarray(w, dtype=np.float64) for w in warped[: slots - 1]]
    while len(toks) < slots:
        toks.append(np.zeros_like(toks[0]))
    return lin.apply(np.concatenate(toks, axis=2))


def _empty_depth_map(pipe: PipelineConfig, scenario: ScenarioConfig) -> DepthMap:
    return DepthMap.empty(pipe.bins, scenario.camera.height, scenario.camera.width)


def run_round(
    agents: Sequence[AgentState],
    objects: Sequence[BoxObject],
    occluders: Sequence[Wall],
    scenario: ScenarioConfig,
    pipe: PipelineConfig,
    params: PipelineParams,
) -> tuple[dict[int, AgentRound], RoundLedger]:
    """Execute one synchronous perception + communication round.

    Degraded agents (dropped sensors) follow identity fallbacks instead of
    aborting; a single agent simply skips both exchange phases.
    """
    agents = sorted(agents, key=lambda a: a.id)
    by_id = {a.id: a for a in agents}
    ledger = RoundLedger()
    if pipe.collaborate:
        graph = build_comm_graph(agents, scenario.comm_range)
    else:
        graph = {a.id: () for a in agents}

    # --- sensing -------------------------------------------------------
    clouds_sensor: dict[int, np.ndarray] = {}
    clouds_agent: dict[int, np.ndarray] = {}
    cam_images: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for a in agents:
        if a.has_lidar:
            pts = simulate_lidar(
                a, objects, occluders, scenario.lidar,
                lidar_rng(scenario.seed, a.id), pipe.lidar_mount,
            )
            clouds_sensor[a.id] = pts
            clouds_agent[a.id] = transform_points(pipe.lidar_mount, pts)
        if a.has_camera and pipe.fusion_mode != "none":
            cam_images[a.id] = simulate_camera(
                a, objects, occluders, scenario.camera,
                pipe.camera_mount, pipe.grid.channels,
            )

    lidar_grids = {
        a.id: (
            voxelize_points(clouds_agent[a.id], pipe.grid)
            if a.has_lidar
            else VoxelGrid.empty(pipe.grid)
        )
        for a in agents
    }

    # --- relative poses (and optional correction) -----------------------
    rel: dict[tuple[int, int], Pose] = {}
    pose_errors: dict[tuple[int, int], tuple] = {}
    for a in agents:
        for j in graph[a.id]:
            rel[(a.id, j)] = relative(a.believed_pose, by_id[j].believed_pose)
    if pipe.robust and rel:
        local_dets = {
            a.id: (
                detect_local(occupancy_from_grid(lidar_grids[a.id]), pipe.grid)
                if a.has_lidar
                else []
            )
            for a in agents
        }
        for (i, j), init in list(rel.items()):
            nbr = transform_detections(local_dets[j], init)
            rel[(i, j)] = correct_relative_pose(
                init, local_dets[i], nbr, pipe.gate_radius
            )
            ledger.add(j, i, "detections", _DETECTION_ELEMENTS * len(local_dets[j]))
    for a in agents:
        for j in graph[a.id]:
            truth = relative(a.true_pose, by_id[j].true_pose)
            believed = relative(a.believed_pose, by_id[j].believed_pose)
            pose_errors[(a.id, j)] = (
                relative_pose_error(believed, truth),
                relative_pose_error(rel[(a.id, j)], truth),
            )

    # --- phase 1: pose + depth payload exchange -------------------------
    payloads: dict[int, np.ndarray] = {}
    if pipe.depth_projection == "all":
        for a in agents:
            if a.has_lidar:
                payloads[a.id] = downsample_cloud(clouds_agent[a.id], pipe.payload_cell)
        for a in agents:
            for j in graph[a.id]:
                if j in payloads:
                    ledger.add(j, a.id, "depth", 3 * payloads[j].shape[0])

    # --- local perception ------------------------------------------------
    results: dict[int, AgentRound] = {}
    fused_grids: dict[int, VoxelGrid] = {}
    bevs: dict[int, np.ndarray] = {}
    depth_maps: dict[int, Optional[DepthMap]] = {}
    dists: dict[int, Optional[np.ndarray]] = {}
    for a in agents:
        camera_grid = VoxelGrid.empty(pipe.grid)
        dmap = None
        dist = None
        if a.id in cam_images:
            depth_img, feat_img = cam_images[a.id]
            cam_from_agent = invert(pipe.camera_mount)
            if pipe.depth_projection != "no" and a.has_lidar:
                cloud_cam = transform_points(
                    compose(cam_from_agent, pipe.lidar_mount), clouds_sensor[a.id]
                )
                dmap = project_cloud_to_depthmap(cloud_cam, scenario.camera, pipe.bins)
            else:
                dmap = _empty_depth_map(pipe, scenario)
            if pipe.depth_projection == "all":
                shared = [
                    (compose(cam_from_agent, rel[(a.id, j)]), payloads[j])
                    for j in graph[a.id]
                    if j in payloads
                ]
                dmap = merge_cooperative(dmap, shared, scenario.camera, pipe.bins)
            pred = predict_depth(feat_img, depth_img, pipe.predictor, pipe.bins)
            dist = finalize_distribution(dmap, pred)
            camera_grid = lift_camera(
                feat_img, dist, scenario.camera, pipe.camera_mount,
                pipe.grid, pipe.mass_threshold, pipe.bins.centers(),
            ).grid
        cat = categorize(lidar_grids[a.id], camera_grid)
        if pipe.fusion_mode == "equal":
            fused = fuse_modalities_equal(params.equal_lin, cat)
        else:
            fused = fuse_modalities(params.fusion, cat)
        fused_grids[a.id] = fused
        bevs[a.id] = collapse(fused)
        depth_maps[a.id] = dmap
        dists[a.id] = dist

    # --- phase 2: masked feature broadcast -------------------------------
    messages: dict[int, Message] = {}
    masks: dict[int, np.ndarray] = {}
    prefs: dict[int, np.ndarray] = {}
    scores_by_agent: dict[int, np.ndarray] = {}
    for a in agents:
        pref = preference_map(fused_grids[a.id])
        scores = importance_scores(bevs[a.id])
        mask = confidence_mask(scores, pref)
        messages[a.id] = pack_message(bevs[a.id], mask, a.believed_pose, a.id)
        prefs[a.id], scores_by_agent[a.id], masks[a.id] = pref, scores, mask

    for a in agents:
        warped = []
        collisions = 0
        for j in graph[a.id]:
            msg = messages[j]
            wr = warp_sparse(msg.indices, msg.vectors, rel[(a.id, j)], pipe.grid)
            warped.append(wr.bev)
            collisions += wr.collisions
            ledger.add(j, a.id, "feature", msg.feature_elements)
        if pipe.collab_mode == "attention":
            agg = aggregate(params.agg_mha, bevs[a.id], warped)
        elif pipe.collab_mode == "max":
            agg = aggregate_max(bevs[a.id], warped)
        else:
            agg = aggregate_concat(
                params.concat_lin, bevs[a.id], warped, pipe.concat_slots
            )
        results[a.id] = AgentRound(
            agent_id=a.id,
            fused=fused_grids[a.id],
            bev=bevs[a.id],
            aggregated=agg,
            preference=prefs[a.id],
            scores=scores_by_agent[a.id],
            mask=masks[a.id],
            message=messages[a.id],
            depth_map=depth_maps[a.id],
            depth_dist=dists[a.id],
            warp_collisions=collisions,
            pose_errors={
                j: pose_errors[(a.id, j)] for j in graph[a.id]
            },
        )
    return results, ledger
