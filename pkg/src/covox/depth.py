"""Cooperative depth generation.

The camera branch needs per-pixel depth.  Reliable values come from
projecting LiDAR clouds into the image (ego first, then neighbors); a
surrogate predictor fills the rest.  Maps track the provenance of every
pixel so projected ego depths are never overwritten by shared ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

from .geometry import CameraIntrinsics, Pose, project_points, transform_points


class DepthSource(IntEnum):
    ABSENT = 0
    PREDICTED = 1
    EGO_PROJECTED = 2
    NEIGHBOR_PROJECTED = 3


_PROJECTED = (DepthSource.EGO_PROJECTED, DepthSource.NEIGHBOR_PROJECTED)
_WRITABLE = (DepthSource.ABSENT, DepthSource.PREDICTED)


@dataclass(frozen=True)
class DepthBins:
    """Uniform discretisation of [d_min, d_max) into n_bins intervals."""

    d_min: float
    d_max: float
    n_bins: int

    def __post_init__(self):
        if not 0 < self.d_min < self.d_max:
            raise ValueError("need 0 < d_min < d_max")
        if self.n_bins < 2:
            raise ValueError("need at least two depth bins")

    @property
    def width(self) -> float:
        return (self.d_max - self.d_min) / self.n_bins

    def bin_of(self, depths: np.ndarray):
        """Bin indices for an array of metric depths.

        Depths below d_min clamp to bin 0; depths at or beyond d_max are
        reported invalid (they carry no projection information).
        """
        d = np.asarray(depths, dtype=np.float64)
        valid = np.isfinite(d) & (d < self.d_max)
        clamped = np.where(valid, np.maximum(d, self.d_min), self.d_min)
        k = np.floor((clamped - self.d_min) / self.width).astype(np.int64)
        k = np.clip(k, 0, self.n_bins - 1)
        return k, valid

    def centers(self) -> np.ndarray:
        return self.d_min + (np.arange(self.n_bins) + 0.5) * self.width


@dataclass
class DepthMap:
    """Per-pixel depth bin (-1 where absent) plus its provenance tag."""

    bins: DepthBins
    bin_idx: np.ndarray  # (H, W) int16, -1 = absent
    source: np.ndarray  # (H, W) uint8 DepthSource

    @staticmethod
    def empty(bins: DepthBins, height: int, width: int) -> "DepthMap":
        return DepthMap(
            bins,
            np.full((height, width), -1, dtype=np.int16),
            np.zeros((height, width), dtype=np.uint8),
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.bin_idx.shape

    def projected_mask(self) -> np.ndarray:
        return np.isin(self.source, _PROJECTED)

    def projected_count(self) -> int:
        return int(np.count_nonzero(self.projected_mask()))

    def copy(self) -> "DepthMap":
        return DepthMap(self.bins, self.bin_idx.copy(), self.source.copy())


def _min_depth_image(
    cloud: np.ndarray, intr: CameraIntrinsics, bins: DepthBins
) -> np.ndarray:
    """Per-pixel minimum projected depth of a camera-frame cloud (inf = none)."""
    img = np.full(intr.height * intr.width, np.inf)
    pts = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return img.reshape(intr.height, intr.width)
    pix, depth, _ = project_points(intr, pts)
    keep = depth < bins.d_max  # beyond the last bin counts as no projection
    pix, depth = pix[keep], depth[keep]
    flat = pix[:, 1] * intr.width + pix[:, 0]
    np.minimum.at(img, flat, depth)
    return img.reshape(intr.height, intr.width)


def project_cloud_to_depthmap(
    cloud: np.ndarray, intr: CameraIntrinsics, bins: DepthBins
) -> DepthMap:
    """Project a camera-frame cloud; pixels keep the minimum depth seen.

    A pixel hit by several points takes the smallest depth (nearest surface
    wins, the rest are occluded).  Hit pixels are tagged EGO_PROJECTED.
    """
    dmap = DepthMap.empty(bins, intr.height, intr.width)
    img = _min_depth_image(cloud, intr, bins)
    hit = np.isfinite(img)
    k, valid = bins.bin_of(img[hit])
    assert np.all(valid)
    dmap.bin_idx[hit] = k.astype(np.int16)
    dmap.source[hit] = DepthSource.EGO_PROJECTED
    return dmap


def merge_cooperative(
    ego_map: DepthMap,
    neighbor_clouds: Sequence[tuple[Pose, np.ndarray]],
    intr: CameraIntrinsics,
    bins: DepthBins,
) -> DepthMap:
    """Fill gaps in the ego map with depths projected from neighbor clouds.

    Each entry pairs a pose mapping the neighbor cloud into the ego camera
    frame with the cloud itself.  Shared depths only ever land on pixels
    that are absent or predicted; pixels projected from the ego cloud are
    authoritative and stay untouched.  Conflicts among neighbors resolve by
    the same minimum rule as ego projection.
    """
    merged = ego_map.copy()
    if not neighbor_clouds:
        return merged
    best = np.full(ego_map.shape, np.inf)
    for pose, cloud in neighbor_clouds:
        pts = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
        if pts.shape[0] == 0:
            continue
        img = _min_depth_image(transform_points(pose, pts), intr, bins)
        best = np.minimum(best, img)
    writable = np.isin(merged.source, _WRITABLE)
    write = writable & np.isfinite(best)
    k, valid = bins.bin_of(best[write])
    assert np.all(valid)
    merged.bin_idx[write] = k.astype(np.int16)
    merged.source[write] = DepthSource.NEIGHBOR_PROJECTED
    return merged


@dataclass(frozen=True)
class UniformPredictor:
    """Maximum-entropy placeholder: every pixel gets the uniform distribution."""


@dataclass(frozen=True)
class NoisyOraclePredictor:
    """Surrogate depth head: the true bin blurred spatially and across bins.

    sigma_bins is the std (in bins) of the Gaussian applied along the bin
    axis; blur_radius is the half-width of a spatial box blur applied first.
    Both at zero reproduce the exact ground-truth one-hot.  Pixels whose
    true depth lies beyond the bin range (sky, far background) peak at the
    farthest bin, the closest representable statement.
    """

    sigma_bins: float = 1.0
    blur_radius: int = 0

    def __post_init__(self):
        if self.sigma_bins < 0 or self.blur_radius < 0:
            raise ValueError("noise parameters must be non-negative")


def _box_blur_2d(vol: np.ndarray, radius: int) -> np.ndarray:
    """Mean filter over a (2r+1)^2 window, edge windows renormalised."""
    if radius == 0:
        return vol
    h, w = vol.shape[:2]
    out = np.zeros_like(vol)
    norm = np.zeros((h, w))
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            ys = slice(max(0, dy), h + min(0, dy))
            yd = slice(max(0, -dy), h + min(0, -dy))
            xs = slice(max(0, dx), w + min(0, dx))
            xd = slice(max(0, -dx), w + min(0, -dx))
            out[yd, xd] += vol[ys, xs]
            norm[yd, xd] += 1.0
    return out / norm.reshape(h, w, *([1] * (vol.ndim - 2)))


def _bin_gaussian_kernel(sigma: float, n_bins: int) -> np.ndarray:
    if sigma == 0:
        return np.array([1.0])
    half = min(n_bins - 1, int(np.ceil(4 * sigma)))
    k = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-0.5 * (k / sigma) ** 2)
    return g / g.sum()


def predict_depth(
    feature_image: np.ndarray,
    true_depth_image: np.ndarray,
    predictor,
    bins: DepthBins,
) -> np.ndarray:
    """Surrogate per-pixel depth distribution, shape (H, W, D).

    UniformPredictor ignores its inputs.  NoisyOraclePredictor starts from
    the one-hot ground-truth bin (the farthest bin where the true depth is
    out of range), box-blurs spatially, then convolves along the bin axis
    with a discrete Gaussian and renormalises.  Fully deterministic.
    """
    h, w = np.asarray(true_depth_image).shape
    d = bins.n_bins
    if isinstance(predictor, UniformPredictor):
        return np.full((h, w, d), 1.0 / d)
    if not isinstance(predictor, NoisyOraclePredictor):
        raise TypeError(f"unknown predictor {predictor!r}")

    k, valid = bins.bin_of(true_depth_image)
    k = np.where(valid, k, d - 1)
    vol = np.zeros((h, w, d))
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    vol[ys, xs, k] = 1.0

    vol = _box_blur_2d(vol, predictor.blur_radius)
    kern = _bin_gaussian_kernel(predictor.sigma_bins, d)
    if kern.size > 1:
        half = kern.size // 2
        padded = np.concatenate(
            [np.zeros((h, w, half)), vol, np.zeros((h, w, half))], axis=2
        )
        vol = np.stack(
            [padded[:, :, i : i + d] * kern[i] for i in range(kern.size)], axis=0
        ).sum(axis=0)
    vol /= vol.sum(axis=2, keepdims=True)
    return vol


def finalize_distribution(dmap: DepthMap, predicted: np.ndarray) -> np.ndarray:
    """Blend projections and prediction into the final (H, W, D) distribution.

    Projected pixels become exact one-hots at their bin; the rest take the
    predicted row (renormalised).
    """
    h, w = dmap.shape
    d = dmap.bins.n_bins
    if predicted.shape != (h, w, d):
        raise ValueError("prediction shape does not match the depth map")
    out = np.array(predicted, dtype=np.float64)
    out /= out.sum(axis=2, keepdims=True)
    proj = dmap.projected_mask()
    out[proj] = 0.0
    ys, xs = np.nonzero(proj)
    out[ys, xs, dmap.bin_idx[proj]] = 1.0
    return out
