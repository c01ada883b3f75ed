"""Pseudo-future frame synthesis by forward splatting through depth and poses.

Each valid source pixel is lifted with its depth, moved by the relative pose,
and splatted onto the nearest destination pixel. Conflicts are settled by a
z-buffer with a fully deterministic tie-break chain, so the result is
independent of iteration order and of any parallel scheduling. The learned
refinement stage is replaced by a pluggable hook; two built-ins are provided
(identity, nearest-valid hole fill).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .geom import CameraIntrinsics, Se3Pose, Z_EPS, relative_pose

# depth ties are resolved within buckets of this size (meters)
DEPTH_TIE_QUANTUM = 1e-9


@dataclass
class FrameBundle:
    """One frame: image in [0,1], depth in meters (0 = invalid), pose, index."""

    image: np.ndarray
    depth: np.ndarray
    pose: Se3Pose
    frame_index: int

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.image.ndim == 2:
            self.image = self.image[:, :, None]
        if self.image.ndim != 3:
            raise ValueError(f"image must be HxWxC, got shape {self.image.shape}")
        if self.depth.shape != self.image.shape[:2]:
            raise ValueError(
                f"depth shape {self.depth.shape} does not match image {self.image.shape[:2]}"
            )
        if not np.all(np.isfinite(self.image)):
            raise ValueError("image entries must be finite")
        if self.image.min() < 0.0 or self.image.max() > 1.0:
            raise ValueError("image entries must lie in [0, 1]")
        if not np.all(np.isfinite(self.depth)) or self.depth.min() < 0.0:
            raise ValueError("depth entries must be finite and >= 0")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.depth.shape


@dataclass
class WarpResult:
    """Splatted image/depth plus per-pixel hit mask and winning source slot."""

    image: np.ndarray
    depth: np.ndarray
    hit_mask: np.ndarray
    source_index: np.ndarray


RefinerHook = Callable[[WarpResult], Tuple[np.ndarray, np.ndarray]]


def identity_refiner(result: WarpResult) -> Tuple[np.ndarray, np.ndarray]:
    """Pass the splatted image and depth through unchanged."""
    return result.image, result.depth


def fill_refiner(result: WarpResult) -> Tuple[np.ndarray, np.ndarray]:
    """Fill holes from the nearest hit pixel (Euclidean pixel distance).

    Guarantees full coverage whenever at least one pixel was hit; an all-miss
    input is returned unchanged.
    """
    hit = result.hit_mask
    if not hit.any() or hit.all():
        return result.image.copy(), result.depth.copy()
    _, (iy, ix) = ndimage.distance_transform_edt(~hit, return_indices=True)
    return result.image[iy, ix], result.depth[iy, ix]


def reprojection_flow(
    src: FrameBundle, dst_pose: Se3Pose, k: CameraIntrinsics
) -> Tuple[np.ndarray, np.ndarray]:
    """Geometric flow from src pixels into dst: (u', v', d') plus validity.

    A pixel is valid when its source depth is positive, the moved point lies
    in front of the destination camera, and its nearest destination pixel is
    inside the image. Invalid entries are zeroed.
    """
    h, w = src.shape
    if (w, h) != (k.width, k.height):
        raise ValueError(
            f"frame is {w}x{h} but intrinsics expect {k.width}x{k.height}"
        )
    rel = relative_pose(src.pose, dst_pose)
    r, t = rel.rotation, rel.translation
    d = src.depth
    u = np.arange(w, dtype=np.float64)[None, :]
    v = np.arange(h, dtype=np.float64)[:, None]
    x = (u - k.cx) * d / k.fx
    y = (v - k.cy) * d / k.fy
    # elementwise transform keeps the identity case bit-exact in depth
    xp = r[0, 0] * x + r[0, 1] * y + r[0, 2] * d + t[0]
    yp = r[1, 0] * x + r[1, 1] * y + r[1, 2] * d + t[1]
    zp = r[2, 0] * x + r[2, 1] * y + r[2, 2] * d + t[2]
    valid = (d > 0.0) & (zp > Z_EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        up = k.fx * xp / zp + k.cx
        vp = k.fy * yp / zp + k.cy
    ui = np.floor(up + 0.5)
    vi = np.floor(vp + 0.5)
    valid &= (ui >= 0) & (ui <= w - 1) & (vi >= 0) & (vi <= h - 1)
    flow = np.stack([up, vp, zp], axis=-1)
    flow[~valid] = 0.0
    return flow, valid


def forward_splat(
    sources: Sequence[FrameBundle],
    dst_pose: Se3Pose,
    k: CameraIntrinsics,
    dst_frame_index: int | None = None,
) -> WarpResult:
    """Splat every source into the destination view with a z-buffer.

    Conflicts: smallest destination depth wins; ties within DEPTH_TIE_QUANTUM
    go to the source temporally closest to dst_frame_index, then to the
    smaller source linear pixel index, then to the earlier source slot.
    dst_frame_index=None treats the destination as later than every source,
    i.e. the temporally latest source is preferred on ties.
    """
    sources = list(sources)
    if not sources:
        raise ValueError("forward_splat needs at least one source frame")
    h, w = sources[0].shape
    channels = sources[0].image.shape[2]
    for s in sources:
        if s.shape != (h, w) or s.image.shape[2] != channels:
            raise ValueError("all sources must share image dimensions")

    tgt_parts, dq_parts, prox_parts, spix_parts, slot_parts = [], [], [], [], []
    depth_parts, color_parts = [], []
    for slot, src in enumerate(sources):
        flow, valid = reprojection_flow(src, dst_pose, k)
        if not valid.any():
            continue
        up, vp, zp = flow[..., 0][valid], flow[..., 1][valid], flow[..., 2][valid]
        ui = np.floor(up + 0.5).astype(np.int64)
        vi = np.floor(vp + 0.5).astype(np.int64)
        tgt_parts.append(vi * w + ui)
        dq_parts.append(np.round(zp / DEPTH_TIE_QUANTUM).astype(np.int64))
        if dst_frame_index is None:
            prox = -src.frame_index
        else:
            prox = abs(src.frame_index - dst_frame_index)
        prox_parts.append(np.full(ui.shape, prox, dtype=np.int64))
        spix = np.flatnonzero(valid.ravel())
        spix_parts.append(spix)
        slot_parts.append(np.full(ui.shape, slot, dtype=np.int64))
        depth_parts.append(zp)
        color_parts.append(src.image[valid])

    image = np.zeros((h, w, channels))
    depth = np.zeros((h, w))
    hit = np.zeros((h, w), dtype=bool)
    source_index = np.full((h, w), -1, dtype=np.int64)
    if not tgt_parts:
        return WarpResult(image, depth, hit, source_index)

    tgt = np.concatenate(tgt_parts)
    dq = np.concatenate(dq_parts)
    prox = np.concatenate(prox_parts)
    spix = np.concatenate(spix_parts)
    slot = np.concatenate(slot_parts)
    depths = np.concatenate(depth_parts)
    colors = np.concatenate(color_parts)

    # last key is most significant: sort by target, depth bucket, tie chain
    order = np.lexsort((slot, spix, prox, dq, tgt))
    tgt_sorted = tgt[order]
    first = np.ones(tgt_sorted.shape, dtype=bool)
    first[1:] = tgt_sorted[1:] != tgt_sorted[:-1]
    winners = order[first]

    t = tgt[winners]
    image.reshape(-1, channels)[t] = colors[winners]
    depth.reshape(-1)[t] = depths[winners]
    hit.reshape(-1)[t] = True
    source_index.reshape(-1)[t] = slot[winners]
    return WarpResult(image, depth, hit, source_index)


def compose_pseudo_future(
    past_and_current: Sequence[FrameBundle],
    future_pose: Se3Pose,
    k: CameraIntrinsics,
    refiner: RefinerHook = identity_refiner,
    frame_interval: int | None = None,
) -> FrameBundle:
    """Warp all sources to the future pose and apply the refiner hook.

    Sources must be ordered by ascending frame index; the result carries
    frame_index = current + frame_interval (interval inferred from the last
    two sources when not given, defaulting to 1 for a single source).
    """
    frames = list(past_and_current)
    if not frames:
        raise ValueError("need at least one source frame")
    for a, b in zip(frames, frames[1:]):
        if b.frame_index <= a.frame_index:
            raise ValueError("sources must be ordered by ascending frame_index")
    if frame_interval is None:
        if len(frames) >= 2:
            frame_interval = frames[-1].frame_index - frames[-2].frame_index
        else:
            frame_interval = 1
    future_index = frames[-1].frame_index + frame_interval
    result = forward_splat(frames, future_pose, k, dst_frame_index=future_index)
    image, depth = refiner(result)
    if image.shape != result.image.shape or depth.shape != result.depth.shape:
        raise ValueError("refiner must preserve image and depth shapes")
    return FrameBundle(image, depth, future_pose, future_index)
