"""Voxel visibility, block downsampling, and multi-frame 3D feature fusion.

Scene grids live in a level "scene frame" anchored at the current camera:
x right, y forward, z up. The fixed permutation SCENE_TO_CAM converts scene
axes to camera axes (x right, y down, z forward). Every voxel center is
carried through the relative pose into each temporal frame, projected, and
tested against that frame's depth map: a voxel is visible when its projected
depth lies within theta_d of the depth sampled at the nearest pixel.

Voxels are grouped into 4x4x4 blocks (visible if any member voxel is, with
projection coordinates averaged over the visible members); per-frame 2D
features are then sampled at the averaged coordinates and concatenated
frame-major, zero-padded wherever a frame contributed nothing.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np

from . import defaults
from .geom import (
    CameraIntrinsics,
    Se3Pose,
    Z_EPS,
    bilinear_sample_many,
    relative_pose,
)
from .warp import FrameBundle

# columns are the scene basis vectors expressed in camera axes
SCENE_TO_CAM = np.array(
    [
        [1.0, 0.0, 0.0],
        [0.0, 0.0, -1.0],
        [0.0, 1.0, 0.0],
    ]
)


@dataclass(frozen=True)
class SceneRange:
    """Axis-aligned voxel box in the scene frame of the current camera."""

    origin: np.ndarray
    extents: np.ndarray
    voxel_size: float

    def __post_init__(self):
        origin = np.array(self.origin, dtype=np.float64).reshape(3)
        extents = np.array(self.extents, dtype=np.float64).reshape(3)
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if not (np.all(np.isfinite(origin)) and np.all(extents > 0)):
            raise ValueError("origin must be finite and extents positive")
        n = np.round(extents / self.voxel_size)
        if np.any(np.abs(n * self.voxel_size - extents) > 1e-9):
            raise ValueError(
                f"extents {extents.tolist()} not divisible by voxel_size {self.voxel_size}"
            )
        origin.flags.writeable = False
        extents.flags.writeable = False
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))

    @classmethod
    def default(cls) -> "SceneRange":
        """Full-scale box: 51.2 x 51.2 x 6.4 m at 0.2 m -> 256 x 256 x 32."""
        ex = defaults.SCENE_EXTENTS
        return cls(
            (-ex[0] / 2.0, 0.0, -defaults.GROUND_CLEARANCE),
            ex,
            defaults.VOXEL_SIZE,
        )

    @property
    def dims(self) -> Tuple[int, int, int]:
        n = np.round(self.extents / self.voxel_size).astype(int)
        return int(n[0]), int(n[1]), int(n[2])

    @property
    def block_dims(self) -> Tuple[int, int, int]:
        d = self.dims
        e = defaults.BLOCK_EDGE
        if any(v % e for v in d):
            raise ValueError(f"dims {d} not divisible by block edge {e}")
        return d[0] // e, d[1] // e, d[2] // e


@dataclass
class SceneGrid:
    """Labeled voxel volume: 0 = empty, 255 = unknown/invalid."""

    range: SceneRange
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.shape != self.range.dims:
            raise ValueError(
                f"label dims {self.labels.shape} do not match range dims {self.range.dims}"
            )


@dataclass
class BlockVisibility:
    """Per-frame block visibility flags and averaged projection coordinates."""

    block_dims: Tuple[int, int, int]
    visible: np.ndarray       # (F, BX, BY, BZ) bool
    proj_uv_d: np.ndarray     # (F, BX, BY, BZ, 3), defined only where visible
    frame_indices: Tuple[int, ...]
    image_width: int
    image_height: int

    @property
    def num_frames(self) -> int:
        return self.visible.shape[0]


@dataclass
class FusedVolume:
    """Concatenated per-frame block features, frame-major, oldest first."""

    block_dims: Tuple[int, int, int]
    features: np.ndarray      # (BX, BY, BZ, F * C)
    channels_per_frame: int


def voxel_centers(rng: SceneRange) -> np.ndarray:
    """(X, Y, Z, 3) scene-frame centers: origin + (i+0.5, j+0.5, k+0.5)*voxel."""
    nx, ny, nz = rng.dims
    vs = rng.voxel_size
    cx = rng.origin[0] + (np.arange(nx) + 0.5) * vs
    cy = rng.origin[1] + (np.arange(ny) + 0.5) * vs
    cz = rng.origin[2] + (np.arange(nz) + 0.5) * vs
    out = np.empty((nx, ny, nz, 3))
    out[..., 0] = cx[:, None, None]
    out[..., 1] = cy[None, :, None]
    out[..., 2] = cz[None, None, :]
    return out


def scene_to_frame_transform(current_pose: Se3Pose, frame_pose: Se3Pose):
    """(R, t) taking scene-frame points of the current camera into frame_pose's camera.

    The scene-axis permutation is folded into the rotation by exact column
    permutation/negation, so scalar re-implementations can reproduce the
    vectorized arithmetic bit for bit.
    """
    rel = relative_pose(current_pose, frame_pose)
    r = rel.rotation
    folded = np.stack([r[:, 0], r[:, 2], -r[:, 1]], axis=1)
    return folded, rel.translation.copy()


def visibility(
    rng: SceneRange,
    frame: FrameBundle,
    current_pose: Se3Pose,
    k: CameraIntrinsics,
    theta_d: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-voxel visibility of the current scene range in one temporal frame.

    A voxel is visible iff its center projects in front of the camera onto an
    in-image pixel whose depth D is valid (> 0) and |d_v - D| <= theta_d.
    D is read at the nearest integer pixel: bilinear interpolation across
    depth discontinuities would fabricate depths and corrupt the band test.

    Returns (visible (X,Y,Z) bool, proj (X,Y,Z,3) of (u, v, d), zeroed where
    not visible).
    """
    if theta_d <= 0:
        raise ValueError("theta_d must be positive")
    h, w = frame.shape
    if (w, h) != (k.width, k.height):
        raise ValueError(f"frame is {w}x{h} but intrinsics expect {k.width}x{k.height}")
    r, t = scene_to_frame_transform(current_pose, frame.pose)
    c = voxel_centers(rng)
    sx, sy, sz = c[..., 0], c[..., 1], c[..., 2]
    x = r[0, 0] * sx + r[0, 1] * sy + r[0, 2] * sz + t[0]
    y = r[1, 0] * sx + r[1, 1] * sy + r[1, 2] * sz + t[1]
    z = r[2, 0] * sx + r[2, 1] * sy + r[2, 2] * sz + t[2]
    front = z > Z_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * x / z + k.cx
        v = k.fy * y / z + k.cy
    ui = np.floor(u + 0.5)
    vi = np.floor(v + 0.5)
    inb = front & (ui >= 0) & (ui <= w - 1) & (vi >= 0) & (vi <= h - 1)
    uq = np.where(inb, ui, 0).astype(np.int64)
    vq = np.where(inb, vi, 0).astype(np.int64)
    d_map = frame.depth[vq, uq]
    vis = inb & (d_map > 0.0) & (np.abs(z - d_map) <= theta_d)
    proj = np.stack([u, v, z], axis=-1)
    proj[~vis] = 0.0
    return vis, proj


def downsample_blocks(
    visible: np.ndarray,
    proj: np.ndarray,
    frame_indices: Sequence[int],
    image_width: int,
    image_height: int,
) -> BlockVisibility:
    """Group 4x4x4 voxels into blocks: OR visibility, mean projection.

    The projection average runs over the visible member voxels only; blocks
    with no visible member carry zeros and are flagged invisible.
    """
    visible = np.asarray(visible, dtype=bool)
    proj = np.asarray(proj, dtype=np.float64)
    if visible.ndim == 3:
        visible = visible[None]
        proj = proj[None]
    f, nx, ny, nz = visible.shape
    e = defaults.BLOCK_EDGE
    if nx % e or ny % e or nz % e:
        raise ValueError(f"voxel dims {(nx, ny, nz)} not divisible by {e}")
    bx, by, bz = nx // e, ny // e, nz // e
    vis_r = visible.reshape(f, bx, e, by, e, bz, e)
    proj_r = proj.reshape(f, bx, e, by, e, bz, e, 3)
    block_vis = vis_r.any(axis=(2, 4, 6))
    counts = vis_r.sum(axis=(2, 4, 6), dtype=np.float64)
    sums = (proj_r * vis_r[..., None]).sum(axis=(2, 4, 6))
    with np.errstate(invalid="ignore"):
        mean = np.where(counts[..., None] > 0, sums / np.maximum(counts, 1.0)[..., None], 0.0)
    return BlockVisibility(
        (bx, by, bz),
        block_vis,
        mean,
        tuple(int(i) for i in frame_indices),
        int(image_width),
        int(image_height),
    )


def sample_fuse(bv: BlockVisibility, feature_maps: Sequence[np.ndarray]) -> FusedVolume:
    """Sample per-frame features at each visible block and concatenate.

    The averaged (u, v) are image-pixel coordinates; they are rescaled into
    each feature map's resolution with the pixel-center-aligned mapping
    u_f = (u + 0.5) * (fw / W) - 0.5. Invisible blocks and out-of-bounds
    samples contribute exact zeros in their frame's channel slot.
    """
    maps = [np.asarray(m, dtype=np.float64) for m in feature_maps]
    if len(maps) != bv.num_frames:
        raise ValueError(
            f"expected {bv.num_frames} feature maps, got {len(maps)}"
        )
    channels = maps[0].shape[2] if maps[0].ndim == 3 else 1
    for m in maps:
        c = m.shape[2] if m.ndim == 3 else 1
        if c != channels:
            raise ValueError("all feature maps must share the channel count")
    bx, by, bz = bv.block_dims
    out = np.zeros((bx, by, bz, bv.num_frames * channels))
    for fi, fmap in enumerate(maps):
        fh, fw = fmap.shape[:2]
        vis = bv.visible[fi]
        if not vis.any():
            continue
        uv = bv.proj_uv_d[fi][vis][:, :2]
        su = fw / bv.image_width
        sv = fh / bv.image_height
        uf = (uv[:, 0] + 0.5) * su - 0.5
        vf = (uv[:, 1] + 0.5) * sv - 0.5
        vals, ok = bilinear_sample_many(fmap, np.stack([uf, vf], axis=1))
        if vals.ndim == 1:
            vals = vals[:, None]
        vals[~ok] = 0.0
        out[vis, fi * channels:(fi + 1) * channels] = vals
    return FusedVolume((bx, by, bz), out, channels)


FeatureExtractor = Callable[[np.ndarray], np.ndarray]


def fuse_pipeline(
    frames: Sequence[FrameBundle],
    rng: SceneRange,
    k: CameraIntrinsics,
    theta_d: float,
    feature_extractor: FeatureExtractor,
    current_index: int,
) -> Tuple[FusedVolume, BlockVisibility]:
    """Visibility, block downsampling, and feature fusion over a frame set.

    `frames` must be ordered by ascending frame index (pseudo-future last);
    `current_index` designates the frame whose camera anchors the range.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("need at least one frame")
    for a, b in zip(frames, frames[1:]):
        if b.frame_index <= a.frame_index:
            raise ValueError("frames must be ordered by ascending frame_index")
    if not (-len(frames) <= current_index < len(frames)):
        raise ValueError(f"current_index {current_index} out of range")
    current_pose = frames[current_index].pose
    vis_stack, proj_stack, fmaps = [], [], []
    for frame in frames:
        vis, proj = visibility(rng, frame, current_pose, k, theta_d)
        vis_stack.append(vis)
        proj_stack.append(proj)
        fmaps.append(feature_extractor(frame.image))
    bv = downsample_blocks(
        np.stack(vis_stack),
        np.stack(proj_stack),
        [f.frame_index for f in frames],
        k.width,
        k.height,
    )
    fused = sample_fuse(bv, fmaps)
    return fused, bv


def resample_to_range(
    world: SceneGrid, rng: SceneRange, current_pose: Se3Pose
) -> SceneGrid:
    """Relabel a world-frame grid onto a camera-anchored scene range.

    Each range voxel center is mapped into world coordinates and takes the
    label of the world voxel containing it; points outside the world grid
    become empty. For a camera aligned with the world axes this reduces to
    an integer shift.
    """
    centers = voxel_centers(rng).reshape(-1, 3)
    cam = centers @ SCENE_TO_CAM.T
    w = current_pose.apply(cam)
    idx = np.floor((w - world.range.origin) / world.range.voxel_size).astype(np.int64)
    dims = np.array(world.range.dims)
    inside = np.all((idx >= 0) & (idx < dims), axis=1)
    labels = np.zeros(centers.shape[0], dtype=np.uint8)
    sel = idx[inside]
    labels[inside] = world.labels[sel[:, 0], sel[:, 1], sel[:, 2]]
    return SceneGrid(rng, labels.reshape(rng.dims))
