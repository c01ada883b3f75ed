"""Independent brute-force reference implementations used only by tests.

Everything here is deliberately scalar pure-Python math (no vectorization)
so it shares no code path with the package implementations it checks.
"""
from __future__ import annotations

import math

import numpy as np

from scenecast.fusion import SceneRange, scene_to_frame_transform
from scenecast.geom import CameraIntrinsics, Se3Pose
from scenecast.warp import FrameBundle


def visibility_bruteforce(
    rng: SceneRange,
    frame: FrameBundle,
    current_pose: Se3Pose,
    k: CameraIntrinsics,
    theta_d: float,
):
    """Scalar per-voxel visibility enumeration mirroring the band test."""
    r, t = scene_to_frame_transform(current_pose, frame.pose)
    r = [[float(v) for v in row] for row in r]
    t = [float(v) for v in t]
    depth = frame.depth.tolist()
    nx, ny, nz = rng.dims
    ox, oy, oz = (float(v) for v in rng.origin)
    vs = float(rng.voxel_size)
    fx, fy, cx, cy = k.fx, k.fy, k.cx, k.cy
    w, h = k.width, k.height

    vis = np.zeros((nx, ny, nz), dtype=bool)
    proj = np.zeros((nx, ny, nz, 3))
    for i in range(nx):
        sx = ox + (i + 0.5) * vs
        for j in range(ny):
            sy = oy + (j + 0.5) * vs
            for kk in range(nz):
                sz = oz + (kk + 0.5) * vs
                x = r[0][0] * sx + r[0][1] * sy + r[0][2] * sz + t[0]
                y = r[1][0] * sx + r[1][1] * sy + r[1][2] * sz + t[1]
                z = r[2][0] * sx + r[2][1] * sy + r[2][2] * sz + t[2]
                if z <= 1e-6:
                    continue
                u = fx * x / z + cx
                v = fy * y / z + cy
                ui = math.floor(u + 0.5)
                vi = math.floor(v + 0.5)
                if ui < 0 or ui > w - 1 or vi < 0 or vi > h - 1:
                    continue
                d_map = depth[vi][ui]
                if d_map > 0.0 and abs(z - d_map) <= theta_d:
                    vis[i, j, kk] = True
                    proj[i, j, kk] = (u, v, z)
    return vis, proj


def scal_bruteforce(probs, labels, clamp: float = 1e-8) -> float:
    """Scalar transcription of the class-wise log precision/recall/specificity loss."""
    probs = [list(map(float, row)) for row in probs]
    labels = [int(v) for v in labels]
    n = len(probs)
    c_count = len(probs[0]) if n else 0

    def slog(x: float) -> float:
        return math.log(x if x > clamp else clamp)

    total = 0.0
    terms = 0
    for c in range(c_count):
        num_p = sum(probs[i][c] for i in range(n) if labels[i] == c)
        den_p = sum(probs[i][c] for i in range(n))
        den_r = sum(1 for i in range(n) if labels[i] == c)
        num_s = sum(1.0 - probs[i][c] for i in range(n) if labels[i] != c)
        den_s = sum(1 for i in range(n) if labels[i] != c)
        if den_p == 0.0 and den_r == 0:
            continue
        pc = slog(num_p) - slog(den_p)
        rc = slog(num_p) - slog(den_r)
        sc = slog(num_s) - slog(den_s)
        total -= pc + rc + sc
        terms += 1
    return total / terms if terms else 0.0


def scal_geo_bruteforce(probs, labels, clamp: float = 1e-8) -> float:
    """Binary occupied/empty reduction fed through the scalar affinity loss."""
    p2 = [[float(row[0]), 1.0 - float(row[0])] for row in probs]
    l2 = [0 if int(v) == 0 else 1 for v in labels]
    return scal_bruteforce(p2, l2, clamp)


def weighted_ce_bruteforce(probs, labels, weights, clamp: float = 1e-8) -> float:
    total = 0.0
    n = len(labels)
    for i in range(n):
        li = int(labels[i])
        p = float(probs[i][li])
        total += -float(weights[li]) * math.log(p if p > clamp else clamp)
    return total / n


def _ray_box(o, d, lo, hi):
    """Entry/exit parameters of a ray against one axis-aligned box."""
    t_enter, t_exit = -math.inf, math.inf
    for a in range(3):
        if d[a] == 0.0:
            if o[a] < lo[a] or o[a] > hi[a]:
                return None
            continue
        t1 = (lo[a] - o[a]) / d[a]
        t2 = (hi[a] - o[a]) / d[a]
        if t1 > t2:
            t1, t2 = t2, t1
        t_enter = max(t_enter, t1)
        t_exit = min(t_exit, t2)
    if t_exit < t_enter:
        return None
    return t_enter, t_exit


def raycast_bruteforce(grid, pose: Se3Pose, k: CameraIntrinsics, d_max: float):
    """First-hit depth/label per pixel by testing every occupied voxel box."""
    vs = float(grid.range.voxel_size)
    gmin = [float(v) for v in grid.range.origin]
    occ = []
    labels = grid.labels
    for idx in np.argwhere(labels > 0):
        lo = [gmin[a] + idx[a] * vs for a in range(3)]
        hi = [lo[a] + vs for a in range(3)]
        occ.append((lo, hi, int(labels[idx[0], idx[1], idx[2]])))

    r = pose.rotation.tolist()
    o = [float(v) for v in pose.translation]
    depth = np.zeros((k.height, k.width))
    cls = np.zeros((k.height, k.width), dtype=np.uint8)
    for v in range(k.height):
        for u in range(k.width):
            dc = ((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0)
            dw = [
                r[a][0] * dc[0] + r[a][1] * dc[1] + r[a][2] * dc[2] for a in range(3)
            ]
            best_t, best_label = math.inf, 0
            for lo, hi, lab in occ:
                hitrange = _ray_box(o, dw, lo, hi)
                if hitrange is None:
                    continue
                t_enter = max(hitrange[0], 1e-9)
                if hitrange[1] < t_enter:
                    continue
                if t_enter < best_t and t_enter <= d_max:
                    best_t, best_label = t_enter, lab
            if best_label:
                depth[v, u] = best_t
                cls[v, u] = best_label
    return depth, cls
