"""Rigid-body pose algebra and pinhole camera projection.

Conventions used throughout the package:
  - camera axes: x right, y down, z forward (KITTI camera frame)
  - pixel (0, 0) is the center of the top-left pixel
  - poses are world-from-camera unless stated otherwise
  - twists are 6-vectors (wx, wy, wz, tx, ty, tz): rotation radians first,
    translation meters last

Behind-camera and out-of-bounds conditions are reported as values, not
exceptions, so pixel/voxel inner loops stay total.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# points with camera z <= Z_EPS count as behind the camera
Z_EPS = 1e-6
# re-orthonormalize a rotation whose drift from O(3) exceeds this
ORTHO_DRIFT = 1e-12
# reject inputs farther than this from a rotation (indicates corrupt data)
_ORTHO_REJECT = 1e-6
_SMALL_ANGLE = 1e-8


def _closest_rotation(m: np.ndarray) -> np.ndarray:
    """Project a near-rotation 3x3 matrix onto SO(3) (Frobenius-nearest)."""
    u, _, vt = np.linalg.svd(m)
    if np.linalg.det(u @ vt) < 0.0:
        u = u.copy()
        u[:, 2] = -u[:, 2]
    return u @ vt


def _rotation_drift(r: np.ndarray) -> float:
    return float(np.abs(r @ r.T - np.eye(3)).max())


@dataclass(frozen=True)
class Se3Pose:
    """Rigid transform: 3x3 rotation plus translation in meters.

    The rotation is re-orthonormalized on construction when its drift from
    orthonormality exceeds ORTHO_DRIFT; grossly invalid input raises.
    Instances are immutable and safe to share across threads.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("pose entries must be finite")
        drift = _rotation_drift(r)
        if drift > _ORTHO_REJECT:
            raise ValueError(f"rotation drift {drift:.3e} exceeds {_ORTHO_REJECT:.0e}")
        if drift > ORTHO_DRIFT:
            r = _closest_rotation(r)
        if np.linalg.det(r) <= 0.0:
            raise ValueError("rotation must have determinant +1")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Se3Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rt(cls, rotation, translation) -> "Se3Pose":
        """Build from a possibly noisy rotation; always projects onto SO(3)."""
        r = np.array(rotation, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(r)):
            raise ValueError("rotation entries must be finite")
        return cls(_closest_rotation(r), translation)

    @classmethod
    def from_matrix(cls, m) -> "Se3Pose":
        """Accepts a 3x4 [R|t] or 4x4 homogeneous matrix."""
        m = np.asarray(m, dtype=np.float64)
        if m.shape not in ((3, 4), (4, 4)):
            raise ValueError(f"expected 3x4 or 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    def matrix34(self) -> np.ndarray:
        m = np.empty((3, 4))
        m[:, :3] = self.rotation
        m[:, 3] = self.translation
        return m

    def matrix44(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Transform one (3,) point or an (..., 3) array of points."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def __matmul__(self, other: "Se3Pose") -> "Se3Pose":
        return compose(self, other)


def compose(a: Se3Pose, b: Se3Pose) -> Se3Pose:
    """Composition applying b first, then a: result(p) = a(b(p))."""
    return Se3Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(p: Se3Pose) -> Se3Pose:
    rt = p.rotation.T
    return Se3Pose(rt, -(rt @ p.translation))


def relative_pose(from_pose: Se3Pose, to_pose: Se3Pose) -> Se3Pose:
    """Transform taking points in `from`'s camera frame into `to`'s camera frame.

    Both arguments are world-from-camera. Equal poses short-circuit to the
    exact identity so that identity warps are bit-exact.
    """
    if np.array_equal(from_pose.rotation, to_pose.rotation) and np.array_equal(
        from_pose.translation, to_pose.translation
    ):
        return Se3Pose.identity()
    return compose(inverse(to_pose), from_pose)


def _skew(w: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def se3_exp(xi) -> Se3Pose:
    """Closed-form exponential map of a twist (wx, wy, wz, tx, ty, tz)."""
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    if not np.all(np.isfinite(xi)):
        raise ValueError("twist entries must be finite")
    w, rho = xi[:3], xi[3:]
    theta = float(np.linalg.norm(w))
    k = _skew(w)
    k2 = k @ k
    eye = np.eye(3)
    if theta < _SMALL_ANGLE:
        # second-order Taylor of both R and V; error O(theta^3)
        r = eye + k + 0.5 * k2
        v = eye + 0.5 * k + k2 / 6.0
    else:
        t2 = theta * theta
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / t2
        c = (theta - math.sin(theta)) / (t2 * theta)
        r = eye + a * k + b * k2
        v = eye + b * k + c * k2
    return Se3Pose(r, v @ rho)


def se3_log(p: Se3Pose) -> np.ndarray:
    """Twist whose exponential reproduces the pose; angle must be below pi."""
    r = p.rotation
    cos_theta = min(1.0, max(-1.0, (float(np.trace(r)) - 1.0) * 0.5))
    theta = math.acos(cos_theta)
    if theta >= math.pi - 1e-6:
        raise ValueError(f"rotation angle {theta:.9f} too close to pi for a stable log")
    vee = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if theta < _SMALL_ANGLE:
        w = vee
        k = _skew(w)
        v_inv = np.eye(3) - 0.5 * k + (k @ k) / 12.0
    else:
        w = (theta / math.sin(theta)) * vee
        k = _skew(w)
        coeff = (1.0 - (theta * math.cos(theta * 0.5)) / (2.0 * math.sin(theta * 0.5))) / (
            theta * theta
        )
        v_inv = np.eye(3) - 0.5 * k + coeff * (k @ k)
    return np.concatenate([w, v_inv @ p.translation])


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True)
class Point3:
    """A point in meters, in whichever frame the caller states."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise ValueError("point coordinates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class PixelDepth:
    """Continuous pixel coordinates plus depth along the camera z-axis."""

    u: float
    v: float
    d: float

    @property
    def valid(self) -> bool:
        return self.d > Z_EPS


def project(point_cam, k: CameraIntrinsics) -> PixelDepth:
    """Project a camera-frame point; behind-camera yields an invalid value."""
    if isinstance(point_cam, Point3):
        x, y, z = point_cam.x, point_cam.y, point_cam.z
    else:
        x, y, z = (float(c) for c in np.asarray(point_cam).reshape(3))
    if z <= Z_EPS:
        return PixelDepth(math.nan, math.nan, z)
    return PixelDepth(k.fx * x / z + k.cx, k.fy * y / z + k.cy, z)


def backproject(u: float, v: float, d: float, k: CameraIntrinsics) -> Point3:
    """Lift a pixel with depth d (meters, > 0) back into the camera frame."""
    if d <= 0:
        raise ValueError(f"depth must be positive, got {d}")
    return Point3((u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d)


def project_points(points, k: CameraIntrinsics):
    """Vectorized projection of (..., 3) camera-frame points.

    Returns (uvd, valid): uvd is (..., 3) with entries zeroed where invalid,
    valid is the boolean behind-camera mask (in-image bounds are not checked
    here; callers own their own bounds rule).
    """
    p = np.asarray(points, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    valid = z > Z_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * x / z + k.cx
        v = k.fy * y / z + k.cy
    uvd = np.stack([u, v, z], axis=-1)
    uvd[~valid] = 0.0
    return uvd, valid


def bilinear_sample(field: np.ndarray, u: float, v: float):
    """Bilinear sample of an (H, W) or (H, W, C) field at a continuous pixel.

    Returns the sampled channel vector, or None as the out-of-bounds marker
    when the sample location falls outside the convex hull of pixel centers.
    """
    vals, ok = bilinear_sample_many(field, np.array([[u, v]]))
    if not ok[0]:
        return None
    return vals[0]


def bilinear_sample_many(field: np.ndarray, uv: np.ndarray):
    """Vectorized bilinear sampling at (N, 2) pixel locations.

    Out-of-bounds samples are flagged False in the returned mask and zeroed.
    Integer coordinates reproduce pixel values exactly, including the last
    row/column (the upper neighbor then carries full weight).
    """
    f = np.asarray(field, dtype=np.float64)
    if f.size == 0:
        raise ValueError("field must be nonempty")
    squeeze = f.ndim == 2
    if squeeze:
        f = f[:, :, None]
    h, w = f.shape[:2]
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    u, v = uv[:, 0], uv[:, 1]
    ok = (u >= 0.0) & (u <= w - 1.0) & (v >= 0.0) & (v <= h - 1.0)
    uc = np.clip(u, 0.0, w - 1.0)
    vc = np.clip(v, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(uc), max(w - 2, 0)).astype(np.int64)
    y0 = np.minimum(np.floor(vc), max(h - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (uc - x0)[:, None]
    fy = (vc - y0)[:, None]
    vals = (
        f[y0, x0] * (1.0 - fx) * (1.0 - fy)
        + f[y0, x1] * fx * (1.0 - fy)
        + f[y1, x0] * (1.0 - fx) * fy
        + f[y1, x1] * fx * fy
    )
    vals[~ok] = 0.0
    if squeeze:
        vals = vals[:, 0]
    return vals, ok
