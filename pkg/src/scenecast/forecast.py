"""Constant-velocity pose extrapolation and the pose MSE loss.

A deterministic stand-in for a learned pose predictor: the recent per-step
motion is averaged in twist space (so the mean is always a valid rigid
motion) and replayed once to produce the next pose. Constant-twist
trajectories are extrapolated exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geom import Se3Pose, compose, inverse, se3_exp, se3_log

DEFAULT_WINDOW_CAP = 3


@dataclass(frozen=True)
class PoseSequence:
    """Ordered world-from-camera poses at frame indices spaced by a fixed interval."""

    poses: tuple
    frame_indices: tuple
    frame_interval: int

    def __post_init__(self):
        poses = tuple(self.poses)
        indices = tuple(int(i) for i in self.frame_indices)
        if len(poses) != len(indices):
            raise ValueError("poses and frame_indices must have equal length")
        if len(poses) == 0:
            raise ValueError("pose sequence must be nonempty")
        if self.frame_interval <= 0:
            raise ValueError("frame_interval must be positive")
        for a, b in zip(indices, indices[1:]):
            if b - a != self.frame_interval:
                raise ValueError(
                    f"frame indices must be spaced by {self.frame_interval}, got {a} -> {b}"
                )
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "frame_indices", indices)

    def __len__(self) -> int:
        return len(self.poses)


@dataclass(frozen=True)
class MomentumTwist:
    """Mean per-step twist over the recent history."""

    xi: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=np.float64).reshape(6)
        if not np.all(np.isfinite(xi)):
            raise ValueError("twist entries must be finite")
        xi.flags.writeable = False
        object.__setattr__(self, "xi", xi)


def step_twists(seq: PoseSequence) -> list:
    """Per-step twists log(P_i^-1 P_{i+1}) for every consecutive pair."""
    return [
        se3_log(compose(inverse(a), b)) for a, b in zip(seq.poses, seq.poses[1:])
    ]


def momentum(seq: PoseSequence, window: int) -> MomentumTwist:
    """Average twist over the last `window` consecutive pose pairs.

    Averaging happens in the Lie algebra, so the replayed motion is always a
    valid pose, and a fixed world re-anchoring of all poses cancels out.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if len(seq) < window + 1:
        raise ValueError(
            f"need at least {window + 1} poses for window {window}, got {len(seq)}"
        )
    twists = step_twists(
        PoseSequence(
            seq.poses[-(window + 1):],
            seq.frame_indices[-(window + 1):],
            seq.frame_interval,
        )
    )
    return MomentumTwist(np.mean(twists, axis=0))


def extrapolate(seq: PoseSequence, m: MomentumTwist) -> Se3Pose:
    """Next-frame pose prediction: last pose advanced by the momentum twist."""
    return compose(seq.poses[-1], se3_exp(m.xi))


def forecast_next(seq: PoseSequence, window: int | None = None) -> Se3Pose:
    """Momentum + extrapolation with the default window min(history, 3)."""
    if window is None:
        window = min(len(seq) - 1, DEFAULT_WINDOW_CAP)
    return extrapolate(seq, momentum(seq, window))


def pose_mse(pred: Se3Pose, gt: Se3Pose) -> float:
    """Mean squared difference over the 12 entries of the 3x4 [R|t] matrices."""
    diff = pred.matrix34() - gt.matrix34()
    return float(np.mean(diff * diff))
