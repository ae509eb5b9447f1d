"""Normalized per-window coordinates used by the denoiser.

A clip of joint positions (T x J x 3) becomes a T x 3J array. The root's
horizontal path is fitted by a straight line and that line is subtracted
from every joint's x and z, so the coordinates are stationary in time and
independent of clip length. Channels are then standardized.

Accelerations are only divided by a per-channel scale (no offset), so
multiplying a normalized acceleration by k multiplies the physical one by k.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import central_diff, diff_matrix

POS_STD_FLOOR = 0.02      # m
ACC_STD_FLOOR = 0.5       # m/s^2


@dataclass(frozen=True)
class Trend:
    """Root horizontal line: x(i) = x0 + vx * i, z(i) = z0 + vz * i (frame units)."""
    x0: float
    vx: float
    z0: float
    vz: float

    def offsets(self, n_frames: int) -> np.ndarray:
        i = np.arange(n_frames, dtype=np.float64)
        out = np.zeros((n_frames, 3))
        out[:, 0] = self.x0 + self.vx * i
        out[:, 2] = self.z0 + self.vz * i
        return out

    def to_dict(self) -> dict:
        return {"x0": self.x0, "vx": self.vx, "z0": self.z0, "vz": self.vz}


def fit_trend(positions: np.ndarray, root: int = 0) -> Trend:
    T = positions.shape[0]
    i = np.arange(T, dtype=np.float64)
    if T < 2:
        return Trend(float(positions[0, root, 0]), 0.0, float(positions[0, root, 2]), 0.0)
    A = np.stack([np.ones(T), i], axis=1)
    coef, *_ = np.linalg.lstsq(A, positions[:, root][:, [0, 2]], rcond=None)
    return Trend(float(coef[0, 0]), float(coef[1, 0]), float(coef[0, 1]), float(coef[1, 1]))


def detrend(positions: np.ndarray, root: int = 0) -> tuple[np.ndarray, Trend]:
    trend = fit_trend(positions, root)
    return positions - trend.offsets(positions.shape[0])[:, None, :], trend


def second_diff_matrix(n_frames: int) -> np.ndarray:
    """Two passes of the central-difference stencil, frame units."""
    D = diff_matrix(n_frames)
    return D @ D


@dataclass(frozen=True)
class MotionCodec:
    mean: np.ndarray          # n
    std: np.ndarray           # n
    accel_std: np.ndarray     # n
    fps: float
    n_joints: int
    root: int = 0

    @property
    def n(self) -> int:
        return 3 * self.n_joints

    @classmethod
    def fit(cls, clips, fps: float, root: int = 0) -> "MotionCodec":
        """Statistics over detrended clips and their accelerations."""
        locs, accs = [], []
        for pos in clips:
            loc, _ = detrend(np.asarray(pos, dtype=np.float64), root)
            locs.append(loc.reshape(loc.shape[0], -1))
            dt = 1.0 / fps
            acc = central_diff(central_diff(pos, dt), dt)
            accs.append(acc.reshape(acc.shape[0], -1))
        loc = np.concatenate(locs)
        acc = np.concatenate(accs)
        std = np.maximum(loc.std(axis=0), POS_STD_FLOOR)
        acc_std = np.maximum(np.sqrt((acc ** 2).mean(axis=0)), ACC_STD_FLOOR)
        return cls(loc.mean(axis=0), std, acc_std, float(fps), pos.shape[1], root)

    def encode(self, positions: np.ndarray) -> tuple[np.ndarray, Trend]:
        loc, trend = detrend(np.asarray(positions, dtype=np.float64), self.root)
        return (loc.reshape(loc.shape[0], -1) - self.mean) / self.std, trend

    def decode(self, theta: np.ndarray, trend: Trend) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        loc = (theta * self.std + self.mean).reshape(theta.shape[0], self.n_joints, 3)
        return loc + trend.offsets(theta.shape[0])[:, None, :]

    def encode_accel(self, acc: np.ndarray) -> np.ndarray:
        acc = np.asarray(acc, dtype=np.float64)
        return acc.reshape(acc.shape[0], -1) / self.accel_std

    def decode_accel(self, acc: np.ndarray) -> np.ndarray:
        acc = np.asarray(acc, dtype=np.float64)
        return (acc * self.accel_std).reshape(acc.shape[0], self.n_joints, 3)

    def accel_gain(self) -> np.ndarray:
        """Per-channel factor taking D2 @ theta to normalized acceleration."""
        return self.std * self.fps ** 2 / self.accel_std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "accel_std": self.accel_std.tolist(),
                "fps": self.fps, "n_joints": self.n_joints, "root": self.root}

    @classmethod
    def from_dict(cls, doc: dict) -> "MotionCodec":
        return cls(np.asarray(doc["mean"], dtype=np.float64), np.asarray(doc["std"], dtype=np.float64),
                   np.asarray(doc["accel_std"], dtype=np.float64), float(doc["fps"]),
                   int(doc["n_joints"]), int(doc.get("root", 0)))
