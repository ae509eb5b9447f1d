"""Motion data model, skeletons, forward kinematics and motion-file I/O.

Coordinates are meters, Y-up, with the ground plane at y = 0.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

TWO_PI = 2.0 * math.pi


class MotionFormatError(ValueError):
    """Raised when a motion, skeleton or pose file does not match its schema."""


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int | None
    offset: tuple[float, float, float]


@dataclass(frozen=True)
class Skeleton:
    joints: tuple[Joint, ...]
    foot_left: int | None = None
    foot_right: int | None = None
    lowest_candidates: tuple[int, ...] = ()

    def __post_init__(self):
        joints = tuple(self.joints)
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "lowest_candidates", tuple(int(i) for i in self.lowest_candidates))
        roots = [k for k, j in enumerate(joints) if j.parent is None]
        if len(roots) != 1:
            raise ValueError(f"skeleton needs exactly one root, found {len(roots)}")
        for k, j in enumerate(joints):
            if j.parent is not None and not 0 <= j.parent < k:
                raise ValueError(f"joint {k} ({j.name}) has parent {j.parent}; parents must precede children")
            if not np.all(np.isfinite(j.offset)):
                raise ValueError(f"joint {k} ({j.name}) has a non-finite offset")
        for label in ("foot_left", "foot_right"):
            idx = getattr(self, label)
            if idx is not None and not 0 <= idx < len(joints):
                raise ValueError(f"{label} index {idx} out of range")
        for idx in self.lowest_candidates:
            if not 0 <= idx < len(joints):
                raise ValueError(f"lowest candidate {idx} out of range")

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def names(self) -> list[str]:
        return [j.name for j in self.joints]

    @property
    def parents(self) -> list[int | None]:
        return [j.parent for j in self.joints]

    @property
    def offsets(self) -> np.ndarray:
        return np.array([j.offset for j in self.joints], dtype=np.float64)

    @classmethod
    def chain(cls, offsets, names=None, **kwargs) -> "Skeleton":
        """Serial chain where joint k hangs off joint k-1."""
        names = names or [f"j{k}" for k in range(len(offsets))]
        joints = [Joint(names[k], None if k == 0 else k - 1, tuple(map(float, off)))
                  for k, off in enumerate(offsets)]
        return cls(tuple(joints), **kwargs)


def _check_finite(positions: np.ndarray):
    bad = np.argwhere(~np.isfinite(positions))
    if bad.size:
        i, j = bad[0][:2]
        raise ValueError(f"non-finite value at frame {i}, joint {j}")


@dataclass(frozen=True)
class MotionSequence:
    fps: float
    positions: np.ndarray
    joint_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64)
        if pos.ndim != 3 or pos.shape[2] != 3:
            raise ValueError(f"positions must be T x J x 3, got shape {pos.shape}")
        if pos.shape[0] < 1:
            raise ValueError("motion needs at least one frame")
        if not self.fps > 0 or not math.isfinite(self.fps):
            raise ValueError(f"fps must be positive, got {self.fps}")
        _check_finite(pos)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "fps", float(self.fps))
        names = tuple(self.joint_names) or tuple(f"j{k}" for k in range(pos.shape[1]))
        if len(names) != pos.shape[1]:
            raise ValueError(f"{len(names)} joint names for {pos.shape[1]} joints")
        object.__setattr__(self, "joint_names", names)

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def n_joints(self) -> int:
        return self.positions.shape[1]

    @property
    def dt(self) -> float:
        return 1.0 / self.fps

    def with_positions(self, positions) -> "MotionSequence":
        return MotionSequence(self.fps, positions, self.joint_names)

    def check_skeleton(self, skel: Skeleton):
        if skel.n_joints != self.n_joints:
            raise ValueError(f"motion has {self.n_joints} joints, skeleton has {skel.n_joints}")


def canonical_rotvec(rotvec: np.ndarray) -> np.ndarray:
    """Wrap axis-angle vectors so that every norm lies in [0, 2*pi)."""
    rv = np.array(rotvec, dtype=np.float64)
    norms = np.linalg.norm(rv, axis=-1, keepdims=True)
    wrapped = np.mod(norms, TWO_PI)
    scale = np.divide(wrapped, norms, out=np.ones_like(norms), where=norms > 0)
    return rv * scale


@dataclass(frozen=True)
class RotationalPoseSequence:
    fps: float
    root_translation: np.ndarray
    joint_rotations: np.ndarray

    def __post_init__(self):
        root = np.array(self.root_translation, dtype=np.float64)
        rots = np.array(self.joint_rotations, dtype=np.float64)
        if root.ndim != 2 or root.shape[1] != 3:
            raise ValueError(f"root_translation must be T x 3, got {root.shape}")
        if rots.ndim != 3 or rots.shape[2] != 3 or rots.shape[0] != root.shape[0]:
            raise ValueError(f"joint_rotations must be T x J x 3 matching T, got {rots.shape}")
        if root.shape[0] < 1:
            raise ValueError("pose sequence needs at least one frame")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if not (np.all(np.isfinite(root)) and np.all(np.isfinite(rots))):
            raise ValueError("pose sequence contains non-finite values")
        rots = canonical_rotvec(rots)
        root.setflags(write=False)
        rots.setflags(write=False)
        object.__setattr__(self, "root_translation", root)
        object.__setattr__(self, "joint_rotations", rots)
        object.__setattr__(self, "fps", float(self.fps))

    @property
    def n_frames(self) -> int:
        return self.root_translation.shape[0]

    @property
    def n_joints(self) -> int:
        return self.joint_rotations.shape[1]


def forward_kinematics(pose: RotationalPoseSequence, skel: Skeleton) -> MotionSequence:
    """Joint positions from per-joint local axis-angle rotations.

    The root sits at ``root_translation + offset[0]``; every other joint is
    placed at its parent's position plus the parent's accumulated rotation
    applied to its own offset.
    """
    if pose.n_joints != skel.n_joints:
        raise ValueError(f"pose has {pose.n_joints} joints, skeleton has {skel.n_joints}")
    T, J = pose.n_frames, pose.n_joints
    local = Rotation.from_rotvec(np.array(pose.joint_rotations).reshape(-1, 3)).as_matrix().reshape(T, J, 3, 3)
    offsets = skel.offsets
    glob = np.empty((T, J, 3, 3))
    pos = np.empty((T, J, 3))
    for k, parent in enumerate(skel.parents):
        if parent is None:
            glob[:, k] = local[:, k]
            pos[:, k] = pose.root_translation + offsets[k]
        else:
            glob[:, k] = glob[:, parent] @ local[:, k]
            pos[:, k] = pos[:, parent] + glob[:, parent] @ offsets[k]
    return MotionSequence(pose.fps, pos, tuple(skel.names))


# -- files -------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def _dump_array(a) -> str:
    a = np.asarray(a)
    if a.ndim == 0:
        return _fmt(a)
    return "[" + ",".join(_dump_array(row) for row in a) + "]"


def dumps_canonical(obj) -> str:
    """JSON text with sorted keys and 9-significant-digit floats.

    numpy arrays and Python floats are written with the fixed format so
    repeated saves of the same object produce identical bytes.
    """
    if isinstance(obj, dict):
        items = sorted(obj.items())
        return "{" + ",".join(json.dumps(str(k)) + ":" + dumps_canonical(v) for k, v in items) + "}"
    if isinstance(obj, np.ndarray):
        if obj.dtype.kind in "iub":
            return json.dumps(obj.tolist())
        return _dump_array(obj)
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps_canonical(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(obj):
            raise ValueError(f"cannot serialize non-finite value {obj}")
        return _fmt(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_text(path, text: str):
    Path(path).write_text(text + "\n", encoding="utf-8")


def motion_to_dict(seq: MotionSequence, extra: dict | None = None) -> dict:
    doc = {"fps": seq.fps, "joints": list(seq.joint_names), "frames": seq.positions}
    if extra:
        doc.update(extra)
    return doc


def save_motion(seq: MotionSequence, path, provenance: dict | None = None):
    """Write ``seq`` as a canonical motion file.

    ``provenance`` is stored under a ``provenance`` key and ignored on load.
    """
    write_text(path, dumps_canonical(motion_to_dict(seq, {"provenance": provenance} if provenance else None)))


def _frames_array(frames, what="frames") -> np.ndarray:
    try:
        arr = np.array(frames, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise MotionFormatError(f"{what} must be a T x J x 3 numeric array") from exc
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1:
        raise MotionFormatError(f"{what} must be a T x J x 3 numeric array, got shape {arr.shape}")
    return arr


def motion_from_dict(doc: dict) -> MotionSequence:
    missing = {"fps", "joints", "frames"} - set(doc)
    if missing:
        raise MotionFormatError(f"motion file missing keys: {sorted(missing)}")
    unknown = set(doc) - {"fps", "joints", "frames", "provenance"}
    if unknown:
        raise MotionFormatError(f"motion file has unknown keys: {sorted(unknown)}")
    fps = doc["fps"]
    if not isinstance(fps, (int, float)) or isinstance(fps, bool):
        raise MotionFormatError("fps must be a number")
    if not fps > 0 or not math.isfinite(fps):
        raise MotionFormatError(f"fps must be positive, got {fps}")
    frames = _frames_array(doc["frames"])
    names = doc["joints"]
    if not isinstance(names, list) or len(names) != frames.shape[1]:
        raise MotionFormatError(f"joints lists {len(names) if isinstance(names, list) else '?'} names "
                                f"but frames have {frames.shape[1]} joints")
    bad = np.argwhere(~np.isfinite(frames))
    if bad.size:
        i, j = bad[0][:2]
        raise MotionFormatError(f"non-finite value at frame {i}, joint {j}")
    return MotionSequence(float(fps), frames, tuple(str(n) for n in names))


def _parse_constant(name):
    # json accepts NaN/Infinity tokens by default; keep them so the
    # finiteness check can report the frame and joint
    return {"NaN": math.nan, "Infinity": math.inf, "-Infinity": -math.inf}[name]


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh, parse_constant=_parse_constant)
        except json.JSONDecodeError as exc:
            raise MotionFormatError(f"{path}: invalid JSON ({exc})") from exc


def load_motion(path) -> MotionSequence:
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise MotionFormatError("motion file must hold a JSON object")
    return motion_from_dict(doc)


def skeleton_to_dict(skel: Skeleton) -> dict:
    return {
        "joints": [{"name": j.name, "parent": j.parent, "offset": list(j.offset)} for j in skel.joints],
        "foot_left": skel.foot_left,
        "foot_right": skel.foot_right,
        "lowest_candidates": list(skel.lowest_candidates),
    }


def skeleton_from_dict(doc: dict) -> Skeleton:
    try:
        joints = tuple(Joint(str(j["name"]), None if j["parent"] is None else int(j["parent"]),
                             tuple(float(v) for v in j["offset"])) for j in doc["joints"])
        return Skeleton(joints, doc.get("foot_left"), doc.get("foot_right"),
                        tuple(doc.get("lowest_candidates", ())))
    except (KeyError, TypeError) as exc:
        raise MotionFormatError(f"malformed skeleton: {exc}") from exc


def save_skeleton(skel: Skeleton, path):
    write_text(path, dumps_canonical(skeleton_to_dict(skel)))


def load_skeleton(path) -> Skeleton:
    return skeleton_from_dict(read_json(path))


def save_pose(pose: RotationalPoseSequence, path):
    write_text(path, dumps_canonical({"fps": pose.fps, "root_translation": pose.root_translation,
                                      "joint_rotations": pose.joint_rotations}))


def load_pose(path) -> RotationalPoseSequence:
    doc = read_json(path)
    try:
        return RotationalPoseSequence(float(doc.get("fps", 20.0)), doc["root_translation"],
                                      doc["joint_rotations"])
    except KeyError as exc:
        raise MotionFormatError(f"pose file missing {exc}") from exc
