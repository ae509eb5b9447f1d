import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biomotion import motion as mio
from biomotion.motion import (Joint, MotionFormatError, MotionSequence, RotationalPoseSequence, Skeleton,
                              forward_kinematics)
from biomotion.sim import SimScenario, simulate


def _axis_angle_matrix(rv):
    """Rodrigues formula, written out independently of scipy."""
    th = np.linalg.norm(rv)
    if th == 0:
        return np.eye(3)
    k = rv / th
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(th) * K + (1 - math.cos(th)) * K @ K


def _fk_homogeneous(root, rots, skel):
    """Brute-force FK by multiplying explicit 4x4 transforms down the tree."""
    J = skel.n_joints
    world = [None] * J
    out = np.zeros((J, 3))
    for k, j in enumerate(skel.joints):
        local = np.eye(4)
        local[:3, :3] = _axis_angle_matrix(rots[k])
        trans = np.eye(4)
        trans[:3, 3] = j.offset
        if j.parent is None:
            base = np.eye(4)
            base[:3, 3] = root
            world[k] = base @ trans @ local
        else:
            world[k] = world[j.parent] @ trans @ local
        out[k] = world[k][:3, 3]
    return out


def test_zero_pose_chain_is_cumulative_offsets():
    offs = [(0, 1, 0), (0.5, 0, 0), (0, 0, 0.25)]
    skel = Skeleton.chain(offs)
    pose = RotationalPoseSequence(30.0, np.zeros((1, 3)), np.zeros((1, 3, 3)))
    out = forward_kinematics(pose, skel)
    assert np.array_equal(out.positions[0], np.cumsum(offs, axis=0))
    assert out.fps == 30.0


def test_quarter_turn_about_z():
    L = 0.7
    skel = Skeleton.chain([(0, 0, 0), (L, 0, 0)])
    rots = np.zeros((1, 2, 3))
    rots[0, 0] = (0, 0, math.pi / 2)
    out = forward_kinematics(RotationalPoseSequence(20.0, np.zeros((1, 3)), rots), skel)
    assert np.allclose(out.positions[0, 1], (0, L, 0), atol=1e-15)


def test_random_tree_matches_homogeneous_oracle(rng):
    joints = [Joint("r", None, tuple(rng.normal(size=3)))]
    for k in range(1, 5):
        joints.append(Joint(f"j{k}", int(rng.integers(0, k)), tuple(rng.normal(size=3))))
    skel = Skeleton(tuple(joints))
    T = 6
    root = rng.normal(size=(T, 3))
    rots = rng.normal(size=(T, 5, 3))
    got = forward_kinematics(RotationalPoseSequence(20.0, root, rots), skel).positions
    for i in range(T):
        assert np.allclose(got[i], _fk_homogeneous(root[i], rots[i], skel), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_fk_is_rigid(seed):
    rng = np.random.default_rng(seed)
    skel = Skeleton.chain(rng.normal(size=(4, 3)))
    pose = RotationalPoseSequence(20.0, rng.normal(size=(3, 3)), rng.normal(size=(3, 4, 3)) * 2)
    pos = forward_kinematics(pose, skel).positions
    for k in range(1, 4):
        d = np.linalg.norm(pos[:, k] - pos[:, k - 1], axis=-1)
        L = np.linalg.norm(skel.offsets[k])
        assert np.all(np.abs(d - L) <= 1e-12 * L)


def test_zero_pose_is_translated_rest_pose():
    skel = Skeleton.chain([(0, 1, 0), (0, -0.5, 0.1)])
    root = np.array([[1.0, 2.0, 3.0], [-1.0, 0.0, 0.5]])
    out = forward_kinematics(RotationalPoseSequence(20.0, root, np.zeros((2, 2, 3))), skel)
    rest = np.cumsum(skel.offsets, axis=0)
    assert np.array_equal(out.positions, rest[None] + root[:, None])


def test_fk_errors():
    skel = Skeleton.chain([(0, 0, 0), (1, 0, 0)])
    with pytest.raises(ValueError):
        forward_kinematics(RotationalPoseSequence(20.0, np.zeros((1, 3)), np.zeros((1, 3, 3))), skel)
    with pytest.raises(ValueError):
        RotationalPoseSequence(20.0, np.full((1, 3), np.nan), np.zeros((1, 2, 3)))


def test_rotation_vectors_are_canonical():
    rv = np.zeros((1, 1, 3))
    rv[0, 0] = (0, 0, 2 * math.pi + 0.25)
    pose = RotationalPoseSequence(20.0, np.zeros((1, 3)), rv)
    assert np.linalg.norm(pose.joint_rotations) < 2 * math.pi
    assert np.isclose(pose.joint_rotations[0, 0, 2], 0.25)


def test_skeleton_invariants():
    with pytest.raises(ValueError):
        Skeleton((Joint("a", None, (0, 0, 0)), Joint("b", None, (0, 0, 0))))
    with pytest.raises(ValueError):
        Skeleton((Joint("a", None, (0, 0, 0)), Joint("b", 1, (0, 0, 0))))
    with pytest.raises(ValueError):
        Skeleton((Joint("a", None, (0, 0, 0)),), foot_left=3)


def test_load_minimal_file(tmp_path):
    f = tmp_path / "m.json"
    f.write_text('{"fps": 20, "joints": ["a"], "frames": [[[0, 0, 0]], [[1, 2, 3]]]}')
    seq = mio.load_motion(f)
    assert (seq.n_frames, seq.n_joints, seq.fps) == (2, 1, 20.0)


def test_round_trip_is_canonical(tmp_path, rng):
    seq = MotionSequence(30.0, rng.normal(size=(5, 2, 3)), ("a", "b"))
    f1, f2 = tmp_path / "a.json", tmp_path / "b.json"
    mio.save_motion(seq, f1)
    mio.save_motion(mio.load_motion(f1), f2)
    assert f1.read_bytes() == f2.read_bytes()
    mio.save_motion(seq, f2)
    assert f1.read_bytes() == f2.read_bytes()


def test_nan_reports_location(tmp_path):
    f = tmp_path / "m.json"
    f.write_text('{"fps": 20, "joints": ["a", "b"], "frames": [[[0, 0, 0], [0, 0, 0]], [[0, 0, 0], [0, NaN, 0]]]}')
    with pytest.raises(MotionFormatError, match="non-finite value at frame 1, joint 1"):
        mio.load_motion(f)


@pytest.mark.parametrize("doc", [
    '{"fps": 0, "joints": ["a"], "frames": [[[0, 0, 0]]]}',
    '{"fps": 20, "joints": ["a"], "frames": [[[0, 0]]]}',
    '{"joints": ["a"], "frames": [[[0, 0, 0]]]}',
    '[1, 2, 3]',
])
def test_malformed_files(tmp_path, doc):
    f = tmp_path / "m.json"
    f.write_text(doc)
    with pytest.raises(MotionFormatError):
        mio.load_motion(f)


def test_static_frame_round_trip(tmp_path):
    seq = MotionSequence(20.0, np.array([[[0.1, 0.2, 0.3]]]))
    mio.save_motion(seq, tmp_path / "s.json")
    back = mio.load_motion(tmp_path / "s.json")
    assert np.array_equal(back.positions, seq.positions)


def test_simulator_round_trip_nine_digits(tmp_path):
    out = simulate(SimScenario(duration=5.0, fps=20.0))
    assert out.motion.n_frames == 100
    mio.save_motion(out.motion, tmp_path / "g.json")
    back = mio.load_motion(tmp_path / "g.json")
    # nine significant digits: the file is exact up to that rounding
    rel = np.abs(back.positions - out.motion.positions) / np.maximum(np.abs(out.motion.positions), 1e-300)
    assert rel.max() <= 5e-9
    mio.save_motion(back, tmp_path / "g2.json")
    assert np.array_equal(mio.load_motion(tmp_path / "g2.json").positions, back.positions)


def test_skeleton_and_pose_files(tmp_path, rng):
    skel = Skeleton.chain(rng.normal(size=(3, 3)), foot_left=2, foot_right=1, lowest_candidates=(1, 2))
    mio.save_skeleton(skel, tmp_path / "s.json")
    back = mio.load_skeleton(tmp_path / "s.json")
    assert back.names == skel.names and back.foot_left == 2 and back.lowest_candidates == (1, 2)
    assert np.allclose(back.offsets, skel.offsets, rtol=1e-8)
    pose = RotationalPoseSequence(20.0, rng.normal(size=(2, 3)), rng.normal(size=(2, 3, 3)))
    mio.save_pose(pose, tmp_path / "p.json")
    p2 = mio.load_pose(tmp_path / "p.json")
    assert np.allclose(p2.joint_rotations, pose.joint_rotations, rtol=1e-8)
