"""Synthetic motion with exact ground-truth accelerations.

Three scenario kinds:

* ``pendulum-chain`` -- planar point-mass chain hanging from a fixed pivot,
  integrated with RK4, optional penalty-spring ground contact at y = 0.
* ``bouncing-mass`` -- a single point mass falling onto a penalty-spring
  ground.
* ``gait`` -- a kinematic walking pattern with planted stance feet; all
  derivatives come from the closed-form trajectory.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import motion as mio
from .metrics import MetricConfig, full_report
from .motion import Joint, MotionSequence, Skeleton

N_TORQUE = 8
KINDS = ("pendulum-chain", "bouncing-mass", "gait")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimScenario:
    kind: str = "gait"
    link_lengths: tuple[float, ...] = (1.0,)
    masses: tuple[float, ...] = (1.0,)
    theta0: tuple[float, ...] = (0.3,)
    omega0: tuple[float, ...] = (0.0,)
    pivot: tuple[float, float, float] = (0.0, 2.0, 0.0)
    position0: tuple[float, float, float] = (0.0, 1.0, 0.0)
    velocity0: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gravity: float = 9.81
    stiffness: float = 5e3
    damping: float = 50.0
    duration: float = 4.0
    fps: float = 20.0
    substeps: int = 8
    seed: int = 0
    # gait parameters
    speed: float = 1.2
    cadence: float = 0.9
    step_height: float = 0.15
    swing_amplitude: float = 1.0
    bob: float = 0.02
    sway: float = 0.02
    hip_width: float = 0.1
    pelvis_height: float = 0.9
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.fps <= 0:
            raise ValueError("fps must be > 0")
        if self.duration * self.fps < 8:
            raise ValueError("scenario must produce at least 8 frames")
        if self.substeps < 4:
            raise ValueError("internal substeps must be at least 4 per frame")
        if self.kind == "pendulum-chain":
            n = len(self.link_lengths)
            if not (len(self.masses) == len(self.theta0) == len(self.omega0) == n):
                raise ValueError("link_lengths, masses, theta0 and omega0 must have equal length")
        if any(v <= 0 for v in self.link_lengths) or any(m <= 0 for m in self.masses):
            raise ValueError("link lengths and masses must be > 0")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.fps))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "SimScenario":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()})


@dataclass(frozen=True)
class SimOutput:
    motion: MotionSequence
    accel_gt: np.ndarray
    torque_proxy: np.ndarray
    skeleton: Skeleton
    scenario: SimScenario
    velocity_gt: np.ndarray | None = None
    energy: np.ndarray = field(default_factory=lambda: np.zeros(0))


def torque_proxy(pos, acc, masses, skel: Skeleton, gravity) -> np.ndarray:
    """Per-joint gravito-inertial moment magnitudes, rescaled to [0, 1].

    Channel k (k > 0) is the moment about joint k's parent of the forces
    ``m (a - g)`` on joint k's subtree, over twice that subtree's static
    moment (subtree weight times its rest-pose reach from the parent).
    Channel 0 is the net force on the whole body over twice its weight.
    Channels are zero-padded or truncated to eight.
    """
    T, J, _ = pos.shape
    parents = skel.parents
    masses = np.asarray(masses, dtype=np.float64)
    g = np.array([0.0, -gravity, 0.0])
    force = masses[None, :, None] * (acc - g)
    rest = np.zeros((J, 3))
    offsets = skel.offsets
    for k in range(J):
        rest[k] = offsets[k] if parents[k] is None else rest[parents[k]] + offsets[k]
    subtree = [[k] for k in range(J)]
    for k in range(J - 1, 0, -1):
        subtree[parents[k]].extend(subtree[k])
    out = np.zeros((T, max(J, N_TORQUE)))
    out[:, 0] = np.linalg.norm(force.sum(axis=1), axis=-1) / (2.0 * masses.sum() * gravity + 1e-12)
    for k in range(1, J):
        idx = subtree[k]
        arm = pos[:, idx] - pos[:, [parents[k]]]
        reach = np.linalg.norm(rest[idx] - rest[parents[k]], axis=-1).max()
        static = 2.0 * masses[idx].sum() * gravity * max(reach, 1e-3)
        out[:, k] = np.linalg.norm(np.cross(arm, force[:, idx]).sum(axis=1), axis=-1) / (static + 1e-12)
    return np.clip(out[:, :N_TORQUE], 0.0, 1.0)


# -- rigid-body scenarios ----------------------------------------------------

def _chain_terms(sc: SimScenario, theta, omega):
    L = np.asarray(sc.link_lengths)
    m = np.asarray(sc.masses)
    n = L.size
    mu = np.cumsum(m[::-1])[::-1]                      # mass at and below each link
    mu_ij = mu[np.maximum.outer(np.arange(n), np.arange(n))]
    dth = np.subtract.outer(theta, theta)
    M = mu_ij * np.outer(L, L) * np.cos(dth)
    cor = (mu_ij * np.outer(L, L) * np.sin(dth)) @ (omega ** 2)
    grav = mu * sc.gravity * L * np.sin(theta)
    return M, cor, grav


def _chain_kinematics(sc: SimScenario, theta, omega):
    L = np.asarray(sc.link_lengths)
    pivot = np.asarray(sc.pivot[:2])
    d = np.stack([np.sin(theta), -np.cos(theta)], axis=-1) * L[:, None]
    t = np.stack([np.cos(theta), np.sin(theta)], axis=-1) * L[:, None]
    pos = pivot + np.cumsum(d, axis=0)
    vel = np.cumsum(t * omega[:, None], axis=0)
    return pos, vel, t


def _contact_force(sc: SimScenario, y, vy):
    pen = y < 0.0
    f = np.where(pen, -sc.stiffness * y - sc.damping * vy, 0.0)
    return np.maximum(f, 0.0)


def _chain_accel(sc: SimScenario, theta, omega):
    M, cor, grav = _chain_terms(sc, theta, omega)
    pos, vel, tang = _chain_kinematics(sc, theta, omega)
    fy = _contact_force(sc, pos[:, 1], vel[:, 1])
    # generalised force of vertical contact forces: Q_i = sum_{k>=i} t_i . F_k
    q = tang[:, 1] * np.cumsum(fy[::-1])[::-1]
    return np.linalg.solve(M, q - cor - grav)


def _rk4(f, state, h):
    k1 = f(state)
    k2 = f(state + 0.5 * h * k1)
    k3 = f(state + 0.5 * h * k2)
    k4 = f(state + h * k3)
    return state + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _integrate(deriv, state0, sc: SimScenario):
    T = sc.n_frames
    h = 1.0 / (sc.fps * sc.substeps)
    states = np.empty((T, state0.size))
    state = np.array(state0, dtype=np.float64)
    for i in range(T):
        states[i] = state
        if i == T - 1:
            break
        for s in range(sc.substeps):
            state = _rk4(deriv, state, h)
            if not np.all(np.isfinite(state)) or np.abs(state).max() > 1e6:
                raise SimulationError(f"state blew up at integration step {i * sc.substeps + s + 1}")
    return states


def _pendulum_chain(sc: SimScenario) -> SimOutput:
    n = len(sc.link_lengths)

    def deriv(state):
        th, om = state[:n], state[n:]
        return np.concatenate([om, _chain_accel(sc, th, om)])

    states = _integrate(deriv, np.concatenate([sc.theta0, sc.omega0]), sc)
    T = states.shape[0]
    J = n + 1
    pos = np.zeros((T, J, 3))
    acc = np.zeros((T, J, 3))
    vel = np.zeros((T, J, 3))
    energy = np.empty(T)
    m = np.asarray(sc.masses)
    pos[:, 0, :] = sc.pivot
    for i, state in enumerate(states):
        th, om = state[:n], state[n:]
        alpha = _chain_accel(sc, th, om)
        p, v, tang = _chain_kinematics(sc, th, om)
        normal = -np.stack([np.sin(th), -np.cos(th)], axis=-1) * np.asarray(sc.link_lengths)[:, None]
        a = np.cumsum(tang * alpha[:, None] + normal * (om ** 2)[:, None], axis=0)
        pos[i, 1:, :2] = p
        pos[i, 1:, 2] = sc.pivot[2]
        acc[i, 1:, :2] = a
        vel[i, 1:, :2] = v
        energy[i] = 0.5 * np.sum(m * np.sum(v ** 2, axis=1)) + np.sum(m * sc.gravity * p[:, 1])
    offsets = [tuple(sc.pivot)] + [(0.0, -L, 0.0) for L in sc.link_lengths]
    skel = Skeleton.chain(offsets, names=["pivot"] + [f"mass{k}" for k in range(1, J)],
                          foot_left=J - 1, foot_right=J - 1 if J < 3 else J - 2,
                          lowest_candidates=tuple(range(1, J)))
    tq = torque_proxy(pos, acc, np.concatenate([[0.0], m]), skel, sc.gravity)
    return SimOutput(MotionSequence(sc.fps, pos, tuple(skel.names)), acc, tq, skel, sc, vel, energy)


def _bouncing_mass(sc: SimScenario) -> SimOutput:
    mass = sc.masses[0]

    def accel(state):
        p, v = state[:3], state[3:]
        a = np.array([0.0, -sc.gravity, 0.0])
        a[1] += _contact_force(sc, p[1], v[1]) / mass
        return a

    def deriv(state):
        return np.concatenate([state[3:], accel(state)])

    states = _integrate(deriv, np.concatenate([sc.position0, sc.velocity0]), sc)
    pos = states[:, None, :3].copy()
    acc = np.array([accel(s) for s in states])[:, None, :]
    energy = 0.5 * mass * np.sum(states[:, 3:] ** 2, axis=1) + mass * sc.gravity * states[:, 1]
    skel = Skeleton((Joint("mass", None, (0.0, 0.0, 0.0)),), 0, 0, (0,))
    tq = torque_proxy(pos, acc, [mass], skel, sc.gravity)
    return SimOutput(MotionSequence(sc.fps, pos, ("mass",)), acc, tq, skel, sc,
                     states[:, None, 3:].copy(), energy)


def simulate(scenario: SimScenario) -> SimOutput:
    if scenario.kind == "gait":
        return gait_pattern(scenario)
    if scenario.kind == "pendulum-chain":
        return _pendulum_chain(scenario)
    return _bouncing_mass(scenario)


# -- kinematic gait ----------------------------------------------------------

GAIT_JOINTS = ("pelvis", "head", "l_knee", "l_foot", "r_knee", "r_foot")
GAIT_MASSES = (40.0, 10.0, 6.0, 4.0, 6.0, 4.0)
SWING_FRACTION = 0.45
RAMP = (0.25, 0.75)          # horizontal foot travel, as fractions of the swing
HEAD_RISE = 0.55
HIP_DROP = 0.1


def _smoothstep5(w):
    """Quintic smoothstep with first and second derivatives (w clipped to [0, 1])."""
    inside = (w > 0.0) & (w < 1.0)
    wc = np.clip(w, 0.0, 1.0)
    s = wc ** 3 * (10 - 15 * wc + 6 * wc ** 2)
    ds = np.where(inside, 30 * wc ** 2 * (1 - wc) ** 2, 0.0)
    dds = np.where(inside, 60 * wc * (1 - wc) * (1 - 2 * wc), 0.0)
    return s, ds, dds


def _step_profile(phi, cadence, step_height):
    """Forward progress (in strides) and height of one foot, with time derivatives.

    ``phi`` is the foot phase in cycles; the foot swings during the first
    SWING_FRACTION of every cycle and is planted otherwise.
    """
    k = np.floor(phi)
    u = phi - k
    swing = u < SWING_FRACTION
    ub = u / SWING_FRACTION
    r0, r1 = RAMP
    rate = cadence / (SWING_FRACTION * (r1 - r0))
    s, ds, dds = _smoothstep5((ub - r0) / (r1 - r0))
    prog = k + s
    dprog = ds * rate
    ddprog = dds * rate ** 2
    w = np.pi * cadence / SWING_FRACTION
    y = np.where(swing, step_height * np.sin(np.pi * ub) ** 2, 0.0)
    dy = np.where(swing, step_height * w * np.sin(2 * np.pi * ub), 0.0)
    ddy = np.where(swing, 2 * step_height * w ** 2 * np.cos(2 * np.pi * ub), 0.0)
    return (prog, dprog, ddprog), (y, dy, ddy)


def _progress_offset():
    # mean of (progress - phase) over a cycle, so each foot oscillates about its hip
    u = (np.arange(200000) + 0.5) / 200000
    (prog, _, _), _ = _step_profile(u, 1.0, 0.0)
    return 0.5 - float(prog.mean())


_C_OFFSET = _progress_offset()


def gait_skeleton(sc: SimScenario | None = None) -> Skeleton:
    sc = sc or SimScenario()
    H, w = sc.pelvis_height, sc.hip_width
    knee = (0.0, -HIP_DROP - 0.5 * (H - HIP_DROP), 0.0)
    return Skeleton((
        Joint("pelvis", None, (0.0, H, 0.0)),
        Joint("head", 0, (0.0, HEAD_RISE, 0.0)),
        Joint("l_knee", 0, (knee[0], knee[1], w)),
        Joint("l_foot", 2, (0.0, -0.5 * (H - HIP_DROP), 0.0)),
        Joint("r_knee", 0, (knee[0], knee[1], -w)),
        Joint("r_foot", 4, (0.0, -0.5 * (H - HIP_DROP), 0.0)),
    ), foot_left=3, foot_right=5, lowest_candidates=tuple(range(6)))


def gait_pattern(sc: SimScenario) -> SimOutput:
    """Closed-form walking pattern.

    With ``swing_amplitude`` 1 the stance foot is exactly stationary; with
    0 every joint is the rest pose carried along at the commanded speed.
    """
    if sc.kind != "gait":
        raise ValueError("gait_pattern needs a scenario of kind 'gait'")
    T = sc.n_frames
    t = np.arange(T) / sc.fps
    a = sc.swing_amplitude
    v, fc = sc.speed, sc.cadence
    stride = v / fc
    phi = fc * t + sc.phase
    J = len(GAIT_JOINTS)
    P = np.zeros((3, T, J, 3))              # value, velocity, acceleration

    # pelvis: forward translation, vertical bob twice per cycle, lateral sway
    P[0, :, 0, 0] = v * t
    P[1, :, 0, 0] = v
    wb, ws = 4 * np.pi * fc, 2 * np.pi * fc
    P[0, :, 0, 1] = sc.pelvis_height + a * sc.bob * np.cos(wb * t + 4 * np.pi * sc.phase)
    P[1, :, 0, 1] = -a * sc.bob * wb * np.sin(wb * t + 4 * np.pi * sc.phase)
    P[2, :, 0, 1] = -a * sc.bob * wb ** 2 * np.cos(wb * t + 4 * np.pi * sc.phase)
    P[0, :, 0, 2] = a * sc.sway * np.sin(ws * t + 2 * np.pi * sc.phase)
    P[1, :, 0, 2] = a * sc.sway * ws * np.cos(ws * t + 2 * np.pi * sc.phase)
    P[2, :, 0, 2] = -a * sc.sway * ws ** 2 * np.sin(ws * t + 2 * np.pi * sc.phase)

    P[:, :, 1] = P[:, :, 0]
    P[0, :, 1, 1] += HEAD_RISE

    for foot, knee, side, offset in ((3, 2, 1.0, 0.0), (5, 4, -1.0, 0.5)):
        (prog, dprog, ddprog), (y, dy, ddy) = _step_profile(phi + offset, fc, sc.step_height)
        u = (phi + offset) - np.floor(phi + offset)
        rel = stride * (prog - np.floor(phi + offset) - u + _C_OFFSET)
        P[0, :, foot, 0] = v * t + a * rel
        P[1, :, foot, 0] = v + a * (stride * dprog - v)
        P[2, :, foot, 0] = a * stride * ddprog
        P[0, :, foot, 1] = a * y
        P[1, :, foot, 1] = a * dy
        P[2, :, foot, 1] = a * ddy
        P[0, :, foot, 2] = side * sc.hip_width
        hip = P[:, :, 0].copy()
        hip[0, :, 1] -= HIP_DROP
        hip[0, :, 2] += side * sc.hip_width
        P[:, :, knee] = 0.5 * (hip + P[:, :, foot])

    pos, acc = P[0], P[2]
    skel = gait_skeleton(sc)
    tq = torque_proxy(pos, acc, GAIT_MASSES, skel, sc.gravity)
    return SimOutput(MotionSequence(sc.fps, pos, GAIT_JOINTS), acc, tq, skel, sc, P[1])


# -- corpus ------------------------------------------------------------------

def clip_seed(corpus_seed: int, index: int) -> int:
    digest = hashlib.sha256(f"{corpus_seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def random_gait_scenario(seed: int, duration: float = 4.0, fps: float = 20.0) -> SimScenario:
    rng = np.random.default_rng(seed)
    return SimScenario(
        kind="gait", duration=duration, fps=fps, seed=int(seed % 2 ** 31),
        speed=float(rng.uniform(0.8, 1.6)), cadence=float(rng.uniform(0.8, 1.0)),
        step_height=float(rng.uniform(0.13, 0.17)), bob=float(rng.uniform(0.01, 0.03)),
        sway=float(rng.uniform(0.01, 0.04)), hip_width=float(rng.uniform(0.08, 0.12)),
        pelvis_height=float(rng.uniform(0.85, 0.95)), phase=float(rng.uniform(0.0, 1.0)),
    )


def default_scenarios(seed: int = 0, count: int = 64, duration: float = 4.0, fps: float = 20.0) -> list[SimScenario]:
    return [random_gait_scenario(clip_seed(seed, i), duration, fps) for i in range(count)]


def _array_file(fps, names, frames) -> str:
    return mio.dumps_canonical({"fps": fps, "joints": list(names), "frames": np.asarray(frames)})


def make_corpus(scenarios, out_dir, metric_cfg: MetricConfig = MetricConfig(), jobs: int = 1,
                provenance: dict | None = None) -> dict:
    """Simulate ``scenarios`` and write motion/accel/torque files plus a manifest."""
    scenarios = list(scenarios)
    if not scenarios:
        raise ValueError("make_corpus needs at least one scenario")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(simulate, scenarios))
    else:
        outputs = [simulate(sc) for sc in scenarios]
    clips = []
    for i, (sc, res) in enumerate(zip(scenarios, outputs)):
        cid = f"clip{i:03d}"
        paths = {"motion_path": f"{cid}.motion.json", "accel_path": f"{cid}.accel.json",
                 "torque_path": f"{cid}.torque.json", "skeleton_path": f"{cid}.skeleton.json"}
        mio.save_motion(res.motion, out / paths["motion_path"])
        mio.write_text(out / paths["accel_path"], _array_file(sc.fps, res.motion.joint_names, res.accel_gt))
        mio.write_text(out / paths["torque_path"], mio.dumps_canonical(
            {"fps": sc.fps, "channels": [f"torque{k}" for k in range(N_TORQUE)], "frames": res.torque_proxy}))
        mio.save_skeleton(res.skeleton, out / paths["skeleton_path"])
        # report on the file contents so the manifest matches a recomputation from disk
        report = full_report(mio.load_motion(out / paths["motion_path"]), res.skeleton, metric_cfg)
        clips.append({"id": cid, **paths, "scenario": sc.to_dict(), "metrics": report.to_dict()})
    manifest = {"clips": clips}
    if provenance:
        manifest["provenance"] = provenance
    mio.write_text(out / "manifest.json", mio.dumps_canonical(manifest))
    return manifest


def load_array_file(path) -> np.ndarray:
    doc = mio.read_json(path)
    return np.array(doc["frames"], dtype=np.float64)


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
