"""Structured Euler-Lagrange dynamics predictor and causal residual decoder.

The predictor reads a short causal window of (normalized) joint positions
and produces the pieces of

    accel = m_inv @ (e_force + c_force + muscle_force)

where ``m_inv = S + S^T`` is symmetric by construction and the muscle term
is a bilinear attention over eight learned muscle embeddings weighted by an
activation vector ``u`` in [0, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, stack
from .params import ParamBundle, as_tensor_map, glorot

N_MUSCLES = 8


@dataclass(frozen=True)
class DynamicsConfig:
    n: int = 18                 # working dimension, 3 per joint
    window: int = 8             # history frames W
    hidden: int = 32
    act_hidden: int = 32
    key_dim: int = 8
    decoder_hidden: int = 32

    def __post_init__(self):
        if self.n < 1 or self.window < 1 or self.hidden < 1:
            raise ValueError("dynamics sizes must be positive")

    @property
    def n_features(self) -> int:
        return 2 * self.window * self.n + 1

    def to_dict(self) -> dict:
        return {"n": self.n, "window": self.window, "hidden": self.hidden, "act_hidden": self.act_hidden,
                "key_dim": self.key_dim, "decoder_hidden": self.decoder_hidden}


@dataclass(frozen=True)
class DynamicsComponents:
    m_inv: np.ndarray
    e_force: np.ndarray
    c_force: np.ndarray
    muscle_force: np.ndarray

    def __post_init__(self):
        for name in ("m_inv", "e_force", "c_force", "muscle_force"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite {name}")


@dataclass(frozen=True)
class MuscleActivation:
    u: np.ndarray

    def __post_init__(self):
        u = np.clip(np.asarray(self.u, dtype=np.float64), 0.0, 1.0)
        if u.shape[-1:] != (N_MUSCLES,):
            raise ValueError(f"activation needs {N_MUSCLES} channels, got shape {u.shape}")
        object.__setattr__(self, "u", u)


@dataclass
class ComponentPredictor:
    config: DynamicsConfig
    params: ParamBundle

    @property
    def n_params(self) -> int:
        return self.params.n_params


def init_predictor(cfg: DynamicsConfig, rng: np.random.Generator | None = None, zero: bool = False,
                   prefix: str = "dyn.") -> ParamBundle:
    n, F, H = cfg.n, cfg.n_features, cfg.hidden
    shapes = {
        "h_w": (F, H), "h_b": (H,),
        "s_w": (H, n * n), "s_b": (n * n,),
        "e_w": (H, n), "e_b": (n,),
        "c_w": (H, n), "c_b": (n,),
        "u_w1": (F, cfg.act_hidden), "u_b1": (cfg.act_hidden,),
        "u_w2": (cfg.act_hidden, N_MUSCLES), "u_b2": (N_MUSCLES,),
        "q_w": (H, cfg.key_dim), "keys": (N_MUSCLES, cfg.key_dim), "values": (N_MUSCLES, n),
    }
    out = ParamBundle()
    for name, shape in shapes.items():
        if zero or len(shape) == 1:
            out[prefix + name] = np.zeros(shape)
        elif name == "s_w":
            # keep m_inv @ force of order one at init
            out[prefix + name] = rng.normal(0.0, 0.5 / (n * math.sqrt(H)), size=shape)
        elif name in ("keys", "values"):
            out[prefix + name] = rng.normal(0.0, 1.0 / math.sqrt(shape[1]), size=shape)
        else:
            out[prefix + name] = glorot(rng, *shape)
    if not zero:
        out[prefix + "s_b"] = (0.5 * np.eye(n)).ravel()     # S + S^T starts near the identity
    return out


def init_decoder(cfg: DynamicsConfig, rng: np.random.Generator | None = None, prefix: str = "dec.") -> ParamBundle:
    """Elman decoder; the output layer starts at zero so the residual is silent."""
    n, H = cfg.n, cfg.decoder_hidden
    out = ParamBundle()
    out[prefix + "in_w"] = glorot(rng, 2 * n, H) if rng is not None else np.zeros((2 * n, H))
    out[prefix + "rec_w"] = glorot(rng, H, H, gain=0.5) if rng is not None else np.zeros((H, H))
    out[prefix + "b"] = np.zeros(H)
    out[prefix + "out_w"] = np.zeros((H, n))
    out[prefix + "out_b"] = np.zeros(n)
    return out


# -- feature windows ---------------------------------------------------------

def _check_finite(x, what):
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if not np.all(np.isfinite(data)):
        raise ValueError(f"non-finite {what}")


def history_features(theta: Tensor, window: int, level=None) -> Tensor:
    """Per-frame causal features (B, L, 2*W*n + 1).

    Frame i sees positions i-W+1..i and their one-frame differences; frames
    before the start repeat the first frame, so their differences are zero.
    """
    theta = Tensor._wrap(theta)
    B, L, n = theta.shape
    first = theta[:, :1]
    pad = concat([first] * (window - 1) + [theta], axis=1) if window > 1 else theta
    diff = pad[:, 1:] - pad[:, :-1]
    vel = concat([Tensor(np.zeros((B, 1, n))), diff], axis=1)
    idx = np.arange(L)[:, None] + np.arange(window)[None, :]
    hist = pad[:, idx].reshape(B, L, window * n)
    velw = vel[:, idx].reshape(B, L, window * n)
    lev = np.zeros((B, L, 1)) if level is None else np.broadcast_to(
        np.asarray(level, dtype=np.float64).reshape(-1, 1, 1), (B, L, 1)).copy()
    return concat([hist, velw, Tensor(lev)], axis=-1)


def _frame_features(history, velocity, level=0.0) -> np.ndarray:
    history = np.asarray(history, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    if history.shape != velocity.shape or history.ndim != 2:
        raise ValueError("history and velocity windows must both be W x n")
    _check_finite(history, "history")
    _check_finite(velocity, "velocity")
    return np.concatenate([history.ravel(), velocity.ravel(), [float(level)]])[None, None]


# -- batched forward pieces (Tensor in, Tensor out) ---------------------------

def _hidden(p, feats, prefix):
    return (feats @ p[prefix + "h_w"] + p[prefix + "h_b"]).tanh()


def _activation(p, feats, prefix):
    a = (feats @ p[prefix + "u_w1"] + p[prefix + "u_b1"]).tanh()
    return (a @ p[prefix + "u_w2"] + p[prefix + "u_b2"]).sigmoid()


def _muscle(p, h, u, prefix):
    q = h @ p[prefix + "q_w"]                                     # B L dk
    dk = p[prefix + "keys"].shape[1]
    scores = (q @ p[prefix + "keys"].T) / math.sqrt(dk)          # B L M
    return (u * scores) @ p[prefix + "values"]                    # B L n


def components_tensors(p, feats: Tensor, n: int, prefix: str = "dyn."):
    """(m_inv, e_force, c_force, muscle_force, u) for every frame of ``feats``."""
    h = _hidden(p, feats, prefix)
    B, L = feats.shape[:2]
    S = (h @ p[prefix + "s_w"] + p[prefix + "s_b"]).reshape(B, L, n, n)
    m_inv = S + S.swapaxes(-1, -2)
    e = h @ p[prefix + "e_w"] + p[prefix + "e_b"]
    c = h @ p[prefix + "c_w"] + p[prefix + "c_b"]
    u = _activation(p, feats, prefix)
    return m_inv, e, c, _muscle(p, h, u, prefix), u


def accel_from_features(p, feats: Tensor, n: int, prefix: str = "dyn.", accel_scale=None) -> Tensor:
    m_inv, e, c, f, _ = components_tensors(p, feats, n, prefix)
    B, L = feats.shape[:2]
    acc = (m_inv @ (e + c + f).reshape(B, L, n, 1)).reshape(B, L, n)
    if accel_scale is not None:
        acc = acc * np.asarray(accel_scale, dtype=np.float64)
    return acc


def predict_accel(p, theta, cfg: DynamicsConfig, level=None, prefix: str = "dyn.") -> Tensor:
    """el-dynamics pipeline over a (B, L, n) motion window."""
    p = as_tensor_map(p) if isinstance(p, ParamBundle) else p
    return accel_from_features(p, history_features(theta, cfg.window, level), cfg.n, prefix)


def decoder_tensors(p, accel: Tensor, context: Tensor, prefix: str = "dec.") -> Tensor:
    accel, context = Tensor._wrap(accel), Tensor._wrap(context)
    if accel.shape != context.shape:
        raise ValueError(f"length mismatch: accel {accel.shape} vs context {context.shape}")
    B, L, _ = accel.shape
    drive = concat([accel, context], axis=-1) @ p[prefix + "in_w"] + p[prefix + "b"]   # B L H
    rec = p[prefix + "rec_w"]
    h = drive[:, 0].tanh()
    states = [h]
    for i in range(1, L):
        h = (drive[:, i] + h @ rec).tanh()
        states.append(h)
    return stack(states, axis=1) @ p[prefix + "out_w"] + p[prefix + "out_b"]


# -- single-window public operations --------------------------------------------

def _predictor_map(predictor):
    params = predictor.params if isinstance(predictor, ComponentPredictor) else predictor
    return as_tensor_map(params)


def _prefix_of(pm) -> str:
    for k in pm:
        if k.endswith("h_w"):
            return k[:-3]
    raise KeyError("predictor parameters have no hidden layer")


def predict_components(history, velocity, predictor, level: float = 0.0) -> DynamicsComponents:
    """Components for the newest frame of a W x n history window.

    ``velocity`` holds the matching one-frame differences. Callers pad short
    histories by repeating the first frame.
    """
    feats = Tensor(_frame_features(history, velocity, level))
    pm = _predictor_map(predictor)
    prefix = _prefix_of(pm)
    n = np.asarray(history).shape[1]
    m_inv, e, c, f, _ = components_tensors(pm, feats, n, prefix)
    return DynamicsComponents(m_inv.data[0, 0], e.data[0, 0], c.data[0, 0], f.data[0, 0])


def muscle_activation(history, velocity, predictor, level: float = 0.0) -> MuscleActivation:
    feats = Tensor(_frame_features(history, velocity, level))
    pm = _predictor_map(predictor)
    return MuscleActivation(_activation(pm, feats, _prefix_of(pm)).data[0, 0])


def muscle_force(u, history, velocity, predictor, level: float = 0.0) -> np.ndarray:
    """sum_k u_k * (q . key_k / sqrt(dk)) * value_k with the query read from history."""
    u = u.u if isinstance(u, MuscleActivation) else MuscleActivation(u).u
    feats = Tensor(_frame_features(history, velocity, level))
    pm = _predictor_map(predictor)
    prefix = _prefix_of(pm)
    h = _hidden(pm, feats, prefix)
    out = _muscle(pm, h, Tensor(u[None, None]), prefix).data[0, 0]
    _check_finite(out, "muscle force")
    return out


def compose_acceleration(c: DynamicsComponents) -> np.ndarray:
    return c.m_inv @ (c.e_force + c.c_force + c.muscle_force)


def coriolis_gravity_analytic(position, velocity, mass, omega, g: float = 9.81) -> np.ndarray:
    """Rotating-frame fictitious forces plus gravity, per 3-D node.

    Each node gets ``m |w|^2 r + 2 m w x v + (0, -m g, 0)``.
    """
    r = np.asarray(position, dtype=np.float64).reshape(-1, 3)
    v = np.asarray(velocity, dtype=np.float64).reshape(-1, 3)
    m = np.broadcast_to(np.asarray(mass, dtype=np.float64), (r.shape[0],))[:, None]
    w = np.asarray(omega, dtype=np.float64)
    out = m * np.dot(w, w) * r + 2.0 * m * np.cross(w, v)
    out[:, 1] -= m[:, 0] * g
    return out.ravel()


def decode_residual(accel_seq, context, decoder) -> np.ndarray:
    """Causal residual for a T x n acceleration sequence and its noisy context."""
    a = np.asarray(accel_seq, dtype=np.float64)
    ctx = np.asarray(context, dtype=np.float64)
    if a.shape != ctx.shape:
        raise ValueError(f"length mismatch: accel {a.shape} vs context {ctx.shape}")
    pm = as_tensor_map(decoder)
    prefix = next(k for k in pm if k.endswith("in_w"))[:-4]
    squeeze = a.ndim == 2
    if squeeze:
        a, ctx = a[None], ctx[None]
    out = decoder_tensors(pm, Tensor(a), Tensor(ctx), prefix).data
    return out[0] if squeeze else out
