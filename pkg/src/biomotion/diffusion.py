"""Noise schedule, samplers, inversion and the physics-coupled denoiser.

The denoiser predicts noise for a normalized motion window. Each call first
runs the dynamics predictor on the noisy input to get an acceleration
estimate; the base network sees that estimate as an extra input and the
residual decoder turns it into an additive correction of the noise
prediction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat
from .dynamics import DynamicsConfig, accel_from_features, decoder_tensors, history_features, \
    init_decoder, init_predictor
from .params import ParamBundle, as_tensor_map, glorot


@dataclass(frozen=True)
class NoiseSchedule:
    t_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    betas: np.ndarray = field(init=False, repr=False, compare=False)
    alpha_bars: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.t_steps < 1:
            raise ValueError("t_steps must be >= 1")
        if not 0.0 < self.beta_start < self.beta_end < 1.0:
            raise ValueError("need 0 < beta_start < beta_end < 1")
        betas = np.linspace(self.beta_start, self.beta_end, self.t_steps)
        # index 0 is the clean signal (alpha_bar = 1)
        abar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", abar)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    def alpha_bar(self, t):
        return self.alpha_bars[np.asarray(t)]

    def beta(self, t):
        return self.betas[np.asarray(t) - 1]

    def noise_level(self, t):
        return np.sqrt(1.0 - self.alpha_bar(t))

    def to_dict(self) -> dict:
        return {"t_steps": self.t_steps, "beta_start": self.beta_start, "beta_end": self.beta_end}

    @classmethod
    def from_dict(cls, doc: dict) -> "NoiseSchedule":
        unknown = set(doc) - {"t_steps", "beta_start", "beta_end"}
        if unknown:
            raise ValueError(f"unknown schedule keys: {sorted(unknown)}")
        return cls(**doc)


def _check_t(t, schedule: NoiseSchedule, lo: int = 1):
    arr = np.asarray(t)
    if arr.dtype.kind not in "iu":
        if not np.all(arr == np.round(arr)):
            raise ValueError(f"timestep must be an integer, got {t}")
    if np.any(arr < lo) or np.any(arr > schedule.t_steps):
        raise ValueError(f"timestep {t} out of range [{lo}, {schedule.t_steps}]")
    return arr.astype(np.int64)


def _per_sample(v, x):
    """Broadcast a per-batch scalar over the trailing axes of ``x``."""
    v = np.asarray(v, dtype=np.float64)
    return v.reshape(v.shape + (1,) * (np.ndim(x) - v.ndim))


def forward_diffuse(x0, t, noise, schedule: NoiseSchedule):
    t = _check_t(t, schedule)
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x0.shape:
        raise ValueError(f"noise shape {noise.shape} != x0 shape {x0.shape}")
    ab = _per_sample(schedule.alpha_bar(t), x0)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def predict_x0(x_t, eps, t, schedule: NoiseSchedule):
    ab = _per_sample(schedule.alpha_bar(t), x_t)
    return (x_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)


def ddim_step(x_t, eps_pred, t: int, t_prev: int, schedule: NoiseSchedule):
    """Deterministic (eta = 0) jump from step t to step t_prev <= t."""
    t = int(_check_t(t, schedule, lo=0))
    t_prev = int(_check_t(t_prev, schedule, lo=0))
    if t_prev > t:
        raise ValueError(f"t_prev ({t_prev}) must not exceed t ({t})")
    x_t = np.asarray(x_t, dtype=np.float64)
    if t_prev == t:
        return x_t.copy()
    x0 = predict_x0(x_t, eps_pred, t, schedule)
    ab_prev = schedule.alpha_bar(t_prev)
    return math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * np.asarray(eps_pred)


def ddpm_step(x_t, eps_pred, t: int, rng: np.random.Generator, schedule: NoiseSchedule):
    """Ancestral step t -> t-1 with the posterior variance of the forward process."""
    t = int(_check_t(t, schedule))
    x_t = np.asarray(x_t, dtype=np.float64)
    beta = schedule.beta(t)
    ab, ab_prev = schedule.alpha_bar(t), schedule.alpha_bar(t - 1)
    mean = (x_t - beta / math.sqrt(1.0 - ab) * np.asarray(eps_pred)) / math.sqrt(1.0 - beta)
    if t == 1:
        return mean
    var = beta * (1.0 - ab_prev) / (1.0 - ab)
    return mean + math.sqrt(var) * rng.standard_normal(x_t.shape)


def cfg_combine(eps_cond, eps_uncond, scale: float):
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError(f"shape mismatch: {eps_cond.shape} vs {eps_uncond.shape}")
    return eps_uncond + scale * (eps_cond - eps_uncond)


def inversion_steps(t_target: int, steps: int | None) -> np.ndarray:
    """Increasing grid 0 = s_0 < ... < s_K = t_target."""
    K = t_target if steps is None else max(1, min(int(steps), int(t_target)))
    return np.unique(np.round(np.linspace(0, t_target, K + 1)).astype(np.int64))


def timestep_grid(t_end: int, steps: int, schedule: NoiseSchedule, spacing: str = "uniform") -> np.ndarray:
    """Increasing grid from 0 to ``t_end`` for the deterministic sampler.

    ``uniform`` spaces the steps evenly in t. ``angle`` spaces them evenly in
    arccos(sqrt(alpha_bar)), the angle between the signal and noise axes,
    which spreads the per-step shrinkage of a DDIM update evenly.
    """
    t_end = int(_check_t(t_end, schedule))
    if spacing == "uniform":
        return inversion_steps(t_end, steps)
    if spacing != "angle":
        raise ValueError(f"unknown spacing {spacing!r}")
    phi = np.arccos(np.sqrt(np.clip(schedule.alpha_bars[:t_end + 1], 0.0, 1.0)))
    grid = np.searchsorted(phi, np.linspace(0.0, phi[-1], int(steps) + 1)).clip(0, t_end)
    grid[-1] = t_end
    return np.unique(grid)


# -- the denoiser ------------------------------------------------------------------

@dataclass(frozen=True)
class DenoiserConfig:
    n: int = 18
    cond_dim: int = 3
    hidden: int = 64
    time_dim: int = 32
    radius: int = 2
    dilation: int = 3           # second layer sees +-radius*dilation frames
    dynamics: DynamicsConfig = DynamicsConfig()

    def __post_init__(self):
        if self.dynamics.n != self.n:
            raise ValueError("dynamics working dimension must match the denoiser's")

    def to_dict(self) -> dict:
        return {"n": self.n, "cond_dim": self.cond_dim, "hidden": self.hidden, "time_dim": self.time_dim,
                "radius": self.radius, "dilation": self.dilation, "dynamics": self.dynamics.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "DenoiserConfig":
        doc = dict(doc)
        dyn = DynamicsConfig(**doc.pop("dynamics", {}))
        return cls(dynamics=dyn, **doc)


@dataclass
class Denoiser:
    config: DenoiserConfig
    params: ParamBundle
    schedule: NoiseSchedule = NoiseSchedule()

    @property
    def n_params(self) -> int:
        return self.params.n_params

    def base_param_count(self) -> int:
        return self.params.subset("base.").n_params

    def copy(self) -> "Denoiser":
        return Denoiser(self.config, self.params.copy(), self.schedule)


def init_base(cfg: DenoiserConfig, rng: np.random.Generator) -> ParamBundle:
    n, H, E, w = cfg.n, cfg.hidden, cfg.time_dim, 2 * cfg.radius + 1
    out = ParamBundle()
    out["base.t_w1"] = glorot(rng, E, H)
    out["base.t_b1"] = np.zeros(H)
    out["base.t_w2"] = glorot(rng, H, H)
    out["base.t_b2"] = np.zeros(H)
    out["base.c_w"] = glorot(rng, cfg.cond_dim, H)
    out["base.w1"] = glorot(rng, w * 2 * n, H)
    out["base.b1"] = np.zeros(H)
    out["base.w2"] = glorot(rng, w * H, H)
    out["base.b2"] = np.zeros(H)
    out["base.w_out"] = glorot(rng, H, n, gain=0.5)
    out["base.b_out"] = np.zeros(n)
    return out


def init_denoiser(cfg: DenoiserConfig = DenoiserConfig(), seed: int = 0, zero: bool = False,
                  schedule: NoiseSchedule = NoiseSchedule()) -> Denoiser:
    """Fresh model; ``zero`` gives an all-zero bundle whose noise prediction is 0."""
    rng = np.random.default_rng(seed)
    params = init_base(cfg, rng)
    params.update(init_predictor(cfg.dynamics, rng))
    params.update(init_decoder(cfg.dynamics, rng))
    if zero:
        params = ParamBundle({k: np.zeros_like(v) for k, v in params.items()})
    return Denoiser(cfg, params, schedule)


def time_embedding(t, dim: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _unfold(x: Tensor, radius: int, dilation: int = 1) -> Tensor:
    """Stack frames i - r*d .. i + r*d along channels, repeating edge frames."""
    B, L, C = x.shape
    pad = radius * dilation
    if pad:
        x = concat([x[:, :1]] * pad + [x] + [x[:, -1:]] * pad, axis=1)
    idx = np.arange(L)[:, None] + dilation * np.arange(2 * radius + 1)[None, :]
    return x[:, idx].reshape(B, L, (2 * radius + 1) * C)


def base_network(p, x: Tensor, t, cond, accel: Tensor, cfg: DenoiserConfig) -> Tensor:
    B = x.shape[0]
    temb = Tensor(time_embedding(np.broadcast_to(t, (B,)), cfg.time_dim))
    temb = (temb @ p["base.t_w1"] + p["base.t_b1"]).silu() @ p["base.t_w2"] + p["base.t_b2"]
    cemb = Tensor(np.asarray(cond, dtype=np.float64).reshape(B, cfg.cond_dim)) @ p["base.c_w"]
    shift = (temb + cemb).reshape(B, 1, cfg.hidden)
    h1 = (_unfold(concat([x, accel], axis=-1), cfg.radius) @ p["base.w1"] + p["base.b1"] + shift).silu()
    h2 = (_unfold(h1, cfg.radius, cfg.dilation) @ p["base.w2"] + p["base.b2"]).silu() + h1
    return h2 @ p["base.w_out"] + p["base.b_out"]


def denoise_tensors(p, x, t, cond, cfg: DenoiserConfig, schedule: NoiseSchedule, accel_scale=None):
    """(eps_pred, accel_pred) as graph tensors for a (B, L, n) batch.

    ``accel_scale`` multiplies the predicted acceleration before it reaches
    the base network and the residual decoder.
    """
    x = Tensor._wrap(x)
    B = x.shape[0]
    t = np.broadcast_to(np.asarray(t), (B,))
    level = schedule.noise_level(t)
    feats = history_features(x, cfg.dynamics.window, level)
    accel = accel_from_features(p, feats, cfg.n, "dyn.")
    drive = accel if accel_scale is None else accel * np.asarray(accel_scale, dtype=np.float64)
    eps = base_network(p, x, t, cond, drive, cfg) + decoder_tensors(p, drive, x, "dec.")
    return eps, accel


@dataclass(frozen=True)
class JointState:
    theta: np.ndarray
    accel: np.ndarray | None
    t: int

    def __post_init__(self):
        if self.accel is not None and np.shape(self.accel) != np.shape(self.theta):
            raise ValueError("accel shape must match theta")
        if not 0 <= int(self.t):
            raise ValueError("t must be >= 0")


def _batched(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ValueError(f"expected an L x n window or a B x L x n batch, got shape {x.shape}")


def _cond_batch(cond, B, cfg: DenoiserConfig):
    if cond is None:
        return np.zeros((B, cfg.cond_dim))
    c = np.asarray(cond, dtype=np.float64)
    if c.ndim == 1:
        c = np.broadcast_to(c, (B, c.shape[0]))
    if c.shape != (B, cfg.cond_dim):
        raise ValueError(f"cond shape {c.shape} does not match ({B}, {cfg.cond_dim})")
    return c


def biovae_denoise(state: JointState, denoiser: Denoiser, cond=None, accel_scale=None):
    """(eps_pred, accel_pred) for a noisy window at step ``state.t``."""
    x, squeeze = _batched(state.theta)
    if x.shape[-1] != denoiser.config.n:
        raise ValueError(f"theta has {x.shape[-1]} channels, model expects {denoiser.config.n}")
    t = _check_t(state.t, denoiser.schedule, lo=0)
    p = as_tensor_map(denoiser.params)
    eps, acc = denoise_tensors(p, Tensor(x), t, _cond_batch(cond, x.shape[0], denoiser.config),
                               denoiser.config, denoiser.schedule, accel_scale)
    if squeeze:
        return eps.data[0], acc.data[0]
    return eps.data, acc.data


def eps_function(denoiser, cond=None, guidance: float = 1.0, accel_scale=None):
    """Wrap a Denoiser (or a plain ``f(x, t)``) as ``eps(x, t)``.

    With ``guidance`` != 1 the conditional and null-condition predictions
    are blended by classifier-free guidance.
    """
    if not isinstance(denoiser, Denoiser):
        return denoiser

    def eps(x, t):
        e_c, _ = biovae_denoise(JointState(x, None, int(t)), denoiser, cond, accel_scale)
        if guidance == 1.0 or cond is None:
            return e_c
        e_u, _ = biovae_denoise(JointState(x, None, int(t)), denoiser, None, accel_scale)
        return cfg_combine(e_c, e_u, guidance)

    return eps


def ddim_invert(x0, t_target: int, denoiser, mode: str = "iterative", steps: int | None = 50,
                schedule: NoiseSchedule | None = None, cond=None, guidance: float = 1.0):
    """Map a clean sample to step ``t_target``.

    ``one-shot`` evaluates the noise once at the clean input. ``iterative``
    climbs the grid 0 = s_0 < ... < s_K, taking each noise estimate at the
    step being entered, ``eps(x_{s_k}, s_{k+1})``.
    """
    schedule = schedule or (denoiser.schedule if isinstance(denoiser, Denoiser) else NoiseSchedule())
    t_target = int(_check_t(t_target, schedule))
    eps_fn = eps_function(denoiser, cond, guidance)
    x = np.asarray(x0, dtype=np.float64)
    if mode == "one-shot":
        ab = schedule.alpha_bar(t_target)
        return math.sqrt(ab) * x + math.sqrt(1.0 - ab) * eps_fn(x, t_target)
    if mode != "iterative":
        raise ValueError(f"unknown inversion mode {mode!r}")
    grid = inversion_steps(t_target, steps)
    for s, s_next in zip(grid[:-1], grid[1:]):
        eps = eps_fn(x, int(s_next))
        ab, ab_next = schedule.alpha_bar(s), schedule.alpha_bar(s_next)
        x0_hat = (x - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)
        x = math.sqrt(ab_next) * x0_hat + math.sqrt(1.0 - ab_next) * eps
    return x


def ddim_sample(eps_fn, x_t, timesteps, schedule: NoiseSchedule):
    """Deterministic chain over decreasing ``timesteps`` (last entry usually 0)."""
    x = np.asarray(x_t, dtype=np.float64)
    for t, t_prev in zip(timesteps[:-1], timesteps[1:]):
        x = ddim_step(x, eps_fn(x, int(t)), int(t), int(t_prev), schedule)
    return x


def ddpm_sample(eps_fn, x_T, rng: np.random.Generator, schedule: NoiseSchedule, t_start: int | None = None):
    x = np.asarray(x_T, dtype=np.float64)
    for t in range(t_start or schedule.t_steps, 0, -1):
        x = ddpm_step(x, eps_fn(x, t), t, rng, schedule)
    return x


def refine_motion(theta, t_inv: int, denoiser, mode: str = "iterative", steps: int | None = 50,
                  cond=None, guidance: float = 1.0, accel_scale=None, schedule: NoiseSchedule | None = None):
    """Invert a normalized motion to ``t_inv`` then run DDIM back to step 0.

    ``accel_scale`` edits the predicted acceleration on the way back only,
    so the inversion sees the original motion's dynamics.
    """
    schedule = schedule or (denoiser.schedule if isinstance(denoiser, Denoiser) else NoiseSchedule())
    t_inv = int(_check_t(t_inv, schedule))
    x_t = ddim_invert(theta, t_inv, denoiser, mode, steps, schedule, cond, guidance)
    grid = inversion_steps(t_inv, steps)[::-1]
    eps_fn = eps_function(denoiser, cond, guidance, accel_scale)
    return ddim_sample(eps_fn, x_t, grid, schedule)
