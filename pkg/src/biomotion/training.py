"""Three-part training objective, AdamW with EMA, and gradient checking."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .autodiff import Tensor
from .diffusion import Denoiser, NoiseSchedule, denoise_tensors, forward_diffuse
from .dynamics import N_MUSCLES, _activation, accel_from_features, decoder_tensors, history_features
from .kinematics import central_diff
from .params import ParamBundle
from .representation import MotionCodec, second_diff_matrix

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    weight_decay: float = 0.01
    ema_decay: float = 0.999
    batch_size: int = 16
    steps: int = 2000
    seed: int = 0
    window: int = 32
    cond_dropout: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    accel_weighting: str = "alpha_bar"
    log_window: int = 50
    pretrain_steps: int = 3000
    pretrain_lr: float = 1e-2

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must be in (0, 1)")
        if self.batch_size < 1 or self.steps < 0 or self.window < 4:
            raise ValueError("batch_size >= 1, steps >= 0 and window >= 4 required")
        if self.accel_weighting not in ("alpha_bar", "none"):
            raise ValueError(f"unknown accel_weighting {self.accel_weighting!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossBreakdown:
    l_diffusion: float
    l_accel: float
    l_phys: float
    total: float

    def to_dict(self) -> dict:
        return {"l_diffusion": self.l_diffusion, "l_accel": self.l_accel,
                "l_phys": self.l_phys, "total": self.total}


# -- data ------------------------------------------------------------------------

@dataclass
class MotionBatch:
    theta0: np.ndarray        # B L n normalized positions
    accel_gt: np.ndarray      # B L n normalized accelerations
    cond: np.ndarray          # B c


def crop_accel(pos: np.ndarray, fps: float) -> np.ndarray:
    dt = 1.0 / fps
    return central_diff(central_diff(pos, dt), dt)


class WindowDataset:
    """Every length-``window`` crop of a set of clips, encoded with ``codec``.

    Ground-truth accelerations are finite differences of each clean crop.
    """

    def __init__(self, clips, codec: MotionCodec, window: int, cond=None):
        thetas, accs, conds = [], [], []
        for k, pos in enumerate(clips):
            pos = np.asarray(pos, dtype=np.float64)
            c = np.zeros(3) if cond is None else np.asarray(cond[k], dtype=np.float64)
            for s in range(pos.shape[0] - window + 1):
                crop = pos[s:s + window]
                th, _ = codec.encode(crop)
                thetas.append(th)
                accs.append(codec.encode_accel(crop_accel(crop, codec.fps)))
                conds.append(c)
        if not thetas:
            raise ValueError(f"no clip is at least {window} frames long")
        self.theta = np.stack(thetas)
        self.accel = np.stack(accs)
        self.cond = np.stack(conds)

    def __len__(self):
        return self.theta.shape[0]

    def batch(self, idx) -> MotionBatch:
        return MotionBatch(self.theta[idx], self.accel[idx], self.cond[idx])


# -- losses ----------------------------------------------------------------------

def _mse(a: Tensor, b, weights=None) -> Tensor:
    d = a - Tensor._wrap(b)
    sq = d * d
    if weights is None:
        return sq.mean()
    per = sq.mean(axis=(1, 2))
    return (per * weights).mean()


def loss_graph(p, batch: MotionBatch, t, noise, denoiser: Denoiser, codec_gain, cond_keep=None,
               weighting: str = "alpha_bar"):
    """Graph tensors (l_diffusion, l_accel, l_phys) for one batch."""
    schedule = denoiser.schedule
    t = np.asarray(t)
    x_t = forward_diffuse(batch.theta0, t, noise, schedule)
    cond = batch.cond if cond_keep is None else batch.cond * np.asarray(cond_keep, dtype=np.float64)[:, None]
    eps, accel = denoise_tensors(p, Tensor(x_t), t, cond, denoiser.config, schedule)
    l_diff = _mse(eps, noise)
    l_phys = _mse(accel, batch.accel_gt)
    ab = schedule.alpha_bar(t)
    sab = np.sqrt(ab).reshape(-1, 1, 1)
    s1 = np.sqrt(1.0 - ab).reshape(-1, 1, 1)
    x0_hat = (Tensor(x_t) - eps * s1) / sab
    L = x_t.shape[1]
    D2 = Tensor(second_diff_matrix(L))
    acc_hat = (D2 @ x0_hat) * np.asarray(codec_gain)
    w = ab if weighting == "alpha_bar" else None
    l_acc = _mse(acc_hat, batch.accel_gt, w)
    return l_diff, l_acc, l_phys


def compute_losses(batch: MotionBatch, t_draws, noise_draws, denoiser: Denoiser, codec: MotionCodec,
                   cond_keep=None, weighting: str = "alpha_bar") -> LossBreakdown:
    if np.shape(noise_draws) != np.shape(batch.theta0):
        raise ValueError("noise draws must match the batch shape")
    if np.shape(batch.accel_gt) != np.shape(batch.theta0):
        raise ValueError("ground-truth accelerations must match the batch shape")
    p = denoiser.params.tensors(trainable=False)
    parts = loss_graph(p, batch, t_draws, noise_draws, denoiser, codec.accel_gain(), cond_keep, weighting)
    return breakdown(*(float(x.data) for x in parts))


def breakdown(l_diff: float, l_acc: float, l_phys: float) -> LossBreakdown:
    return LossBreakdown(l_diff, l_acc, l_phys, l_diff + l_acc + l_phys)


# -- optimizer -----------------------------------------------------------------

@dataclass
class AdamWState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros(cls, params: ParamBundle) -> "AdamWState":
        return cls({k: np.zeros_like(a) for k, a in params.items()},
                   {k: np.zeros_like(a) for k, a in params.items()}, 0)

    def to_bundle(self) -> ParamBundle:
        out = ParamBundle()
        for k in self.m:
            out["m." + k] = self.m[k]
            out["v." + k] = self.v[k]
        return out

    @classmethod
    def from_bundle(cls, bundle: ParamBundle, step: int) -> "AdamWState":
        m = {k[2:]: v for k, v in bundle.items() if k.startswith("m.")}
        v = {k[2:]: a for k, a in bundle.items() if k.startswith("v.")}
        return cls(m, v, step)


def adamw_update(params: ParamBundle, grads: dict, state: AdamWState, cfg: TrainConfig) -> ParamBundle:
    """Decoupled weight decay: p <- p (1 - lr wd) - lr mhat / (sqrt(vhat) + eps)."""
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    out = ParamBundle()
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p)
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        step = (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + cfg.adam_eps)
        out[k] = p * (1.0 - cfg.learning_rate * cfg.weight_decay) - cfg.learning_rate * step
    return out


def ema_update(ema: ParamBundle, params: ParamBundle, decay: float) -> ParamBundle:
    return ParamBundle({k: decay * ema[k] + (1.0 - decay) * params[k] for k in params})


# -- training ------------------------------------------------------------------

@dataclass
class StepDraws:
    t: np.ndarray
    noise: np.ndarray
    cond_keep: np.ndarray


def draw_step(rng: np.random.Generator, shape, schedule: NoiseSchedule, cond_dropout: float) -> StepDraws:
    B = shape[0]
    t = rng.integers(1, schedule.t_steps + 1, size=B)
    noise = rng.standard_normal(shape)
    keep = (rng.random(B) >= cond_dropout).astype(np.float64)
    return StepDraws(t, noise, keep)


def loss_and_grads(params: ParamBundle, batch: MotionBatch, draws: StepDraws, denoiser: Denoiser,
                   codec: MotionCodec, weighting: str):
    p = params.tensors()
    parts = loss_graph(p, batch, draws.t, draws.noise, denoiser, codec.accel_gain(), draws.cond_keep, weighting)
    total = parts[0] + parts[1] + parts[2]
    total.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in p.items()}
    return breakdown(*(float(x.data) for x in parts)), grads


def train_step(model: Denoiser, ema: ParamBundle, batch: MotionBatch, draws: StepDraws, config: TrainConfig,
               opt: AdamWState, codec: MotionCodec):
    """One AdamW update; returns (model', ema', losses)."""
    losses, grads = loss_and_grads(model.params, batch, draws, model, codec, config.accel_weighting)
    if not math.isfinite(losses.total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise TrainingError(f"non-finite loss or gradient at step {opt.step}")
    new = adamw_update(model.params, grads, opt, config)
    # warm the average up so early steps do not drag in the random init
    decay = min(config.ema_decay, (1.0 + opt.step) / (10.0 + opt.step))
    return Denoiser(model.config, new, model.schedule), ema_update(ema, new, decay), losses


@dataclass
class TrainResult:
    model: Denoiser
    ema: ParamBundle
    log: list
    opt: AdamWState

    def ema_model(self) -> Denoiser:
        return Denoiser(self.model.config, self.ema, self.model.schedule)


def train(model: Denoiser, data: WindowDataset, codec: MotionCodec, config: TrainConfig,
          log_fh=None, ema: ParamBundle | None = None, opt: AdamWState | None = None,
          on_step=None) -> TrainResult:
    """Run ``config.steps`` updates. ``on_step(step, record)`` is called after each one."""
    rng = np.random.default_rng(config.seed)
    opt = opt or AdamWState.zeros(model.params)
    ema = ema.copy() if ema is not None else model.params.copy()
    records = []
    for step in range(config.steps):
        idx = rng.integers(0, len(data), size=config.batch_size)
        batch = data.batch(idx)
        draws = draw_step(rng, batch.theta0.shape, model.schedule, config.cond_dropout)
        model, ema, losses = train_step(model, ema, batch, draws, config, opt, codec)
        rec = {"step": step, **losses.to_dict()}
        records.append(rec)
        if log_fh is not None:
            log_fh.write(json.dumps(rec, sort_keys=True) + "\n")
        if on_step is not None:
            on_step(step, rec)
        if step % 100 == 0:
            log.info("step %d total %.4f", step, losses.total)
    return TrainResult(model, ema, records, opt)


def moving_average(values, window: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    lo = np.maximum(np.arange(v.size) - window + 1, 0)
    return (c[np.arange(v.size) + 1] - c[lo]) / (np.arange(v.size) + 1 - lo)


# -- muscle pretraining ----------------------------------------------------------

def pretrain_muscles(model: Denoiser, clips, torques, codec: MotionCodec, config: TrainConfig,
                     steps: int | None = None, lr: float | None = None) -> Denoiser:
    """Fit the activation head to torque-proxy channels on clean motion.

    Only ``dyn.u_*`` parameters move; the rest of the model is untouched.
    """
    rng = np.random.default_rng(config.seed + 1)
    W = model.config.dynamics.window
    feats, targets = activation_dataset(clips, torques, codec, W)
    # standardize channels so small-range proxies are fitted as well as large ones
    weight = 1.0 / np.maximum(targets.var(axis=0), 1e-4)
    weight = weight / weight.mean()
    names = [k for k in model.params if k.startswith("dyn.u_")]
    sub = model.params.subset("dyn.u_")
    opt = AdamWState.zeros(sub)
    cfg = TrainConfig(learning_rate=lr or config.pretrain_lr, weight_decay=0.0, ema_decay=config.ema_decay)
    for _ in range(steps if steps is not None else config.pretrain_steps):
        idx = rng.integers(0, feats.shape[0], size=256)
        p = sub.tensors()
        u = _activation(p, Tensor(feats[idx][:, None]), "dyn.")
        d = u - targets[idx][:, None]
        loss = (d * d * weight).mean()
        loss.backward()
        sub = adamw_update(sub, {k: p[k].grad for k in names}, opt, cfg)
    params = model.params.copy()
    params.update(sub)
    return Denoiser(model.config, params, model.schedule)


def activation_dataset(clips, torques, codec: MotionCodec, window: int):
    fs, ts = [], []
    for pos, tq in zip(clips, torques):
        th, _ = codec.encode(pos)
        f = history_features(Tensor(th[None]), window, np.zeros(1)).data[0]
        fs.append(f)
        ts.append(np.asarray(tq, dtype=np.float64).reshape(-1, N_MUSCLES))
    return np.concatenate(fs), np.concatenate(ts)


def activation_correlation(model: Denoiser, clips, torques, codec: MotionCodec) -> np.ndarray:
    """Per-channel Pearson correlation of predicted activations with proxies."""
    feats, targets = activation_dataset(clips, torques, codec, model.config.dynamics.window)
    u = _activation(model.params.tensors(False), Tensor(feats[:, None]), "dyn.").data[:, 0]
    uc, tc = u - u.mean(0), targets - targets.mean(0)
    return (uc * tc).sum(0) / np.sqrt((uc ** 2).sum(0) * (tc ** 2).sum(0) + 1e-300)


# -- gradient check --------------------------------------------------------------

@dataclass(frozen=True)
class GradCheckResult:
    max_relative_error: float
    probes: int
    warning: str | None = None
    worst: tuple | None = None


def grad_check(params: ParamBundle, loss_fn, probe_count: int = 100, eps_fd: float = 1e-5,
               rng: np.random.Generator | None = None, floor: float = 1e-8) -> GradCheckResult:
    """Worst relative gap between backprop and central differences.

    ``loss_fn`` maps a name -> Tensor dict to a scalar Tensor. The relative
    error is |a - f| / max(|a|, |f|, floor).
    """
    if eps_fd <= 0:
        raise ValueError("eps_fd must be > 0")
    if probe_count <= 0:
        return GradCheckResult(0.0, 0, "no probes requested; check is vacuous")
    if params.n_params >= 100_000:
        raise ValueError("grad_check is meant for models under 1e5 parameters")
    rng = rng or np.random.default_rng(0)
    p = params.tensors()
    loss_fn(p).backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in p.items()}
    names = params.names()
    sizes = np.array([params[k].size for k in names])
    flat_idx = rng.choice(int(sizes.sum()), size=min(probe_count, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    work = params.copy()
    worst, where = 0.0, None
    for fi in flat_idx:
        j = int(np.searchsorted(offsets, fi, side="right") - 1)
        name, local = names[j], int(fi - offsets[j])
        arr = work[name].reshape(-1)
        orig = arr[local]
        arr[local] = orig + eps_fd
        up = float(loss_fn(work.tensors(False)).data)
        arr[local] = orig - eps_fd
        down = float(loss_fn(work.tensors(False)).data)
        arr[local] = orig
        fd = (up - down) / (2.0 * eps_fd)
        a = float(analytic[name].reshape(-1)[local])
        rel = abs(a - fd) / max(abs(a), abs(fd), floor)
        if rel > worst:
            worst, where = rel, (name, local, a, fd)
    return GradCheckResult(worst, len(flat_idx), None, where)


def full_loss_fn(batch: MotionBatch, draws: StepDraws, denoiser: Denoiser, codec: MotionCodec,
                 weighting: str = "alpha_bar"):
    gain = codec.accel_gain()

    def fn(p):
        a, b, c = loss_graph(p, batch, draws.t, draws.noise, denoiser, gain, draws.cond_keep, weighting)
        return a + b + c

    return fn


# -- residual decoder harness ------------------------------------------------------

def _residual_graph(p, x_t, t, denoiser: Denoiser):
    cfg = denoiser.config
    feats = history_features(Tensor(x_t), cfg.dynamics.window, denoiser.schedule.noise_level(t))
    accel = accel_from_features(p, feats, cfg.n, "dyn.")
    return decoder_tensors(p, accel, Tensor(x_t), "dec.")


def residual_mse(denoiser: Denoiser, batch: MotionBatch, draws: StepDraws) -> float:
    """MSE of the decoder residual alone against the injected noise."""
    x_t = forward_diffuse(batch.theta0, draws.t, draws.noise, denoiser.schedule)
    p = denoiser.params.tensors(trainable=False)
    r = _residual_graph(p, x_t, draws.t, denoiser)
    return float(np.mean((r.data - draws.noise) ** 2))


def fit_decoder(model: Denoiser, data: WindowDataset, config: TrainConfig, steps: int = 300,
                lr: float = 1e-2) -> Denoiser:
    """Train only the ``dec.*`` parameters to reconstruct the noise on their own.

    The base network is left out of the prediction, so this measures what the
    causal decoder can recover from the predicted accelerations and Θᵗ.
    """
    rng = np.random.default_rng(config.seed + 2)
    sub = model.params.subset("dec.")
    frozen = model.params.tensors(trainable=False)
    opt = AdamWState.zeros(sub)
    cfg = TrainConfig(learning_rate=lr, weight_decay=0.0, ema_decay=config.ema_decay)
    for _ in range(steps):
        batch = data.batch(rng.integers(0, len(data), size=config.batch_size))
        draws = draw_step(rng, batch.theta0.shape, model.schedule, 0.0)
        x_t = forward_diffuse(batch.theta0, draws.t, draws.noise, model.schedule)
        p = {**frozen, **sub.tensors()}
        loss = _mse(_residual_graph(p, x_t, draws.t, model), draws.noise)
        loss.backward()
        sub = adamw_update(sub, {k: p[k].grad for k in sub.names()}, opt, cfg)
    params = model.params.copy()
    params.update(sub)
    return Denoiser(model.config, params, model.schedule)
