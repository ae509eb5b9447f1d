"""End-to-end helpers shared by the command line and the demos.

A trained model on disk is a directory holding ``model.params.json`` (the
training weights), ``ema.params.json`` (the averaged weights used for
inference), ``optimizer.params.json`` and ``train_log.jsonl``. Each
parameter file carries the model config, the motion codec and the noise
schedule so the directory is self-describing.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import motion as mio
from .diffusion import Denoiser, DenoiserConfig, NoiseSchedule, ddim_invert, init_denoiser, refine_motion
from .params import ParamBundle
from .representation import MotionCodec, Trend
from .sim import KINDS, default_scenarios, load_array_file, load_manifest, simulate
from .training import TrainConfig, TrainResult, WindowDataset, draw_step, full_loss_fn, pretrain_muscles, train

log = logging.getLogger(__name__)

# desk-scale run: a higher learning rate than the large-model default and
# enough steps for the toy denoiser to resolve centimetre-level detail
DESK_TRAIN = TrainConfig(learning_rate=3e-3, steps=6000)
DESK_REFINE_STEPS = 3


def kind_cond(kind: str) -> np.ndarray:
    """One-hot condition vector for a simulator scenario kind."""
    if kind not in KINDS:
        raise ValueError(f"unknown scenario kind {kind!r}")
    return np.eye(len(KINDS))[KINDS.index(kind)]


@dataclass
class Corpus:
    clips: list
    torques: list
    conds: list
    skeleton: object
    ids: list
    fps: float


def load_corpus(path) -> Corpus:
    root = Path(path)
    man = load_manifest(root / "manifest.json")
    clips, torques, conds, ids = [], [], [], []
    skel, fps = None, None
    for clip in man["clips"]:
        seq = mio.load_motion(root / clip["motion_path"])
        if fps is None:
            fps = seq.fps
        elif seq.fps != fps:
            raise ValueError(f"clip {clip['id']} has fps {seq.fps}, corpus uses {fps}")
        sk = mio.load_skeleton(root / clip["skeleton_path"])
        if skel is None:
            skel = sk
        elif sk.n_joints != skel.n_joints:
            raise ValueError(f"clip {clip['id']} has {sk.n_joints} joints, corpus uses {skel.n_joints}")
        clips.append(seq.positions)
        torques.append(load_array_file(root / clip["torque_path"]))
        conds.append(kind_cond(clip["scenario"]["kind"]))
        ids.append(clip["id"])
    if not clips:
        raise ValueError("corpus has no clips")
    return Corpus(clips, torques, conds, skel, ids, fps)


@dataclass
class TrainedModel:
    denoiser: Denoiser          # averaged weights
    codec: MotionCodec
    raw: Denoiser | None = None


def fit_model(corpus: Corpus, train_cfg: TrainConfig, model_cfg: DenoiserConfig | None = None,
              schedule: NoiseSchedule = NoiseSchedule(), log_fh=None, on_step=None) -> tuple[TrainedModel, TrainResult]:
    codec = MotionCodec.fit(corpus.clips, corpus.fps)
    model_cfg = model_cfg or DenoiserConfig(n=codec.n)
    model = init_denoiser(model_cfg, seed=train_cfg.seed, schedule=schedule)
    if train_cfg.pretrain_steps:
        model = pretrain_muscles(model, corpus.clips, corpus.torques, codec, train_cfg)
    data = WindowDataset(corpus.clips, codec, train_cfg.window, corpus.conds)
    res = train(model, data, codec, train_cfg, log_fh=log_fh, on_step=on_step)
    return TrainedModel(res.ema_model(), codec, res.model), res


def _extra(model: Denoiser, codec: MotionCodec, provenance: dict | None) -> dict:
    doc = {"model_config": model.config.to_dict(), "codec": codec.to_dict(),
           "schedule": model.schedule.to_dict()}
    if provenance is not None:
        doc["provenance"] = provenance
    return doc


def save_model(out_dir, trained: TrainedModel, result: TrainResult | None = None, provenance: dict | None = None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    extra = _extra(trained.denoiser, trained.codec, provenance)
    trained.denoiser.params.save(out / "ema.params.json", extra)
    if trained.raw is not None:
        trained.raw.params.save(out / "model.params.json", extra)
    if result is not None:
        result.opt.to_bundle().save(out / "optimizer.params.json", {"step": result.opt.step, **extra})


def load_model(path, which: str = "ema") -> TrainedModel:
    """Read a model directory (or a single parameter file)."""
    p = Path(path)
    if p.is_dir():
        p = p / ("ema.params.json" if which == "ema" else "model.params.json")
    with open(p, encoding="utf-8") as fh:
        doc = json.load(fh)
    params = ParamBundle.from_dict(doc)
    cfg = DenoiserConfig.from_dict(doc["model_config"])
    den = Denoiser(cfg, params, NoiseSchedule.from_dict(doc["schedule"]))
    return TrainedModel(den, MotionCodec.from_dict(doc["codec"]))


def channel_factors(codec: MotionCodec, joint_names, accel_factor=1.0, joint_factors: dict | None = None):
    """Per-channel acceleration multipliers from a global factor and a joint map."""
    if np.ndim(accel_factor) == 0 and float(accel_factor) <= 0:
        raise ValueError("acceleration factor must be > 0")
    scale = np.full(codec.n, float(accel_factor))
    for name, f in (joint_factors or {}).items():
        if f <= 0:
            raise ValueError(f"acceleration factor for {name!r} must be > 0")
        if name not in joint_names:
            raise ValueError(f"unknown joint {name!r}")
        j = list(joint_names).index(name)
        scale[3 * j:3 * j + 3] = float(f)
    return scale


def refine_positions(positions, trained: TrainedModel, t_inv: int, mode: str = "iterative", steps: int = DESK_REFINE_STEPS,
                     cond=None, guidance: float = 1.0, accel_scale=None) -> np.ndarray:
    theta, trend = trained.codec.encode(positions)
    out = refine_motion(theta, t_inv, trained.denoiser, mode, steps, cond, guidance, accel_scale)
    return trained.codec.decode(out, trend)


def invert_positions(positions, trained: TrainedModel, t_inv: int, mode: str = "iterative", steps: int = DESK_REFINE_STEPS,
                     cond=None, guidance: float = 1.0) -> tuple[np.ndarray, Trend]:
    theta, trend = trained.codec.encode(positions)
    return ddim_invert(theta, t_inv, trained.denoiser, mode, steps, cond=cond, guidance=guidance), trend


def randomize_zero_layers(params: ParamBundle, rng: np.random.Generator, scale: float = 0.1) -> ParamBundle:
    """Copy of ``params`` with biases and the zero-init decoder output perturbed.

    A freshly initialised model has several exactly-zero blocks whose
    gradients vanish; perturbing them makes a gradient check cover every path.
    """
    out = params.copy()
    for k in out.names():
        leaf = k.rsplit(".", 1)[-1]
        if k.startswith("dec.out") or leaf in ("b", "b1", "b2") or leaf.endswith("_b"):
            out[k] = scale * rng.standard_normal(out[k].shape)
    return out


def gradcheck_setup(seed: int = 0, model_path=None, clips: int = 4, batch: int = 4):
    """Parameters and a closed-over full loss for a finite-difference check."""
    rng = np.random.default_rng(seed)
    outs = [simulate(sc) for sc in default_scenarios(seed, clips)]
    pos = [o.motion.positions for o in outs]
    if model_path is not None:
        trained = load_model(model_path)
        model, codec = trained.denoiser, trained.codec
    else:
        codec = MotionCodec.fit(pos, outs[0].motion.fps)
        model = init_denoiser(DenoiserConfig(n=codec.n), seed=seed)
        model = Denoiser(model.config, randomize_zero_layers(model.params, rng), model.schedule)
    data = WindowDataset(pos, codec, 32, [kind_cond("gait")] * len(pos))
    b = data.batch(rng.integers(0, len(data), batch))
    d = draw_step(rng, b.theta0.shape, model.schedule, 0.1)
    return model.params, full_loss_fn(b, d, model, codec)
