"""Physical-plausibility metrics for joint-position motion.

Contact metrics turn a per-frame violation magnitude ``m`` into a frame
score ``exp(-m)``. In ``penalty`` aggregation the reported value is the
mean of ``1 - exp(-m)`` (0 means no violations); ``paper-raw`` reports the
mean frame score itself.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .kinematics import band_edges, central_diff
from .motion import MotionSequence, Skeleton

METRIC_KEYS = ("vc", "ac", "speed", "smoothness", "float", "foot_skating", "penetrate", "clip")


@dataclass(frozen=True)
class MetricConfig:
    contact_height_m: float = 0.05
    float_height_m: float = 0.05
    clip_dist_m: float = 0.05
    skate_speed_inst_mps: float = 0.50
    skate_speed_avg_mps: float = 0.30
    skate_window: int = 5
    pen_plane_m: float = 0.0
    low_frac: float = 0.10
    high_frac: float = 0.50
    aggregation: str = "penalty"
    consistency_cap: float = 100.0

    def __post_init__(self):
        for name in ("contact_height_m", "float_height_m", "clip_dist_m",
                     "skate_speed_inst_mps", "skate_speed_avg_mps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.low_frac < self.high_frac <= 1.0:
            raise ValueError("need 0 <= low_frac < high_frac <= 1")
        if self.consistency_cap <= 0:
            raise ValueError("consistency_cap must be > 0")
        if self.aggregation not in ("penalty", "paper-raw"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.skate_window < 1:
            raise ValueError("skate_window must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown metric config keys: {sorted(unknown)}")
        return cls(**doc)


def _aggregate(magnitudes: np.ndarray, cfg: MetricConfig) -> float:
    scores = np.exp(-magnitudes)
    if cfg.aggregation == "penalty":
        return float(np.mean(1.0 - scores))
    return float(np.mean(scores))


def _need_feet(skel: Skeleton):
    if skel.foot_left is None or skel.foot_right is None:
        raise ValueError("skeleton has no foot indices")
    return skel.foot_left, skel.foot_right


def foot_skating(seq: MotionSequence, skel: Skeleton, cfg: MetricConfig = MetricConfig()) -> float:
    """Skating penalty averaged over frames and both feet.

    A foot is skating at an interior frame when it is below the contact
    height while both its instantaneous and window-averaged horizontal
    speeds exceed their thresholds. End frames have no central velocity
    and are never flagged.
    """
    feet = _need_feet(skel)
    if seq.n_frames < 3:
        raise ValueError("foot skating needs at least 3 frames")
    pos = seq.positions[:, feet]                       # T x 2 x 3
    vel = central_diff(pos, seq.dt)
    speed = np.linalg.norm(vel[..., [0, 2]], axis=-1)  # T x 2
    T = seq.n_frames
    interior = np.zeros(T, dtype=bool)
    interior[1:-1] = True
    half = cfg.skate_window // 2
    csum = np.vstack([np.zeros((1, 2)), np.cumsum(speed, axis=0)])
    lo = np.clip(np.arange(T) - half, 0, T)
    hi = np.clip(np.arange(T) + half + 1, 0, T)
    avg = (csum[hi] - csum[lo]) / (hi - lo)[:, None]
    flag = ((pos[..., 1] < cfg.contact_height_m)
            & (speed > cfg.skate_speed_inst_mps)
            & (avg > cfg.skate_speed_avg_mps)
            & interior[:, None])
    mag = np.where(flag, np.linalg.norm(vel, axis=-1), 0.0)
    return _aggregate(mag, cfg)


def lowest_height(seq: MotionSequence, skel: Skeleton) -> np.ndarray:
    if not skel.lowest_candidates:
        raise ValueError("skeleton has no lowest-joint candidates")
    return seq.positions[:, list(skel.lowest_candidates), 1].min(axis=1)


def ground_clearance(seq: MotionSequence, skel: Skeleton, cfg: MetricConfig = MetricConfig()) -> tuple[float, float]:
    """(floating, penetration) of the lowest candidate joint."""
    h = lowest_height(seq, skel)
    float_mag = np.where(h > cfg.float_height_m, h - cfg.float_height_m, 0.0)
    pen_mag = np.where(h < cfg.pen_plane_m, cfg.pen_plane_m - h, 0.0)
    return _aggregate(float_mag, cfg), _aggregate(pen_mag, cfg)


def foot_clip(seq: MotionSequence, skel: Skeleton, cfg: MetricConfig = MetricConfig()) -> float:
    lf, rf = _need_feet(skel)
    dist = np.linalg.norm(seq.positions[:, lf] - seq.positions[:, rf], axis=-1)
    mag = np.where(dist < cfg.clip_dist_m, cfg.clip_dist_m - dist, 0.0)
    return _aggregate(mag, cfg)


def speed_metric(seq: MotionSequence, cfg: MetricConfig = MetricConfig()) -> float:
    """Mean per-joint displacement between consecutive frames, in m/s."""
    if seq.n_frames < 2:
        raise ValueError("speed needs at least 2 frames")
    step = np.linalg.norm(np.diff(seq.positions, axis=0), axis=-1)
    return float(step.mean() / seq.dt)


def smoothness_metric(seq: MotionSequence, cfg: MetricConfig = MetricConfig()) -> float:
    """Mean absolute component-wise jerk over interior frames, in m/s^3.

    Accelerations use the three-point second difference, defined on frames
    1..T-2; jerk is the difference of consecutive interior accelerations.
    """
    if seq.n_frames < 4:
        raise ValueError("smoothness needs at least 4 frames")
    x = seq.positions
    acc = (x[2:] - 2.0 * x[1:-1] + x[:-2]) / seq.dt ** 2
    jerk = np.abs(np.diff(acc, axis=0)) / seq.dt
    return float(jerk.mean())


def band_fractions(deriv: np.ndarray, low_frac: float, high_frac: float) -> tuple[float, float] | None:
    """Channel-RMS low/high band norms of unit-L2 per-channel spectra.

    ``deriv`` is T x C. Channels with no energy carry no spectral shape and
    are skipped; returns None when every channel is silent.
    """
    mags = np.abs(np.fft.rfft(deriv, axis=0))          # K x C
    norms = np.linalg.norm(mags, axis=0)
    live = norms > 1e-12 * max(1.0, float(norms.max(initial=0.0)))
    if not live.any():
        return None
    unit = mags[:, live] / norms[live]
    # bins at FFT round-off level carry no signal; dropping them makes the
    # pure-band limit cases exact
    unit = np.where(unit < 1e-12, 0.0, unit)
    unit = unit / np.linalg.norm(unit, axis=0)
    lo, hi = band_edges(unit.shape[0], low_frac, high_frac)
    l_c = np.sqrt((unit[:lo] ** 2).sum(axis=0))
    h_c = np.sqrt((unit[hi:] ** 2).sum(axis=0))
    return float(np.sqrt(np.mean(l_c ** 2))), float(np.sqrt(np.mean(h_c ** 2)))


def consistency_from_derivative(deriv: np.ndarray, cfg: MetricConfig = MetricConfig()) -> float:
    bands = band_fractions(np.asarray(deriv).reshape(deriv.shape[0], -1), cfg.low_frac, cfg.high_frac)
    if bands is None:
        return cfg.consistency_cap
    l, h = bands
    if l + h < 1e-9:
        return cfg.consistency_cap
    return (1.0 - l - h) / (l + h)


def consistency(seq: MotionSequence, cfg: MetricConfig = MetricConfig(), which: str = "velocity") -> float:
    """Spectral velocity (VC) or acceleration (AC) consistency."""
    if seq.n_frames < 8:
        raise ValueError("consistency needs at least 8 frames")
    if which not in ("velocity", "acceleration"):
        raise ValueError(f"which must be 'velocity' or 'acceleration', got {which!r}")
    deriv = central_diff(seq.positions, seq.dt)
    if which == "acceleration":
        deriv = central_diff(deriv, seq.dt)
    return consistency_from_derivative(deriv, cfg)


@dataclass(frozen=True)
class MetricReport:
    vc: float
    ac: float
    speed: float
    smoothness: float
    floating: float
    foot_skating: float
    penetrate: float
    clip: float
    config: MetricConfig = field(default_factory=MetricConfig)
    frames: int = 0

    def values(self) -> dict[str, float]:
        return {"vc": self.vc, "ac": self.ac, "speed": self.speed, "smoothness": self.smoothness,
                "float": self.floating, "foot_skating": self.foot_skating,
                "penetrate": self.penetrate, "clip": self.clip}

    def to_dict(self) -> dict:
        doc = dict(self.values())
        doc["config"] = asdict(self.config)
        doc["frames"] = self.frames
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricReport":
        return cls(vc=doc["vc"], ac=doc["ac"], speed=doc["speed"], smoothness=doc["smoothness"],
                   floating=doc["float"], foot_skating=doc["foot_skating"], penetrate=doc["penetrate"],
                   clip=doc["clip"], config=MetricConfig.from_dict(doc.get("config", {})),
                   frames=int(doc.get("frames", 0)))


def full_report(seq: MotionSequence, skel: Skeleton, cfg: MetricConfig = MetricConfig()) -> MetricReport:
    seq.check_skeleton(skel)
    flt, pen = ground_clearance(seq, skel, cfg)
    return MetricReport(
        vc=consistency(seq, cfg, "velocity"),
        ac=consistency(seq, cfg, "acceleration"),
        speed=speed_metric(seq, cfg),
        smoothness=smoothness_metric(seq, cfg),
        floating=flt,
        foot_skating=foot_skating(seq, skel, cfg),
        penetrate=pen,
        clip=foot_clip(seq, skel, cfg),
        config=cfg,
        frames=seq.n_frames,
    )


def mean_report(reports: list[MetricReport]) -> MetricReport:
    if not reports:
        raise ValueError("no reports to average")
    vals = {k: float(np.mean([r.values()[k] for r in reports])) for k in METRIC_KEYS}
    return MetricReport(vals["vc"], vals["ac"], vals["speed"], vals["smoothness"], vals["float"],
                        vals["foot_skating"], vals["penetrate"], vals["clip"],
                        config=reports[0].config, frames=int(sum(r.frames for r in reports)))


@dataclass(frozen=True)
class ReferenceStats:
    dataset_id: str
    vc: float
    ac: float
    speed: float
    smoothness: float
    floating: float
    foot_skating: float
    penetrate: float
    clip: float

    def values(self) -> dict[str, float]:
        return {"vc": self.vc, "ac": self.ac, "speed": self.speed, "smoothness": self.smoothness,
                "float": self.floating, "foot_skating": self.foot_skating,
                "penetrate": self.penetrate, "clip": self.clip}


# real-motion statistics of the two text-to-motion benchmarks
REFERENCES = {
    "humanml3d-gt": ReferenceStats("humanml3d-gt", 0.124, 0.682, 0.358, 2.60, 0.205, 0.057, 0.000, 0.000),
    "kitml-gt": ReferenceStats("kitml-gt", 0.352, 1.379, 0.926, 3.06, 0.550, 0.309, 0.208, 0.001),
}


def reference(dataset_id: str) -> ReferenceStats:
    try:
        return REFERENCES[dataset_id]
    except KeyError:
        raise KeyError(f"unknown reference {dataset_id!r}; choose from {sorted(REFERENCES)}") from None


def compare_to_reference(report, ref: ReferenceStats) -> dict[str, float]:
    """Signed per-metric deviation ``report - ref``."""
    vals = report.values()
    ref_vals = ref.values()
    return {k: vals[k] - ref_vals[k] for k in METRIC_KEYS}
