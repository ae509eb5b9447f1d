"""``biomotion`` command line: metrics, simulation, training, refinement, editing.

Every command reads an optional JSON run config (``--config``), lets flags
override it, and writes JSON outputs that embed the resolved config so a run
can be reproduced from any of its files.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import motion as mio
from .diffusion import DenoiserConfig, NoiseSchedule
from .metrics import METRIC_KEYS, MetricConfig, MetricReport, compare_to_reference, full_report, mean_report, reference
from .pipeline import DESK_REFINE_STEPS, DESK_TRAIN, channel_factors, fit_model, gradcheck_setup, invert_positions, kind_cond, \
    load_corpus, load_model, refine_positions, save_model
from .sim import default_scenarios, make_corpus
from .training import TrainConfig, grad_check

log = logging.getLogger("biomotion")

SECTIONS = ("metrics", "schedule", "train", "model", "refine", "edit", "simulate")
REFINE_DEFAULTS = {"t_inv": 300, "mode": "iterative", "steps": DESK_REFINE_STEPS, "guidance": 1.0,
                   "kind": "gait"}
EDIT_DEFAULTS = {"accel_factor": 1.0, "joint_factors": {}}
SIM_DEFAULTS = {"count": 64, "duration": 4.0, "fps": 20.0}


class ConfigError(ValueError):
    pass


def _check_keys(section: str, doc: dict, allowed):
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")


def load_run_config(path) -> dict:
    """Read a run config; unknown sections or keys are errors."""
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    _check_keys("run config", doc, SECTIONS + ("seed",))
    _check_keys("refine", doc.get("refine", {}), REFINE_DEFAULTS)
    _check_keys("edit", doc.get("edit", {}), EDIT_DEFAULTS)
    _check_keys("simulate", doc.get("simulate", {}), SIM_DEFAULTS)
    # validate the typed sections eagerly so bad configs fail before any work
    MetricConfig.from_dict(doc.get("metrics", {}))
    NoiseSchedule.from_dict(doc.get("schedule", {}))
    TrainConfig.from_dict(doc.get("train", {}))
    DenoiserConfig.from_dict(doc.get("model", {}))
    return doc


class Run:
    """Resolved configuration for one invocation."""

    def __init__(self, args):
        self.args = args
        doc = load_run_config(args.config)
        self.seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
        self.metrics = MetricConfig.from_dict(doc.get("metrics", {}))
        if getattr(args, "aggregation", None):
            self.metrics = MetricConfig.from_dict({**asdict(self.metrics), "aggregation": args.aggregation})
        self.schedule = NoiseSchedule.from_dict(doc.get("schedule", {}))
        # the desk preset is the baseline; the config and flags override it
        train = {**DESK_TRAIN.to_dict(), **doc.get("train", {})}
        train["seed"] = self.seed
        for flag, key in (("steps", "steps"), ("batch_size", "batch_size"), ("lr", "learning_rate"),
                          ("pretrain_steps", "pretrain_steps")):
            v = getattr(args, flag, None)
            if v is not None and args.command == "train":
                train[key] = v
        self.train = TrainConfig.from_dict(train)
        self.model_doc = doc.get("model", {})
        self.refine = {**REFINE_DEFAULTS, **doc.get("refine", {})}
        for key in ("t_inv", "mode", "steps", "guidance"):
            v = getattr(args, key, None)
            if v is not None and args.command in ("refine", "edit", "invert"):
                self.refine[key] = v
        self.edit = {**EDIT_DEFAULTS, **doc.get("edit", {})}
        if getattr(args, "accel_factor", None) is not None:
            self.edit["accel_factor"] = args.accel_factor
        if getattr(args, "joint_factors", None):
            self.edit["joint_factors"] = json.loads(args.joint_factors)
        self.simulate = {**SIM_DEFAULTS, **doc.get("simulate", {})}
        for key in ("count", "duration", "fps"):
            v = getattr(args, key, None)
            if v is not None and args.command == "simulate":
                self.simulate[key] = v

    def snapshot(self) -> dict:
        """Everything that determines the outputs; no clocks or host details."""
        return {
            "command": self.args.command, "seed": self.seed, "version": __version__,
            "metrics": asdict(self.metrics), "schedule": self.schedule.to_dict(),
            "train": self.train.to_dict(), "model": self.model_doc,
            "refine": self.refine, "edit": self.edit, "simulate": self.simulate,
        }


# -- output helpers ------------------------------------------------------------

def _write_json(path, doc):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    mio.write_text(path, mio.dumps_canonical(doc))


def _report_rows(rows, with_ref: bool) -> str:
    """Aligned text table; deviation rows follow their file when a reference is set."""
    head = ["file"] + list(METRIC_KEYS)
    lines = [head]
    for name, vals, dev in rows:
        lines.append([name] + [f"{vals[k]:.4f}" for k in METRIC_KEYS])
        if with_ref and dev is not None:
            lines.append(["  vs ref"] + [f"{dev[k]:+.4f}" for k in METRIC_KEYS])
    widths = [max(len(r[i]) for r in lines) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in lines)


def _report_one(path_and_cfg):
    path, skel_path, cfg = path_and_cfg
    seq = mio.load_motion(path)
    skel = mio.load_skeleton(skel_path)
    return full_report(seq, skel, cfg).to_dict()


# -- commands ------------------------------------------------------------------

def cmd_metrics(run: Run) -> int:
    args = run.args
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ref = reference(args.reference) if args.reference else None
    jobs = [(p, args.skeleton, run.metrics) for p in args.inputs]
    if args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_report_one, j) for j in jobs]
            results = []
            for f in futures:
                try:
                    results.append(f.result())
                except Exception as exc:     # reported per file below
                    results.append(exc)
    else:
        results = []
        for j in jobs:
            try:
                results.append(_report_one(j))
            except Exception as exc:
                results.append(exc)
    failures, reports, rows, per_file = 0, [], [], []
    for path, res in zip(args.inputs, results):
        name = Path(path).name
        if isinstance(res, Exception):
            failures += 1
            print(f"error: {path}: {res}", file=sys.stderr)
            per_file.append({"file": name, "error": str(res)})
            continue
        rep = MetricReport.from_dict(res)
        reports.append(rep)
        dev = compare_to_reference(rep, ref) if ref else None
        doc = {"report": res, "file": name, "run_config": run.snapshot()}
        if dev is not None:
            doc["deviation"] = dev
            doc["reference"] = ref.dataset_id
        stem = name[:-5] if name.endswith(".json") else name
        _write_json(out / f"{stem}.report.json", doc)
        rows.append((name, rep.values(), dev))
        per_file.append({"file": name, "values": rep.values(), **({"deviation": dev} if dev else {})})
    summary = {"files": per_file, "failures": failures, "run_config": run.snapshot()}
    if reports:
        mean = mean_report(reports)
        summary["mean"] = mean.values()
        mean_dev = compare_to_reference(mean, ref) if ref else None
        if mean_dev is not None:
            summary["mean_deviation"] = mean_dev
            summary["reference"] = ref.dataset_id
        rows.append(("mean", mean.values(), mean_dev))
    _write_json(out / "summary.json", summary)
    if rows:
        print(_report_rows(rows, ref is not None))
    return 1 if failures else 0


def cmd_simulate(run: Run) -> int:
    sim = run.simulate
    scenarios = default_scenarios(run.seed, int(sim["count"]), float(sim["duration"]), float(sim["fps"]))
    man = make_corpus(scenarios, run.args.out, run.metrics, jobs=run.args.jobs,
                      provenance={"run_config": run.snapshot()})
    print(f"wrote {len(man['clips'])} clips to {run.args.out}")
    return 0


def cmd_train(run: Run) -> int:
    corpus = load_corpus(run.args.corpus)
    out = Path(run.args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = 3 * corpus.skeleton.n_joints
    doc = dict(run.model_doc)
    doc.setdefault("n", n)
    doc["dynamics"] = {"n": doc["n"], **doc.get("dynamics", {})}
    model_cfg = DenoiserConfig.from_dict(doc)
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as fh:
        trained, res = fit_model(corpus, run.train, model_cfg, run.schedule, log_fh=fh)
    save_model(out, trained, res, provenance={"run_config": run.snapshot()})
    last = res.log[-1] if res.log else None
    if last:
        print(f"step {last['step']} total {last['total']:.6f}")
    return 0


def _paired_reports(before, after, skel, cfg) -> dict:
    b = full_report(before, skel, cfg)
    a = full_report(after, skel, cfg)
    bv, av = b.values(), a.values()
    return {"before": bv, "after": av, "diff": {k: av[k] - bv[k] for k in METRIC_KEYS}}


def _refine_common(run: Run, accel_scale=None) -> int:
    args = run.args
    seq = mio.load_motion(args.input)
    skel = mio.load_skeleton(args.skeleton) if args.skeleton else None
    trained = load_model(args.model)
    r = run.refine
    out_pos = refine_positions(seq.positions, trained, int(r["t_inv"]), r["mode"], int(r["steps"]),
                               kind_cond(r["kind"]), float(r["guidance"]), accel_scale)
    refined = seq.with_positions(out_pos)
    mio.save_motion(refined, args.out, provenance={"run_config": run.snapshot()})
    if skel is not None:
        doc = {"run_config": run.snapshot(), **_paired_reports(seq, refined, skel, run.metrics)}
        _write_json(Path(args.out).with_suffix(".report.json"), doc)
    print(f"wrote {args.out}")
    return 0


def cmd_refine(run: Run) -> int:
    return _refine_common(run)


def cmd_edit(run: Run) -> int:
    seq = mio.load_motion(run.args.input)
    trained = load_model(run.args.model)
    scale = channel_factors(trained.codec, seq.joint_names, run.edit["accel_factor"], run.edit["joint_factors"])
    return _refine_common(run, scale)


def cmd_invert(run: Run) -> int:
    args = run.args
    seq = mio.load_motion(args.input)
    trained = load_model(args.model)
    r = run.refine
    latent, trend = invert_positions(seq.positions, trained, int(r["t_inv"]), r["mode"], int(r["steps"]),
                                     kind_cond(r["kind"]), float(r["guidance"]))
    _write_json(args.out, {"latent": latent, "t": int(r["t_inv"]), "trend": trend.to_dict(),
                           "joints": list(seq.joint_names), "fps": seq.fps, "run_config": run.snapshot()})
    print(f"wrote {args.out}")
    return 0


def cmd_gradcheck(run: Run) -> int:
    args = run.args
    params, loss_fn = gradcheck_setup(run.seed, args.model)
    res = grad_check(params, loss_fn, args.probes, args.eps, np.random.default_rng(run.seed))
    doc = {"max_relative_error": res.max_relative_error, "probes": res.probes, "warning": res.warning,
           "n_params": params.n_params, "run_config": run.snapshot()}
    if args.out:
        _write_json(args.out, doc)
    if res.warning:
        print(f"warning: {res.warning}", file=sys.stderr)
    print(f"max relative error {res.max_relative_error:.3e} over {res.probes} probes")
    return 0


COMMANDS = {"metrics": cmd_metrics, "simulate": cmd_simulate, "train": cmd_train, "refine": cmd_refine,
            "edit": cmd_edit, "invert": cmd_invert, "gradcheck": cmd_gradcheck}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # suppressed defaults let the flags go before or after the subcommand
    common.add_argument("--config", default=argparse.SUPPRESS, help="run-config JSON file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (overrides the config)")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="parallel workers for file-level work")

    p = argparse.ArgumentParser(prog="biomotion", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("metrics", parents=[common], help="plausibility metrics for motion files")
    m.add_argument("inputs", nargs="+")
    m.add_argument("--skeleton", required=True)
    m.add_argument("--out", required=True, help="output directory")
    m.add_argument("--reference", help="reference table id, e.g. humanml3d-gt")
    m.add_argument("--aggregation", choices=["penalty", "paper-raw"])

    s = sub.add_parser("simulate", parents=[common], help="write a synthetic gait corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int)
    s.add_argument("--duration", type=float)
    s.add_argument("--fps", type=float)

    t = sub.add_parser("train", parents=[common], help="train the denoiser on a corpus")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True, help="model directory")
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--lr", type=float)
    t.add_argument("--pretrain-steps", type=int, dest="pretrain_steps")

    for name, helptext in (("refine", "invert then regenerate a motion"),
                           ("edit", "refine with scaled accelerations"),
                           ("invert", "map a motion to its latent at t_inv")):
        r = sub.add_parser(name, parents=[common], help=helptext)
        r.add_argument("input")
        r.add_argument("--model", required=True, help="model directory")
        r.add_argument("--out", required=True)
        r.add_argument("--t-inv", type=int, dest="t_inv")
        r.add_argument("--mode", choices=["iterative", "one-shot"])
        r.add_argument("--steps", type=int, help="inversion sub-steps")
        r.add_argument("--guidance", type=float)
        if name != "invert":
            r.add_argument("--skeleton", help="skeleton file; enables before/after reports")
        if name == "edit":
            r.add_argument("--accel-factor", type=float, dest="accel_factor")
            r.add_argument("--joint-factors", dest="joint_factors", help='JSON map, e.g. {"l_foot": 1.5}')

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    g.add_argument("--model", help="model directory (default: a fresh random model)")
    g.add_argument("--probes", type=int, default=100)
    g.add_argument("--eps", type=float, default=1e-5)
    g.add_argument("--out")
    return p


def main(argv=None) -> int:
    level = os.environ.get("BIOMECH_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("jobs", 1)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        run = Run(args)
        return COMMANDS[args.command](run)
    except (ConfigError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
