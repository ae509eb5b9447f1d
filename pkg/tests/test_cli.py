import json

import numpy as np
import pytest

from biomotion import motion as mio
from biomotion.cli import main
from biomotion.params import ParamBundle
from conftest import static_biped


def _run(capsys, *argv):
    rc = main([str(a) for a in argv])
    out = capsys.readouterr()
    return rc, out.out, out.err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    assert main(["simulate", "--out", str(d), "--count", "4", "--seed", "7"]) == 0
    return d


@pytest.fixture(scope="module")
def model(corpus, tmp_path_factory):
    d = tmp_path_factory.mktemp("model")
    assert main(["train", "--corpus", str(corpus), "--out", str(d), "--steps", "6", "--batch-size", "4",
                 "--pretrain-steps", "5", "--seed", "1"]) == 0
    return d


@pytest.fixture(scope="module")
def zero_model(model, tmp_path_factory):
    d = tmp_path_factory.mktemp("zero")
    doc = json.loads((model / "ema.params.json").read_text())
    doc["values"] = [0.0] * len(doc["values"])
    (d / "ema.params.json").write_text(json.dumps(doc))
    return d


def _clip(corpus, i=0):
    return corpus / f"clip{i:03d}.motion.json", corpus / f"clip{i:03d}.skeleton.json"


def test_simulate_is_reproducible(tmp_path, capsys):
    for name in ("a", "b"):
        rc, out, _ = _run(capsys, "simulate", "--out", tmp_path / name, "--count", 2, "--seed", 7)
        assert rc == 0 and "wrote 2 clips" in out
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_metrics_static_file(tmp_path, capsys):
    seq, skel = static_biped()
    mio.save_motion(seq, tmp_path / "still.json")
    mio.save_skeleton(skel, tmp_path / "skel.json")
    rc, out, _ = _run(capsys, "metrics", tmp_path / "still.json", "--skeleton", tmp_path / "skel.json",
                      "--out", tmp_path / "rep")
    assert rc == 0 and "still.json" in out
    rep = json.loads((tmp_path / "rep" / "still.report.json").read_text())
    vals = rep["report"]
    for k in ("speed", "smoothness", "float", "foot_skating", "penetrate", "clip"):
        assert vals[k] == 0
    assert json.loads((tmp_path / "rep" / "summary.json").read_text())["failures"] == 0


def test_metrics_corpus_matches_manifest(corpus, tmp_path, capsys):
    man = json.loads((corpus / "manifest.json").read_text())
    files = [corpus / c["motion_path"] for c in man["clips"]]
    rc, out, _ = _run(capsys, "metrics", *files, "--skeleton", _clip(corpus)[1], "--out", tmp_path,
                      "--reference", "humanml3d-gt", "--jobs", 2)
    assert rc == 0 and "vs ref" in out
    summary = json.loads((tmp_path / "summary.json").read_text())
    for entry, clip in zip(summary["files"], man["clips"]):
        for k, v in entry["values"].items():
            assert abs(v - clip["metrics"][k]) <= 1e-12 * max(1.0, abs(v))
        assert "deviation" in entry


def test_metrics_bad_file_keeps_going(corpus, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    rc, out, err = _run(capsys, "metrics", bad, _clip(corpus)[0], "--skeleton", _clip(corpus)[1],
                        "--out", tmp_path / "rep")
    assert rc == 1 and "bad.json" in err and "clip000" in out
    assert (tmp_path / "rep" / "clip000.motion.report.json").exists()


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"refine": {"t_inv": 100, "tinv": 3}}))
    rc, _, err = _run(capsys, "simulate", "--out", tmp_path / "x", "--config", cfg)
    assert rc == 2 and "tinv" in err
    cfg.write_text(json.dumps({"trian": {}}))
    assert _run(capsys, "simulate", "--out", tmp_path / "x", "--config", cfg)[0] == 2


def test_config_seed_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"seed": 7, "simulate": {"count": 1, "duration": 2.0}}))
    _run(capsys, "simulate", "--out", tmp_path / "a", "--config", cfg)
    _run(capsys, "simulate", "--out", tmp_path / "b", "--count", 1, "--duration", 2.0, "--seed", 7)
    assert (tmp_path / "a" / "clip000.motion.json").read_bytes() == (tmp_path / "b" / "clip000.motion.json").read_bytes()


def test_train_outputs(model):
    for f in ("ema.params.json", "model.params.json", "optimizer.params.json", "train_log.jsonl"):
        assert (model / f).exists()
    lines = (model / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 6 and json.loads(lines[-1])["step"] == 5
    doc = json.loads((model / "ema.params.json").read_text())
    assert doc["provenance"]["run_config"]["train"]["steps"] == 6
    ParamBundle.from_dict(doc)


def test_refine_zero_model_is_identity(corpus, zero_model, tmp_path, capsys):
    motion, skel = _clip(corpus)
    rc, _, _ = _run(capsys, "refine", motion, "--model", zero_model, "--out", tmp_path / "r.json",
                    "--skeleton", skel)
    assert rc == 0
    a, b = mio.load_motion(motion), mio.load_motion(tmp_path / "r.json")
    assert np.allclose(a.positions, b.positions, atol=1e-8)
    rep = json.loads((tmp_path / "r.report.json").read_text())
    assert set(rep) >= {"before", "after", "diff", "run_config"}


def test_edit_unit_factor_equals_refine(corpus, model, tmp_path, capsys):
    motion = _clip(corpus)[0]
    _run(capsys, "refine", motion, "--model", model, "--out", tmp_path / "r.json")
    _run(capsys, "edit", motion, "--model", model, "--out", tmp_path / "e.json", "--accel-factor", 1.0)
    a, b = mio.load_motion(tmp_path / "r.json"), mio.load_motion(tmp_path / "e.json")
    assert np.array_equal(a.positions, b.positions)
    rc, _, err = _run(capsys, "edit", motion, "--model", model, "--out", tmp_path / "x.json",
                      "--joint-factors", '{"tail": 2.0}')
    assert rc == 2 and "tail" in err
    assert _run(capsys, "edit", motion, "--model", model, "--out", tmp_path / "x.json", "--accel-factor", 0)[0] == 2


def test_invert_writes_latent(corpus, model, tmp_path, capsys):
    rc, _, _ = _run(capsys, "invert", _clip(corpus)[0], "--model", model, "--out", tmp_path / "z.json",
                    "--t-inv", 100)
    doc = json.loads((tmp_path / "z.json").read_text())
    assert rc == 0 and doc["t"] == 100 and np.asarray(doc["latent"]).shape[-1] == 18


def test_gradcheck_fresh_model(tmp_path, capsys):
    rc, out, _ = _run(capsys, "gradcheck", "--probes", 10, "--out", tmp_path / "g.json")
    doc = json.loads((tmp_path / "g.json").read_text())
    assert rc == 0 and doc["max_relative_error"] < 1e-4 and "max relative error" in out


def test_missing_input_exits_nonzero(tmp_path, capsys):
    rc, _, err = _run(capsys, "refine", tmp_path / "nope.json", "--model", tmp_path, "--out", tmp_path / "o.json")
    assert rc == 2 and "error" in err
