import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from anyview import cli
from anyview import evalharness as E
from anyview import geometry as g
from anyview import training as T

TINY_MODEL = {"model_dim": 24, "depth": 2, "heads": 2}


def write_config(path, **sections):
    path.write_text(json.dumps(sections))
    return str(path)


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    out = root / "gen"
    assert cli.main(["gen-data", "--out", str(out), "--count", "2", "--cameras", "2", "--seed", "5", "--threads", "1"]) == 0
    return out / "data"


@pytest.fixture(scope="module")
def checkpoint(data, tmp_path_factory):
    root = tmp_path_factory.mktemp("ckpt")
    cfg = write_config(root / "run.json", model=TINY_MODEL, train={"steps": 6, "warmup": 2, "checkpoint_every": 3})
    out = root / "train"
    assert cli.main(["train", "--config", cfg, "--data", str(data), "--out", str(out), "--threads", "1"]) == 0
    return out, cfg


def test_version_json(capsys):
    assert cli.main(["--version"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["anyview"] and info["manifest_schemas"] == ["anyview.episode/1"]


def test_console_script_entry():
    res = subprocess.run([sys.executable, "-m", "anyview.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "report_schema" in res.stdout


def test_unknown_config_key_rejected(tmp_path):
    cfg = write_config(tmp_path / "c.json", data={"count": 1, "colour": "red"})
    assert cli.main(["gen-data", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert cli.main(["gen-data", "--config", str(tmp_path / "missing.json")]) == 2


def test_missing_dataset_is_config_error(tmp_path):
    assert cli.main(["train", "--out", str(tmp_path)]) == 2


def test_bad_data_path_is_data_error(tmp_path):
    assert cli.main(["eval", "--baseline", "copy", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path)]) == 3


def test_gen_data_outputs(data):
    manifests = E.load_manifests(data)
    assert len(manifests) == 2
    resolved = json.loads((data.parent / "config.resolved.json").read_text())
    assert resolved["seed"] == 5 and resolved["data"]["count"] == 2


def test_train_outputs(checkpoint):
    out, _ = checkpoint
    lines = (out / "loss.log").read_text().splitlines()
    assert len(lines) == 6
    assert sorted(p.name for p in (out / "checkpoints").iterdir()) == ["step0000003.ckpt", "step0000006.ckpt"]
    assert (out / "final.ckpt").read_bytes() == (out / "checkpoints" / "step0000006.ckpt").read_bytes()


def test_train_resume_matches_full_run(data, checkpoint, tmp_path):
    out, cfg = checkpoint
    args = ["train", "--config", cfg, "--data", str(data), "--threads", "1", "--out", str(tmp_path)]
    assert cli.main(args + ["--resume", str(out / "checkpoints" / "step0000003.ckpt")]) == 0
    assert (tmp_path / "final.ckpt").read_bytes() == (out / "final.ckpt").read_bytes()


def test_train_refuses_mismatched_checkpoint(data, checkpoint, tmp_path):
    out, _ = checkpoint
    cfg = write_config(tmp_path / "c.json", model={"model_dim": 48, "depth": 2, "heads": 4})
    args = ["train", "--config", cfg, "--data", str(data), "--out", str(tmp_path), "--resume", str(out / "final.ckpt")]
    assert cli.main(args) == 2


def test_sample_outputs(data, checkpoint, tmp_path):
    out, cfg = checkpoint
    args = ["sample", "--config", cfg, "--data", str(data), "--checkpoint", str(out / "final.ckpt"), "--threads", "1"]
    args += ["--episodes", "ep00000", "--input-cam", "cam00", "--target-cam", "cam01", "--samples", "4", "--sampler-steps", "4"]
    assert cli.main(args + ["--out", str(tmp_path), "--dump-pluecker", "--dump-latents"]) == 0
    base = tmp_path / "samples" / "ep00000" / "cam00_to_cam01"
    videos = [b"".join(p.read_bytes() for p in sorted((base / f"sample_{k}").glob("*.png"))) for k in range(4)]
    assert all(len(list((base / f"sample_{k}").glob("*.png"))) == 8 for k in range(4))
    assert len(set(videos)) == 4
    assert (base / "sample_0.lat").exists()
    # debug Plücker dump equals the geometry module's canonical maps
    m = E.load_manifests(data)[0]
    px, py = g.prepare_pair(m.trajectory("cam00").slice(0, 8), m.trajectory("cam01").slice(0, 8), m.normalization)
    dumped = np.load(base / "pluecker_target.npy")
    assert dumped.shape == (8, 64, 64, 6)
    assert np.allclose(dumped, g.pluecker_from_camera(py).values, atol=1e-6)


def test_sample_missing_camera_is_data_error(data, checkpoint, tmp_path):
    out, cfg = checkpoint
    args = ["sample", "--config", cfg, "--data", str(data), "--checkpoint", str(out / "final.ckpt"), "--out", str(tmp_path)]
    assert cli.main(args + ["--input-cam", "cam09"]) == 3


def test_eval_copy_same_camera(data, tmp_path):
    args = ["eval", "--baseline", "copy", "--data", str(data), "--out", str(tmp_path), "--input-cam", "cam01", "--target-cam", "cam01"]
    assert cli.main(args) == 0
    rows = list(csv.DictReader((tmp_path / "metrics.csv").open()))
    assert len(rows) == 2 * 8
    assert all(float(r["psnr_db"]) == 99.0 for r in rows)


def test_eval_summary_matches_csv(data, tmp_path):
    assert cli.main(["eval", "--baseline", "warp", "--data", str(data), "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "metrics.csv").open()))
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["mean_psnr_db"] == pytest.approx(np.mean([float(r["psnr_db"]) for r in rows]), abs=1e-9)
    for ep in summary["episodes"]:
        mine = [float(r["ssim"]) for r in rows if r["episode_id"] == ep["episode_id"]]
        assert ep["mean_ssim"] == pytest.approx(np.mean(mine), abs=1e-9)


def test_eval_model_with_heatmaps(data, checkpoint, tmp_path):
    out, cfg = checkpoint
    args = ["eval", "--config", cfg, "--data", str(data), "--checkpoint", str(out / "final.ckpt"), "--out", str(tmp_path)]
    args += ["--episodes", "ep00001", "--target-cam", "cam01", "--heatmap-samples", "2", "--sampler-steps", "3", "--threads", "1"]
    assert cli.main(args) == 0
    assert (tmp_path / "heatmaps" / "ep00001_cam00_cam01.png").exists()
    raw = np.frombuffer((tmp_path / "heatmaps" / "ep00001_cam00_cam01.f32").read_bytes(), dtype="<f4")
    assert raw.shape == (64 * 64,) and np.all(raw >= 0)


def test_eval_continues_past_bad_episode(data, tmp_path):
    # ep00000 gets a bad frame path; ep00001 must still be reported
    lines = (data / "manifest.jsonl").read_text().splitlines()
    rec = json.loads(lines[0])
    rec["cameras"]["cam00"]["frames"][3] = "ep00000/cam00/missing.png"
    bad = tmp_path / "data"
    bad.mkdir()
    (bad / "manifest.jsonl").write_text(json.dumps(rec) + "\n" + lines[1] + "\n")
    for ep in ("ep00000", "ep00001"):
        (bad / ep).symlink_to(data / ep)
    assert cli.main(["eval", "--baseline", "copy", "--data", str(bad), "--out", str(tmp_path / "o")]) == 3
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert [e["episode_id"] for e in summary["episodes"]] == ["ep00001"]
    assert summary["errors"][0]["episode_id"] == "ep00000"


def test_warp_gcd_pluecker_commands(data, tmp_path, capsys):
    assert cli.main(["warp", "--data", str(data), "--out", str(tmp_path), "--frame", "2", "--warmup", "3"]) == 0
    wdir = tmp_path / "warp" / "ep00000"
    assert (wdir / "cam00_to_cam01_0002.png").exists()
    assert len(list(wdir.glob("*warmup*"))) == 2 + 3
    assert cli.main(["warp", "--data", str(data), "--out", str(tmp_path), "--frame", "99"]) == 2

    assert cli.main(["project-gcd", "--data", str(data), "--out", str(tmp_path)]) == 0
    rec = json.loads((tmp_path / "gcd.json").read_text())
    assert {"delta_azimuth", "delta_elevation", "delta_radius"} <= set(rec)
    m = E.load_manifests(data)[0]
    tx, ty = g.canonicalize_trajectory(m.trajectory("cam00"), m.trajectory("cam01"))
    assert rec["delta_azimuth"] == pytest.approx(g.project_to_gcd(tx, ty).delta_azimuth, abs=1e-12)

    assert cli.main(["pluecker", "--data", str(data), "--out", str(tmp_path), "--episode", "ep00001"]) == 0
    arr = np.load(tmp_path / "pluecker" / "ep00001" / "cam01.npy")
    assert arr.shape == (8, 64, 64, 6)


def test_checkpoint_loads_back(checkpoint):
    out, _ = checkpoint
    model, header = T.load_model(out / "final.ckpt")
    assert header["step"] == 6 and model.config.model_dim == 24
