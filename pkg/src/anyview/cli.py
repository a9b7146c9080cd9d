"""Command-line entry point: ``anyview <command> [--config run.json] [flags]``.

Configuration is a JSON object with optional sections ``data``, ``model``,
``diffusion``, ``train``, ``sample``, ``eval``, ``warp`` and ``gcd`` plus the
top-level keys ``seed``, ``out`` and ``threads``. Unknown keys are rejected.
Command-line flags override the matching config keys, and every run writes
the resolved configuration to ``<out>/config.resolved.json``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import AnyViewError, ConfigError, DataError

log = logging.getLogger("anyview")

DEFAULTS = {
    "seed": 0,
    "out": "anyview-out",
    "threads": None,
    "data": {
        "path": None,
        "count": 4,
        "frames": 8,
        "height": 64,
        "width": 64,
        "cameras": 4,
        "format": "png",
        "objects_min": 2,
        "objects_max": 8,
    },
    "model": {"model_dim": 192, "depth": 6, "heads": 6, "rope_base": 10000.0, "mlp_ratio": 4},
    "diffusion": {"train_steps": 1000, "sampler_steps": 50, "samples": 1, "clip_denoised": True},
    "train": {
        "steps": 1000,
        "batch_size": 4,
        "lr": 1e-3,
        "warmup": 100,
        "min_lr_ratio": 0.05,
        "grad_clip": 1.0,
        "window": 8,
        "checkpoint_every": 500,
        "resume": None,
        "cameras": None,
    },
    "sample": {
        "checkpoint": None,
        "episodes": None,
        "input_cam": None,
        "target_cam": None,
        "dump_latents": False,
        "dump_pluecker": False,
    },
    "eval": {
        "checkpoint": None,
        "baseline": "model",
        "episodes": None,
        "input_cam": None,
        "target_cam": None,
        "heatmap_samples": 0,
        "window": 8,
    },
    "warp": {"episode": None, "input_cam": None, "target_cam": None, "frame": 0, "warmup": 0},
    "gcd": {"episode": None, "input_cam": None, "target_cam": None, "anchor": "middle"},
}

SCHEMAS = {
    "config": "anyview.config/1",
}


def versions() -> dict:
    from .evalharness import REPORT_SCHEMA, SUPPORTED_SCHEMAS
    from .training import FORMAT_VERSION

    return {
        "anyview": __version__,
        "config_schema": SCHEMAS["config"],
        "manifest_schemas": list(SUPPORTED_SCHEMAS),
        "report_schema": REPORT_SCHEMA,
        "checkpoint_format": FORMAT_VERSION,
        "latent_format": 1,
    }


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------


def merge_config(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = merge_config(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw.pop("schema", None)
    return merge_config(DEFAULTS, raw)


# flag dest -> config path
FLAG_KEYS = {
    "seed": ("seed",),
    "out": ("out",),
    "threads": ("threads",),
    "data": ("data", "path"),
    "count": ("data", "count"),
    "frames": ("data", "frames"),
    "cameras": ("data", "cameras"),
    "format": ("data", "format"),
    "steps": ("train", "steps"),
    "batch_size": ("train", "batch_size"),
    "resume": ("train", "resume"),
    "sampler_steps": ("diffusion", "sampler_steps"),
    "samples": ("diffusion", "samples"),
}

SECTION_FLAGS = {
    "sample": ("checkpoint", "input_cam", "target_cam", "dump_latents", "dump_pluecker", "episodes"),
    "eval": ("checkpoint", "baseline", "input_cam", "target_cam", "heatmap_samples", "episodes"),
    "warp": ("episode", "input_cam", "target_cam", "frame", "warmup"),
    "project-gcd": ("episode", "input_cam", "target_cam", "anchor"),
    "pluecker": ("episode", "input_cam", "target_cam"),
}
SECTION_OF = {"sample": "sample", "eval": "eval", "warp": "warp", "project-gcd": "gcd", "pluecker": "gcd"}


def apply_flags(config: dict, args: argparse.Namespace) -> dict:
    config = copy.deepcopy(config)
    for dest, keys in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        node = config
        for k in keys[:-1]:
            node = node[k]
        node[keys[-1]] = value
    section = SECTION_OF.get(args.command)
    for dest in SECTION_FLAGS.get(args.command, ()):
        value = getattr(args, dest, None)
        if value is not None and value is not False:
            config[section][dest] = value
    return config


def write_resolved(config: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    echo = {"schema": SCHEMAS["config"], **config}
    (out / "config.resolved.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def setup_threads(threads) -> None:
    import torch

    n = int(threads) if threads else (os.cpu_count() or 1)
    if n < 1:
        raise ConfigError("threads must be >= 1")
    torch.set_num_threads(n)
    torch.use_deterministic_algorithms(True)


def model_config(config: dict):
    from .model import ModelConfig

    try:
        return ModelConfig(seed=int(config["seed"]), **config["model"])
    except TypeError as exc:
        raise ConfigError(f"invalid model config: {exc}") from exc


def schedule_of(config: dict):
    from .diffusion import NoiseSchedule

    return NoiseSchedule(int(config["diffusion"]["train_steps"]))


def sampler_of(config: dict, samples: int | None = None):
    from .diffusion import SamplerConfig

    d = config["diffusion"]
    return SamplerConfig(
        steps=int(d["sampler_steps"]),
        seed=int(config["seed"]),
        samples=int(samples if samples is not None else d["samples"]),
        clip_denoised=bool(d["clip_denoised"]),
    )


def data_path(config: dict) -> Path:
    path = config["data"]["path"]
    if path is None:
        raise ConfigError("no dataset path given (data.path or --data)")
    return Path(path)


def select_episodes(manifests, wanted):
    if not wanted:
        return manifests
    wanted = [wanted] if isinstance(wanted, str) else list(wanted)
    chosen = [m for m in manifests if m.episode_id in wanted]
    missing = set(wanted) - {m.episode_id for m in chosen}
    if missing:
        raise DataError(f"episodes not in manifest: {sorted(missing)}")
    return chosen


def camera_pairs(manifest, input_cam, target_cam):
    cams = sorted(manifest.cameras)
    src = input_cam or cams[0]
    manifest.camera(src)
    if target_cam:
        manifest.camera(target_cam)
        return [(src, target_cam)]
    return [(src, c) for c in cams if c != src]


def _save_png(path: Path, rgb) -> None:
    from PIL import Image

    Image.fromarray(np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8)).save(path, format="PNG")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(config: dict, out: Path) -> int:
    from .scenegen import make_dataset

    d = config["data"]
    path = Path(d["path"]) if d["path"] else out / "data"
    manifest = make_dataset(
        int(d["count"]),
        int(config["seed"]),
        path,
        frames=int(d["frames"]),
        size=(int(d["height"]), int(d["width"])),
        cameras=int(d["cameras"]),
        fmt=d["format"],
        objects=(int(d["objects_min"]), int(d["objects_max"])),
    )
    log.info("wrote %s", manifest)
    return 0


def train_config_of(config: dict):
    from .training import TrainConfig

    t = {k: v for k, v in config["train"].items() if k not in ("resume", "cameras")}
    try:
        return TrainConfig(**t)
    except TypeError as exc:
        raise ConfigError(f"invalid train config: {exc}") from exc


def cmd_train(config: dict, out: Path) -> int:
    from .evalharness import load_manifests
    from .model import Denoiser
    from .training import Trainer, episode_pairs, resume_trainer, save_checkpoint

    tc = train_config_of(config)
    manifests = load_manifests(data_path(config))
    cams = config["train"]["cameras"]
    pairs = [p for m in manifests for p in episode_pairs(m, tc.window, cams)]
    mc = model_config(config)
    seed = int(config["seed"])
    resume = config["train"]["resume"]
    if resume:
        trainer = resume_trainer(resume, pairs, tc, seed, expect=mc, schedule=schedule_of(config))
        log.info("resumed from %s at step %d", resume, trainer.step_count)
    else:
        trainer = Trainer(Denoiser(mc), pairs, tc, seed, schedule_of(config))
    log_path = out / "loss.log"
    if not resume and log_path.exists():
        log_path.unlink()
    trainer.run(log_path=log_path, checkpoint_dir=out / "checkpoints")
    save_checkpoint(out / "final.ckpt", trainer)
    log.info("trained to step %d; checkpoint %s", trainer.step_count, out / "final.ckpt")
    return 0


def _load_checkpoint(config: dict, section: str):
    from .training import load_model

    ckpt = config[section]["checkpoint"]
    if not ckpt:
        raise ConfigError(f"{section}.checkpoint (--checkpoint) is required")
    model, _ = load_model(ckpt)
    return model


def cmd_sample(config: dict, out: Path) -> int:
    import torch

    from .diffusion import encode_pair, sample_latent, decode_latents, LATENT_SCALE
    from .evalharness import load_manifests
    from .geometry import pluecker_from_camera, prepare_pair
    from .tokenizer import LatentGrid, write_latent

    s = config["sample"]
    window = int(config["eval"]["window"])
    model = _load_checkpoint(config, "sample")
    sampler = sampler_of(config)
    manifests = select_episodes(load_manifests(data_path(config)), s["episodes"])
    for m in manifests:
        for cx, cy in camera_pairs(m, s["input_cam"], s["target_cam"]):
            rgb = m.load_rgb(cx)[:window]
            tx = m.trajectory(cx).slice(0, window)
            ty = m.trajectory(cy).slice(0, window)
            if len(rgb) < window:
                raise DataError(f"episode {m.episode_id} is shorter than the {window}-frame model window")
            pair = encode_pair(rgb, tx, ty, m.normalization)
            lat = sample_latent(
                model,
                torch.as_tensor(pair.v_x),
                torch.as_tensor(pair.p_x),
                torch.as_tensor(pair.p_y),
                sampler,
                schedule_of(config),
            ).numpy()
            H, W = m.resolution
            videos = decode_latents(lat, (window, H, W))
            base = out / "samples" / m.episode_id / f"{cx}_to_{cy}"
            for k, video in enumerate(videos):
                d = base / f"sample_{k}"
                d.mkdir(parents=True, exist_ok=True)
                for f, frame in enumerate(video):
                    _save_png(d / f"{f:04d}.png", frame)
                if s["dump_latents"]:
                    write_latent(base / f"sample_{k}.lat", LatentGrid(lat[k] / LATENT_SCALE, (window, H, W)))
            if s["dump_pluecker"]:
                px, py = prepare_pair(tx, ty, m.normalization)
                for name, traj in (("input", px), ("target", py)):
                    pm = pluecker_from_camera(traj)
                    np.save(base / f"pluecker_{name}.npy", pm.values.astype(np.float32), allow_pickle=False)
                    _save_png(base / f"pluecker_{name}_rays0.png", (pm.rays[0] + 1) / 2)
            log.info("sampled %s %s->%s (%d samples)", m.episode_id, cx, cy, len(videos))
    return 0


def make_generator(config: dict):
    from .evalharness import CopyInputBaseline, DepthWarpBaseline, DiffusionGenerator

    e = config["eval"]
    window = int(e["window"])
    if e["baseline"] == "copy":
        return CopyInputBaseline(window)
    if e["baseline"] == "warp":
        return DepthWarpBaseline(window)
    if e["baseline"] == "model":
        return DiffusionGenerator(_load_checkpoint(config, "eval"), sampler_of(config, 1), schedule_of(config), window)
    raise ConfigError(f"unknown baseline {e['baseline']!r} (expected model, copy or warp)")


def cmd_eval(config: dict, out: Path) -> int:
    from .evalharness import (
        DiffusionGenerator,
        WindowInput,
        evaluate_episode,
        load_manifests,
        uncertainty_heatmap,
        write_heatmap,
        write_reports,
    )

    e = config["eval"]
    generator = make_generator(config)
    errors = []
    manifests = load_manifests(data_path(config), errors)
    for err in errors:
        log.error("episode %s: %s", err["episode_id"], err["error"])
    if e["episodes"]:
        wanted = {e["episodes"]} if isinstance(e["episodes"], str) else set(e["episodes"])
        errors = [x for x in errors if x["episode_id"] in wanted]
        remaining = sorted(wanted - {x["episode_id"] for x in errors})
        manifests = select_episodes(manifests, remaining) if remaining else []
    reports, timing = [], {}
    for m in sorted(manifests, key=lambda m: m.episode_id):
        try:
            for cx, cy in camera_pairs(m, e["input_cam"], e["target_cam"]):
                r = evaluate_episode(m, generator, cx, cy)
                reports.append(r)
                timing[f"{m.episode_id}/{cx}/{cy}"] = r.seconds
                k = int(e["heatmap_samples"])
                if k >= 2 and isinstance(generator, DiffusionGenerator):
                    gen_k = DiffusionGenerator(generator.denoiser, sampler_of(config, k), generator.schedule, generator.window_size)
                    W = gen_k.window_size
                    window = WindowInput(
                        m.load_rgb(cx)[:W], None, m.trajectory(cx).slice(0, W), m.trajectory(cy).slice(0, W), m.normalization
                    )
                    hdir = out / "heatmaps"
                    hdir.mkdir(parents=True, exist_ok=True)
                    write_heatmap(uncertainty_heatmap(gen_k.samples(window)), hdir / f"{m.episode_id}_{cx}_{cy}")
        except DataError as exc:
            log.error("episode %s: %s", m.episode_id, exc)
            errors.append({"episode_id": m.episode_id, "error": str(exc)})
    write_reports(reports, out)
    if errors:
        errors.sort(key=lambda x: x["episode_id"])
        summary_path = out / "summary.json"
        summary = json.loads(summary_path.read_text(encoding="utf-8"))
        summary["errors"] = errors
        summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    # wall-clock kept apart so the primary reports stay byte-reproducible
    (out / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return DataError.exit_code if errors else 0


def _pick(config: dict, section: str):
    from .evalharness import load_manifests

    s = config[section]
    manifests = load_manifests(data_path(config))
    m = select_episodes(manifests, s["episode"])[0] if s["episode"] else manifests[0]
    cams = sorted(m.cameras)
    cx = s["input_cam"] or cams[0]
    cy = s.get("target_cam") or (cams[1] if len(cams) > 1 else cams[0])
    m.camera(cx)
    m.camera(cy)
    return m, cx, cy


def cmd_warp(config: dict, out: Path) -> int:
    from .evalharness import PinholeCamera, depth_warp, warmup_frames

    m, cx, cy = _pick(config, "warp")
    k = int(config["warp"]["frame"])
    if not 0 <= k < m.frame_count:
        raise ConfigError(f"frame {k} outside [0, {m.frame_count})")
    rgb, depth = m.load_rgb(cx)[k], m.load_depth(cx)[k]
    tx, ty = m.trajectory(cx), m.trajectory(cy)
    src = PinholeCamera(tx.poses[k], tx.intrinsics[k])
    dst = PinholeCamera(ty.poses[k], ty.intrinsics[k])
    warped, mask = depth_warp(rgb, depth, src, dst)
    d = out / "warp" / m.episode_id
    d.mkdir(parents=True, exist_ok=True)
    _save_png(d / f"{cx}_to_{cy}_{k:04d}.png", warped)
    _save_png(d / f"{cx}_to_{cy}_{k:04d}_mask.png", mask.astype(np.float64))
    n = int(config["warp"]["warmup"])
    if n > 0:
        for i, frame in enumerate(warmup_frames(PinholeCamera(tx.poses[0], tx.intrinsics[0]), ty.poses[0], n, m.load_rgb(cx)[0], m.load_depth(cx)[0])):
            _save_png(d / f"{cx}_to_{cy}_warmup_{i:04d}.png", frame)
    return 0


def cmd_project_gcd(config: dict, out: Path) -> int:
    from .geometry import canonicalize_trajectory, project_to_gcd

    m, cx, cy = _pick(config, "gcd")
    tx, ty = canonicalize_trajectory(m.trajectory(cx), m.trajectory(cy))
    ctrl = project_to_gcd(tx, ty, config["gcd"]["anchor"])
    record = {"episode_id": m.episode_id, "input_cam": cx, "target_cam": cy, "anchor": config["gcd"]["anchor"], **ctrl._asdict()}
    text = json.dumps(record, sort_keys=True)
    (out / "gcd.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_pluecker(config: dict, out: Path) -> int:
    from .geometry import pluecker_from_camera, prepare_pair

    m, cx, cy = _pick(config, "gcd")
    px, py = prepare_pair(m.trajectory(cx), m.trajectory(cy), m.normalization)
    d = out / "pluecker" / m.episode_id
    d.mkdir(parents=True, exist_ok=True)
    for name, traj in ((cx, px), (cy, py)):
        pm = pluecker_from_camera(traj)
        np.save(d / f"{name}.npy", pm.values.astype(np.float32), allow_pickle=False)
        _save_png(d / f"{name}_rays0.png", (pm.rays[0] + 1) / 2)
        _save_png(d / f"{name}_moments0.png", (pm.moments[0] + 1) / 2)
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "warp": cmd_warp,
    "project-gcd": cmd_project_gcd,
    "pluecker": cmd_pluecker,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads (1 = bit-reproducible sequential path)")
    common.add_argument("--data", help="dataset directory or manifest.jsonl")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="anyview", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="store_true", help="print version and schema versions as JSON")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-data", parents=[common], help="render a synthetic multi-view dataset")
    p.add_argument("--count", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--cameras", type=int)
    p.add_argument("--format", choices=("png", "f32"))

    p = sub.add_parser("train", parents=[common], help="train the denoiser")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")

    p = sub.add_parser("sample", parents=[common], help="generate target-view videos")
    p.add_argument("--checkpoint")
    p.add_argument("--input-cam")
    p.add_argument("--target-cam")
    p.add_argument("--episodes", nargs="+")
    p.add_argument("--samples", type=int)
    p.add_argument("--sampler-steps", type=int)
    p.add_argument("--dump-latents", action="store_true")
    p.add_argument("--dump-pluecker", action="store_true")

    p = sub.add_parser("eval", parents=[common], help="score a model or baseline")
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", choices=("model", "copy", "warp"))
    p.add_argument("--input-cam")
    p.add_argument("--target-cam")
    p.add_argument("--episodes", nargs="+")
    p.add_argument("--heatmap-samples", type=int)
    p.add_argument("--sampler-steps", type=int)

    for name, helptext in (
        ("warp", "depth-warp one frame (and optional warm-up frames)"),
        ("project-gcd", "project a camera pair onto relative azimuth/elevation/radius"),
        ("pluecker", "dump canonical Plücker maps of a camera pair"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--episode")
        p.add_argument("--input-cam")
        p.add_argument("--target-cam")
        if name == "warp":
            p.add_argument("--frame", type=int)
            p.add_argument("--warmup", type=int)
        if name == "project-gcd":
            p.add_argument("--anchor", choices=("middle", "last"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.version:
        print(json.dumps(versions(), sort_keys=True))
        return 0
    if not args.command:
        parser.print_help()
        return ConfigError.exit_code
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = apply_flags(load_config(args.config), args)
        setup_threads(config["threads"])
        out = Path(config["out"])
        write_resolved(config, out)
        return COMMANDS[args.command](config, out)
    except AnyViewError as exc:
        log.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
