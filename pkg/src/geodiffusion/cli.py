"""Command-line interface.

Every command resolves its options (defaults < --config file < explicit
flags), writes the resolved set to <out>/resolved_config.json, and is fully
reproducible from that file alone: rerunning with only --config produces
byte-identical outputs. Exit codes: 0 success, 1 validation/usage error,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import random
import sys
from pathlib import Path

import numpy as np
import torch

from .alignment import build_manifest, read_manifest, read_stubs, write_manifest
from .attributes import ATTRIBUTE_ORDER, MetadataRecord
from .captions import build_vocabulary
from .checkpoint import load_checkpoint, save_checkpoint, save_temporal_checkpoint
from .grid import read_grid
from .metrics import (
    fidelity_probe,
    moment_distance_detailed,
    psnr,
    recoverability_probe,
    ssim,
)
from .model import GenerationModel, ModelConfig
from .temporal import (
    ConditioningSequence,
    TemporalControl,
    TemporalDataset,
    TemporalModel,
    TemporalTrainConfig,
    TemporalTrainer,
)
from .training import ImageDataset, TrainConfig, Trainer, build_model
from .world import WorldConfig, load_png, make_world, save_png
from . import plotting


class ValidationError(ValueError):
    pass


# ---------------------------------------------------------------- resolution


def _resolve(ns: argparse.Namespace, command: str, defaults: dict) -> dict:
    """defaults < config file < explicit flags; unknown config keys rejected."""
    cfg = dict(defaults)
    config_path = getattr(ns, "config", None)
    if config_path:
        p = Path(config_path)
        if not p.is_file():
            raise ValidationError(f"config file not found: {p}")
        loaded = json.loads(p.read_text(encoding="utf-8"))
        file_cmd = loaded.pop("command", None)
        if file_cmd != command:
            raise ValidationError(
                f"config file was written by {file_cmd!r}, not {command!r}"
            )
        for k, v in loaded.items():
            if k not in defaults:
                raise ValidationError(f"unknown config key {k!r}")
            cfg[k] = v
    for k in defaults:
        v = getattr(ns, k, None)
        if v is not None:
            cfg[k] = v
    cfg["command"] = command
    return cfg


def _require_out(cfg: dict) -> Path:
    if not cfg.get("out"):
        raise ValidationError("--out is required")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_resolved(cfg: dict, out: Path) -> None:
    (out / "resolved_config.json").write_text(
        json.dumps(cfg, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _parse_meta_flags(pairs: list[str] | None) -> dict[str, float]:
    meta: dict[str, float] = {}
    for raw in pairs or []:
        if "=" not in raw:
            raise ValidationError(f"--meta expects key=value, got {raw!r}")
        key, value = raw.split("=", 1)
        key = key.strip()
        if key not in ATTRIBUTE_ORDER:
            raise ValidationError(
                f"unknown metadata attribute {key!r}; choose from {', '.join(ATTRIBUTE_ORDER)}"
            )
        try:
            meta[key] = float(value)
        except ValueError:
            raise ValidationError(f"--meta {key}: {value!r} is not a number") from None
    return meta


def _record_from_meta(meta: dict[str, float]) -> MetadataRecord:
    """Attributes omitted from --meta are absent (mask false), not zero."""
    present = {name: name in meta for name in ATTRIBUTE_ORDER}
    return MetadataRecord(values=dict(meta), present=present)


def _write_csv(path: Path, header: list[str], rows: list[tuple]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------- commands


def cmd_make_world(ns: argparse.Namespace) -> int:
    cfg = _resolve(
        ns,
        "make-world",
        {
            "seed": 0,
            "out": None,
            "n_images": 4000,
            "image_size": 32,
            "frames_per_location": 20,
        },
    )
    out = _require_out(cfg)
    wc = WorldConfig(
        seed=int(cfg["seed"]),
        n_images=int(cfg["n_images"]),
        image_size=int(cfg["image_size"]),
        frames_per_location=int(cfg["frames_per_location"]),
    )
    stubs, grid = make_world(wc, out)
    _write_resolved(cfg, out)
    print(f"wrote {len(stubs)} images, grid {grid.nlat}x{grid.nlon}x{grid.hour_count}h -> {out}")
    return 0


def cmd_build_dataset(ns: argparse.Namespace) -> int:
    cfg = _resolve(ns, "build-dataset", {"world": None, "out": None})
    if not cfg.get("world"):
        raise ValidationError("--world is required")
    world = Path(cfg["world"])
    if cfg.get("out") is None:
        cfg["out"] = str(world)
    out = _require_out(cfg)
    stubs_path = world / "stubs.jsonl"
    if not stubs_path.is_file():
        raise ValidationError(f"no stubs.jsonl under {world}")
    stubs = read_stubs(stubs_path)
    grid = read_grid(world / "grid")
    manifest = build_manifest(stubs, grid)
    if out != world:
        # image paths stay correct relative to the manifest's directory
        import os

        for e in manifest.entries:
            e.image = os.path.relpath(world / e.image, out)
    write_manifest(out / "manifest.jsonl", manifest)
    _write_resolved(cfg, out)
    skip_note = (
        "; skipped " + ", ".join(f"{k}: {v}" for k, v in sorted(manifest.skipped.items()))
        if manifest.skipped
        else ""
    )
    print(f"aligned {len(manifest.entries)} records -> {out / 'manifest.jsonl'}{skip_note}")
    return 0


def cmd_train(ns: argparse.Namespace) -> int:
    cfg = _resolve(
        ns,
        "train",
        {
            "manifest": None,
            "out": None,
            "seed": 0,
            "steps": 20000,
            "batch_size": 32,
            "lr": 1e-4,
            "strategy": "concat",
        },
    )
    if not cfg.get("manifest"):
        raise ValidationError("--manifest is required")
    out = _require_out(cfg)
    manifest_path = Path(cfg["manifest"])
    if not manifest_path.is_file():
        raise ValidationError(f"manifest not found: {manifest_path}")
    if cfg["strategy"] not in ("concat", "additive"):
        raise ValidationError(f"unknown strategy {cfg['strategy']!r}")

    manifest = read_manifest(manifest_path)
    dataset = ImageDataset.from_objects(manifest, manifest_path.parent)
    captions = [e.caption for e in manifest.entries]
    image_size = dataset.items[0].image.shape[-1]
    model_config = ModelConfig(
        strategy=cfg["strategy"],
        image_size=int(image_size),
        vocab=build_vocabulary(captions),
        ranges=dataset.ranges,
    )
    model = build_model(model_config, seed=int(cfg["seed"]))
    tc = TrainConfig(
        steps=int(cfg["steps"]),
        batch_size=int(cfg["batch_size"]),
        lr=float(cfg["lr"]),
        seed=int(cfg["seed"]),
    )
    trainer = Trainer(model, dataset, tc)
    history = trainer.run(
        progress=lambda step, loss: print(f"step {step:>6d}  loss {loss:.4f}")
    )
    save_checkpoint(out / "checkpoint.gdl", model)
    _write_csv(
        out / "train_log.csv",
        ["step", "kind", "loss"],
        [(s, "train", l) for s, l in zip(history.steps, history.losses)]
        + [(s, "eval", l) for s, l in zip(history.eval_steps, history.eval_losses)],
    )
    plotting.save_figure(
        plotting.loss_curve_figure(
            history.steps, history.losses, history.eval_steps, history.eval_losses
        ),
        out / "loss_curve.png",
    )
    _write_resolved(cfg, out)
    print(
        f"trained {cfg['steps']} steps ({cfg['strategy']}); held-out loss "
        f"{history.eval_losses[0]:.4f} -> {history.eval_losses[-1]:.4f}; "
        f"checkpoint -> {out / 'checkpoint.gdl'}"
    )
    return 0


def cmd_sample(ns: argparse.Namespace) -> int:
    cfg = _resolve(
        ns,
        "sample",
        {
            "checkpoint": None,
            "out": None,
            "seed": 0,
            "steps": 100,
            "guidance": 1.0,
            "count": 1,
            "meta": None,
            "prompt": "a satellite image",
        },
    )
    if not cfg.get("checkpoint"):
        raise ValidationError("--checkpoint is required")
    out = _require_out(cfg)
    ckpt = Path(cfg["checkpoint"])
    if not ckpt.is_file():
        raise ValidationError(f"checkpoint not found: {ckpt}")
    model = load_checkpoint(ckpt)
    if not isinstance(model, GenerationModel):
        raise ValidationError("this checkpoint carries a control section; use sample-temporal")

    meta = (
        cfg["meta"]
        if isinstance(cfg.get("meta"), dict)
        else _parse_meta_flags(cfg.get("meta"))
    )
    meta = {k: float(v) for k, v in meta.items()}
    cfg["meta"] = meta
    record = _record_from_meta(meta)
    n = int(cfg["count"])
    if n < 1:
        raise ValidationError(f"--count must be >= 1, got {n}")
    packet = model.metadata_packet([record] * n, [cfg["prompt"]] * n)
    gen = torch.Generator().manual_seed(int(cfg["seed"]))
    images = model.sample(
        packet,
        steps=int(cfg["steps"]),
        guidance=float(cfg["guidance"]),
        generator=gen,
    )
    for i, img in enumerate(images):
        save_png(out / f"sample_{i:03d}.png", img.numpy())
        sidecar = {
            "caption": cfg["prompt"],
            "meta": meta,
            "present": {k: k in meta for k in ATTRIBUTE_ORDER},
            "strategy": model.config.strategy,
            "seed": int(cfg["seed"]),
            "steps": int(cfg["steps"]),
            "guidance": float(cfg["guidance"]),
            "index": i,
        }
        (out / f"sample_{i:03d}.json").write_text(
            json.dumps(sidecar, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    _write_resolved(cfg, out)
    print(f"wrote {len(images)} samples -> {out}")
    return 0


def cmd_train_temporal(ns: argparse.Namespace) -> int:
    cfg = _resolve(
        ns,
        "train-temporal",
        {
            "manifest": None,
            "base_checkpoint": None,
            "out": None,
            "seed": 0,
            "steps": 4000,
            "batch_size": 16,
            "lr": 4e-4,
        },
    )
    if not cfg.get("manifest") or not cfg.get("base_checkpoint"):
        raise ValidationError("--manifest and --base-checkpoint are required")
    out = _require_out(cfg)
    base = load_checkpoint(cfg["base_checkpoint"])
    if not isinstance(base, GenerationModel):
        raise ValidationError("--base-checkpoint must be a single-frame checkpoint")
    manifest_path = Path(cfg["manifest"])
    manifest = read_manifest(manifest_path)
    dataset = ImageDataset.from_objects(manifest, manifest_path.parent)
    data = TemporalDataset.build(dataset)

    torch.manual_seed(int(cfg["seed"]) + 7)
    control = TemporalControl(
        embed_dim=base.config.embed_dim,
        base=base.config.unet_base,
        mid=base.config.unet_mid,
        channels=base.config.channels,
    )
    temporal = TemporalModel(base=base, control=control)
    tc = TemporalTrainConfig(
        steps=int(cfg["steps"]),
        batch_size=int(cfg["batch_size"]),
        lr=float(cfg["lr"]),
        seed=int(cfg["seed"]),
    )
    trainer = TemporalTrainer(temporal, data, tc)
    history = trainer.run(
        progress=lambda step, loss: print(f"step {step:>6d}  loss {loss:.4f}")
    )
    save_temporal_checkpoint(out / "checkpoint.gdl", temporal)
    _write_csv(
        out / "train_log.csv",
        ["step", "kind", "loss"],
        [(s, "train", l) for s, l in history],
    )
    plotting.save_figure(
        plotting.loss_curve_figure([s for s, _ in history], [l for _, l in history]),
        out / "loss_curve.png",
    )
    _write_resolved(cfg, out)
    print(
        f"trained control branch {cfg['steps']} steps over "
        f"{len(data.train_items)} sequence items -> {out / 'checkpoint.gdl'}"
    )
    return 0


def _parse_frame_meta(raw: str) -> dict[str, float]:
    pairs = [p for p in raw.split(",") if p.strip()]
    return _parse_meta_flags(pairs)


def cmd_sample_temporal(ns: argparse.Namespace) -> int:
    cfg = _resolve(
        ns,
        "sample-temporal",
        {
            "checkpoint": None,
            "out": None,
            "seed": 0,
            "steps": 100,
            "guidance": 1.0,
            "meta": None,
            "prompt": "a satellite image",
            "frames": None,
            "frame_meta": None,
        },
    )
    if not cfg.get("checkpoint"):
        raise ValidationError("--checkpoint is required")
    if not cfg.get("frames"):
        raise ValidationError("--frames is required (1 to 3 image paths)")
    out = _require_out(cfg)
    model = load_checkpoint(cfg["checkpoint"])
    if not isinstance(model, TemporalModel):
        raise ValidationError("checkpoint has no control section; use sample")

    frames = list(cfg["frames"])
    if not 1 <= len(frames) <= 3:
        raise ValidationError(f"--frames takes 1 to 3 paths, got {len(frames)}")
    frame_meta_raw = cfg.get("frame_meta") or []
    if isinstance(frame_meta_raw, str):
        frame_meta_raw = [frame_meta_raw]
    if frame_meta_raw and len(frame_meta_raw) != len(frames):
        raise ValidationError("--frame-meta must be given once per frame")
    images, records = [], []
    for i, path in enumerate(frames):
        p = Path(path)
        if not p.is_file():
            raise ValidationError(f"frame image not found: {p}")
        images.append(torch.from_numpy(load_png(p)))
        meta = (
            _parse_frame_meta(frame_meta_raw[i])
            if frame_meta_raw
            else {}
        )
        records.append(_record_from_meta(meta))
    cfg["frame_meta"] = frame_meta_raw

    meta = (
        cfg["meta"]
        if isinstance(cfg.get("meta"), dict)
        else _parse_meta_flags(cfg.get("meta"))
    )
    meta = {k: float(v) for k, v in meta.items()}
    cfg["meta"] = meta
    sequence = ConditioningSequence.padded(
        images, records, random.Random(int(cfg["seed"]) + 0x5EED)
    )
    packet = model.base.metadata_packet([_record_from_meta(meta)], [cfg["prompt"]])
    gen = torch.Generator().manual_seed(int(cfg["seed"]))
    sample = model.sample(
        packet,
        sequence,
        steps=int(cfg["steps"]),
        guidance=float(cfg["guidance"]),
        generator=gen,
    )
    save_png(out / "sample_000.png", sample[0].numpy())
    sidecar = {
        "caption": cfg["prompt"],
        "meta": meta,
        "present": {k: k in meta for k in ATTRIBUTE_ORDER},
        "frames": [str(f) for f in frames],
        "frame_meta": frame_meta_raw,
        "seed": int(cfg["seed"]),
        "steps": int(cfg["steps"]),
        "guidance": float(cfg["guidance"]),
    }
    (out / "sample_000.json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    _write_resolved(cfg, out)
    print(f"wrote conditioned sample -> {out / 'sample_000.png'}")
    return 0


def cmd_evaluate(ns: argparse.Namespace) -> int:
    cfg = _resolve(
        ns, "evaluate", {"generated": None, "reference": None, "out": None}
    )
    if not cfg.get("generated") or not cfg.get("reference"):
        raise ValidationError("--generated and --reference are required")
    out = _require_out(cfg)
    gen_dir, ref_dir = Path(cfg["generated"]), Path(cfg["reference"])
    for d in (gen_dir, ref_dir):
        if not d.is_dir():
            raise ValidationError(f"not a directory: {d}")
    names = sorted(
        {p.name for p in gen_dir.glob("*.png")} & {p.name for p in ref_dir.glob("*.png")}
    )
    if len(names) < 2:
        raise ValidationError(
            "need at least 2 matching .png filenames between the directories"
        )
    gen_set, ref_set, rows = [], [], []
    for name in names:
        g = (load_png(gen_dir / name) + 1.0) / 2.0
        r = (load_png(ref_dir / name) + 1.0) / 2.0
        gen_set.append(g)
        ref_set.append(r)
        rows.append((name, ssim(g, r), psnr(g, r)))
    distance, ridge_used = moment_distance_detailed(
        np.stack(gen_set), np.stack(ref_set)
    )
    ssims = [r[1] for r in rows]
    psnrs = [r[2] for r in rows]
    summary = {
        "pairs": len(rows),
        "ssim_mean": float(np.mean(ssims)),
        "psnr_mean": float(np.mean(psnrs)),
        "moment_distance": distance,
        "covariance_ridge_applied": ridge_used,
    }
    (out / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    _write_csv(out / "pairs.csv", ["name", "ssim", "psnr"], rows)
    plotting.save_figure(
        plotting.metric_histogram_figure(ssims, psnrs, distance), out / "metrics.png"
    )
    _write_resolved(cfg, out)
    print(
        f"{len(rows)} pairs: ssim {summary['ssim_mean']:.4f}, "
        f"psnr {summary['psnr_mean']:.2f} dB, moment distance {distance:.4f}"
        + (" (ridge applied)" if ridge_used else "")
    )
    return 0


def cmd_probe_fusion(ns: argparse.Namespace) -> int:
    cfg = _resolve(
        ns,
        "probe-fusion",
        {
            "out": None,
            "seed": 0,
            "trials": 20,
            "samples": 2000,
            "missing": "0,3,5,7",
            "strategies": "additive,concat",
        },
    )
    out = _require_out(cfg)
    try:
        missing = tuple(int(x) for x in str(cfg["missing"]).split(",") if x.strip())
    except ValueError:
        raise ValidationError(f"--missing expects comma-separated ints, got {cfg['missing']!r}")
    if any(not 0 <= c < len(ATTRIBUTE_ORDER) for c in missing):
        raise ValidationError("--missing counts must lie in [0, 12]")
    aliases = {"add": "additive", "additive": "additive", "concat": "concat"}
    strategies = []
    for name in str(cfg["strategies"]).split(","):
        name = name.strip()
        if name not in aliases:
            raise ValidationError(f"unknown strategy {name!r} (use add or concat)")
        strategies.append(aliases[name])
    report = recoverability_probe(
        tuple(strategies),
        trials=int(cfg["trials"]),
        samples=int(cfg["samples"]),
        missing_counts=missing,
        seed=int(cfg["seed"]),
    )
    (out / "probe.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    rows = [
        (s, c, attr, mae)
        for s in report.strategies
        for c in report.missing_counts
        for attr, mae in sorted(report.mean_mae(s, c).items())
    ]
    _write_csv(out / "probe.csv", ["strategy", "missing", "attribute", "mae"], rows)
    plotting.save_figure(plotting.recoverability_figure(report), out / "probe.png")
    _write_resolved(cfg, out)
    for s in report.strategies:
        line = ", ".join(
            f"{c} missing: {report.overall_mae(s, c):8.3f}" for c in report.missing_counts
        )
        print(f"{s:>9s} MAE  {line}")
    return 0


def cmd_probe_fidelity(ns: argparse.Namespace) -> int:
    cfg = _resolve(
        ns,
        "probe-fidelity",
        {
            "checkpoint": None,
            "attribute": None,
            "out": None,
            "seed": 0,
            "points": 11,
            "seeds": 8,
            "steps": 100,
        },
    )
    if not cfg.get("checkpoint") or not cfg.get("attribute"):
        raise ValidationError("--checkpoint and --attribute are required")
    out = _require_out(cfg)
    model = load_checkpoint(cfg["checkpoint"])
    if not isinstance(model, GenerationModel):
        raise ValidationError("fidelity probing runs on single-frame checkpoints")
    report = fidelity_probe(
        model,
        cfg["attribute"],
        num_points=int(cfg["points"]),
        seeds=int(cfg["seeds"]),
        steps=int(cfg["steps"]),
        seed0=int(cfg["seed"]),
    )
    stem = f"fidelity_{report.attribute}"
    (out / f"{stem}.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    _write_csv(
        out / f"{stem}.csv",
        ["value", "statistic_mean"],
        list(zip(report.values, report.mean_curve)),
    )
    plotting.save_figure(plotting.fidelity_sweep_figure(report), out / f"{stem}.png")
    _write_resolved(cfg, out)
    print(
        f"{report.attribute} -> {report.statistic}: "
        f"spearman {report.spearman_mean_curve:+.3f} over {len(report.values)} points"
    )
    return 0


# ---------------------------------------------------------------- parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geodiffusion",
        description="Environment-conditioned diffusion lab: synthetic worlds, "
        "training, sampling and probes.",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--config", type=str, default=None,
                       help="resolved_config.json from a previous run")

    p = sub.add_parser("make-world", help="generate a synthetic world")
    common(p)
    p.add_argument("--n-images", dest="n_images", type=int, default=None)
    p.add_argument("--image-size", dest="image_size", type=int, default=None)
    p.add_argument("--frames-per-location", dest="frames_per_location", type=int, default=None)
    p.set_defaults(handler=cmd_make_world)

    p = sub.add_parser("build-dataset", help="align stubs with the climate grid")
    common(p)
    p.add_argument("--world", type=str, default=None)
    p.set_defaults(handler=cmd_build_dataset)

    p = sub.add_parser("train", help="train a conditional model")
    common(p)
    p.add_argument("--manifest", type=str, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--strategy", type=str, default=None, choices=("concat", "additive"))
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("sample", help="sample images from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", type=str, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--guidance", type=float, default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--meta", action="append", default=None, metavar="KEY=VALUE")
    p.add_argument("--prompt", type=str, default=None)
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser("train-temporal", help="train the sequence control branch")
    common(p)
    p.add_argument("--manifest", type=str, default=None)
    p.add_argument("--base-checkpoint", dest="base_checkpoint", type=str, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.set_defaults(handler=cmd_train_temporal)

    p = sub.add_parser("sample-temporal", help="sample conditioned on sibling frames")
    common(p)
    p.add_argument("--checkpoint", type=str, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--guidance", type=float, default=None)
    p.add_argument("--meta", action="append", default=None, metavar="KEY=VALUE")
    p.add_argument("--prompt", type=str, default=None)
    p.add_argument("--frames", nargs="+", default=None, metavar="IMAGE")
    p.add_argument("--frame-meta", dest="frame_meta", action="append", default=None,
                   metavar="K=V,K=V")
    p.set_defaults(handler=cmd_sample_temporal)

    p = sub.add_parser("evaluate", help="compare generated images to references")
    common(p)
    p.add_argument("--generated", type=str, default=None)
    p.add_argument("--reference", type=str, default=None)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("probe-fusion", help="attribute recoverability probe")
    common(p)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--missing", type=str, default=None,
                   help="comma-separated missing-attribute counts")
    p.add_argument("--strategies", type=str, default=None,
                   help="comma-separated fusion strategies (add, concat)")
    p.set_defaults(handler=cmd_probe_fusion)

    p = sub.add_parser("probe-fidelity", help="metadata-to-pixel fidelity sweep")
    common(p)
    p.add_argument("--checkpoint", type=str, default=None)
    p.add_argument("--attribute", type=str, default=None, choices=("tcc", "ssr", "tp"))
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--seeds", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(handler=cmd_probe_fidelity)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 0 for --help, 2 for usage errors; fold usage into 1
        return 0 if e.code == 0 else 1
    try:
        return ns.handler(ns)
    except (ValidationError, ValueError, FileNotFoundError, NotADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - report, then fail with runtime code
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
