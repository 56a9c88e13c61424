"""Command-line entry point: train, eval, render, warp-preview, print-schedule and helpers."""

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path

import click
import numpy as np

from .config import TrainConfig, load_config, save_config
from .errors import MonoviewError

log = logging.getLogger("monoview")

DEFAULT_VIT_REPO = "facebook/dino-vits16"


def _fail(exc: Exception):
    raise click.ClickException(f"{type(exc).__name__}: {exc}")


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except MonoviewError as exc:
            _fail(exc)


@click.group(cls=_Group)
@click.option("-v", "--verbose", count=True, help="Repeat for more log output.")
def main(verbose):
    """Fit and evaluate a radiance field from one posed RGB-D view."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _scene_from_config(cfg: TrainConfig):
    from .data import load_scene

    return load_scene(cfg.dataset, cfg.scene, cfg.ref_view, cfg.patch_size, **cfg.scene_options)


def _write_history(history, path):
    keys = sorted({k for h in history for k in h}, key=lambda k: (k != "iteration", k))
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(history)


def _write_eval(report, out: Path):
    from .plotting import plot_view_metrics

    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "metrics.csv")
    report.write_jsonl(out / "metrics.jsonl")
    with open(out / "summary.json", "w") as fh:
        json.dump(report.summary(), fh, indent=2)
    if len(report):
        plot_view_metrics(report, out / "metrics.png")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="YAML config file.")
@click.option("--scene", type=click.Path(), help="Scene directory (overrides the config).")
@click.option("--dataset", type=click.Choice(["blender", "llff", "dtu", "toy"]), help="Dataset layout override.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--iterations", type=int, help="Stop after this many steps (default: the whole schedule).")
@click.option("--resume", type=click.Path(exists=True, dir_okay=False), help="Checkpoint to continue from.")
@click.option("--ckpt-every", type=int, default=0, show_default=True)
@click.option("--eval/--no-eval", "run_eval", default=True, show_default=True)
def train(config_path, scene, dataset, out_dir, iterations, resume, ckpt_every, run_eval):
    """Train on one reference view; writes config, loss trace, checkpoint and metrics to OUT."""
    from .plotting import plot_losses
    from .trainer import Trainer

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if resume:
        trainer = Trainer.load(resume)
        cfg = trainer.config
    else:
        cfg = load_config(config_path) if config_path else TrainConfig()
        if scene:
            cfg.scene = scene
        if dataset:
            cfg.dataset = dataset
        trainer = Trainer(cfg, _scene_from_config(cfg))
    save_config(cfg, out / "config.yaml")
    trainer.scene.save_metadata(out / "scene.json")

    def checkpoint(tr, step):
        if ckpt_every and (step["iteration"] + 1) % ckpt_every == 0:
            tr.save(out / "checkpoint.pt")
        if cfg.log_every and step["iteration"] % cfg.log_every == 0:
            click.echo(f"iter {step['iteration']:>6}  total {step['total']:.5f}  pix {step['pix']:.5f}")

    trainer.fit(iterations, callback=checkpoint)
    trainer.save(out / "checkpoint.pt")
    _write_history(trainer.state.history, out / "losses.csv")
    plot_losses(trainer.state.history, out / "losses.png")
    click.echo(f"saved {out / 'checkpoint.pt'} at iteration {trainer.iteration}")
    if run_eval and trainer.scene.test_views:
        report = trainer.evaluate()
        _write_eval(report, out / "eval")
        click.echo(report.table())


@main.command("eval")
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Default: <ckpt dir>/eval.")
@click.option("--perceptual", help="Perceptual backend: lpips, mad-stub or none.")
@click.option("--scene", type=click.Path(), help="Scene directory if it moved since training.")
def eval_cmd(ckpt, out_dir, perceptual, scene):
    """Render every test view, print a metrics table and write CSV, JSONL and a figure."""
    from .metrics import build_perceptual
    from .trainer import Trainer, read_checkpoint

    sc = None
    if scene:
        cfg = TrainConfig.from_dict(read_checkpoint(ckpt)["config"])
        cfg.scene = scene
        sc = _scene_from_config(cfg)
    trainer = Trainer.load(ckpt, scene=sc)
    backend = build_perceptual(perceptual) if perceptual else None
    report = trainer.evaluate(perceptual=backend)
    out = Path(out_dir) if out_dir else Path(ckpt).parent / "eval"
    _write_eval(report, out)
    click.echo(report.table())
    click.echo(f"wrote {out / 'metrics.csv'} and {out / 'metrics.jsonl'}")


def _target_camera(trainer_scene, pose_id, angles):
    from .data.bundle import Camera
    from .geometry import offset_pose

    if (pose_id is None) == (angles is None):
        raise click.UsageError("give exactly one of --pose-id or --angles")
    if pose_id is not None:
        views = trainer_scene.test_views
        if not 0 <= pose_id < len(views):
            raise click.UsageError(f"--pose-id must lie in 0..{len(views) - 1}")
        return views[pose_id].name, views[pose_id].camera
    ref = trainer_scene.camera
    rad = [math.radians(a) for a in angles]
    name = "angles_" + "_".join(f"{a:g}" for a in angles)
    return name, Camera(ref.intrinsics, offset_pose(ref.pose, rad, trainer_scene.unseen.pivot))


@main.command()
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--pose-id", type=int, help="Index into the scene's test views.")
@click.option("--angles", type=float, nargs=3, help="Euler offsets (deg) about the reference camera x, y, z.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), help="Output PNG (default: next to ckpt).")
@click.option("--chunk", type=int, help="Rays per render batch.")
def render(ckpt, pose_id, angles, out_path, chunk):
    """Render a novel view (color PNG plus depth PFM/PNG)."""
    from .data.io import write_image, write_pfm
    from .plotting import colorize_depth
    from .trainer import Trainer

    trainer = Trainer.load(ckpt)
    name, cam = _target_camera(trainer.scene, pose_id, angles)
    out = trainer.render_view(cam.intrinsics, cam.pose, chunk)
    path = Path(out_path) if out_path else Path(ckpt).parent / f"render_{name}.png"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_image(path, out["color"])
    write_pfm(path.with_suffix(".depth.pfm"), out["z_depth"].astype(np.float32))
    write_image(path.with_suffix(".depth.png"), colorize_depth(out["z_depth"], out["opacity"] > 0.5))
    click.echo(f"wrote {path}")


@main.command("warp-preview")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", type=click.Choice(["blender", "llff", "dtu", "toy"]))
@click.option("--scene", type=click.Path())
@click.option("--ref-view", type=int)
@click.option("--pose-id", type=int, help="Warp into this test view.")
@click.option("--angles", type=float, nargs=3, help="Warp into the reference pose offset by these angles (deg).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def warp_preview(config_path, dataset, scene, ref_view, pose_id, angles, out_dir):
    """Forward-warp the reference depth into another camera; writes PFM and a colorised PNG."""
    from .data.io import write_image, write_pfm
    from .geometry import relative_transform
    from .plotting import colorize_depth
    from .warping import warp_depth

    cfg = load_config(config_path) if config_path else TrainConfig()
    cfg.dataset = dataset or cfg.dataset
    cfg.scene = scene or cfg.scene
    cfg.ref_view = ref_view if ref_view is not None else cfg.ref_view
    sc = _scene_from_config(cfg)
    name, cam = _target_camera(sc, pose_id, angles)
    result = warp_depth(sc.depth, sc.camera.intrinsics, cam.intrinsics, relative_transform(sc.camera.pose, cam.pose))
    values, mask = result.depth.numpy()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pfm(out / f"warped_{name}.pfm", np.where(mask, values, 0.0).astype(np.float32))
    ref_vals, ref_mask = sc.depth.numpy()
    lo, hi = float(ref_vals[ref_mask].min()), float(ref_vals[ref_mask].max())
    write_image(out / f"warped_{name}.png", colorize_depth(values, mask, lo, hi))
    write_image(out / "reference_depth.png", colorize_depth(ref_vals, ref_mask, lo, hi))
    click.echo(f"{int(mask.sum())} of {mask.size} target pixels covered; wrote {out}")


@main.command("print-schedule")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--every", type=int, default=1000, show_default=True)
@click.option("--stop", type=int, help="Last iteration (default: total_iterations).")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), help="Also write the table as CSV.")
@click.option("--plot", "plot_path", type=click.Path(dir_okay=False), help="Also write a schedule figure.")
def print_schedule(config_path, every, stop, csv_path, plot_path):
    """Dump stride, pose width, loss weights and learning rates per iteration."""
    from .plotting import plot_schedule
    from .schedule import schedule_table

    sched = (load_config(config_path) if config_path else TrainConfig()).schedule
    rows = schedule_table(sched, every, 0, stop)
    cols = list(rows[0])
    click.echo("  ".join(f"{c:>11}" for c in cols))
    for r in rows:
        click.echo("  ".join(f"{r[c]:>11.6g}" if isinstance(r[c], float) else f"{r[c]:>11}" for c in cols))
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            writer.writerows(rows)
    if plot_path:
        plot_schedule(sched, plot_path)


@main.command("fetch-weights")
@click.option("--repo", default=DEFAULT_VIT_REPO, show_default=True)
@click.option("--dest", type=click.Path(file_okay=False), required=True)
def fetch_weights(repo, dest):
    """Download pretrained ViT weights for the global feature prior."""
    try:
        from huggingface_hub import snapshot_download
    except ImportError as exc:
        raise click.ClickException("fetch-weights needs `huggingface_hub` (pip install monoview[vit])") from exc
    path = snapshot_download(repo_id=repo, local_dir=dest)
    click.echo(f"weights in {path}; set extractor.weights_path to this directory")


@main.command("make-depth")
@click.option("--mesh", type=click.Path(exists=True, dir_okay=False), required=True, help="Wavefront OBJ.")
@click.option("--scene", type=click.Path(exists=True, file_okay=False), required=True, help="Blender scene dir.")
@click.option("--split", default="train", show_default=True)
@click.option("--view", "view_id", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), help="Default: <scene>/depth/<image stem>.pfm")
def make_depth(mesh, scene, split, view_id, out_path):
    """Rasterize z-depth of a mesh for one Blender-layout camera."""
    from .data.blender import read_blender_cameras
    from .data.io import write_pfm
    from .data.mesh import rasterize_depth, read_obj

    cams = read_blender_cameras(scene, split)
    if not 0 <= view_id < len(cams):
        raise click.UsageError(f"--view must lie in 0..{len(cams) - 1}")
    img_path, cam = cams[view_id]
    verts, faces = read_obj(mesh)
    depth, mask = rasterize_depth(verts, faces, cam.intrinsics, cam.pose)
    path = Path(out_path) if out_path else Path(scene) / "depth" / f"{img_path.stem}.pfm"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_pfm(path, np.where(mask, depth, 0.0).astype(np.float32))
    click.echo(f"wrote {path} ({int(mask.sum())} covered pixels)")


@main.command("make-toy-scene")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--resolution", type=int, default=64, show_default=True)
@click.option("--n-test", type=int, default=60, show_default=True)
@click.option("--extra-frames", type=int, default=0, show_default=True)
def make_toy_scene(out_dir, resolution, n_test, extra_frames):
    """Write the procedural cube scene in Blender layout, with orbit ground truth."""
    from .data.toy import write_toy_blender

    path = write_toy_blender(out_dir, resolution, n_test, extra_frames=extra_frames)
    click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
