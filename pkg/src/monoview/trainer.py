"""The semi-supervised training loop, evaluation, rendering and checkpoints."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import TrainConfig
from .data.bundle import Camera, SceneBundle
from .errors import ConfigurationError, TrainingError
from .field import RadianceField
from .geometry import CameraIntrinsics, CameraPose, PixelPatch, random_patch, relative_transform, sample_dataset_pose
from .metrics import EvalReport, ViewMetrics, build_perceptual, psnr, ssim
from .render import RenderConfig, pixel_loss, rays_for_pixels, render_patch, render_rays_chunked
from .schedule import lr_at, omega_at, should_reinit_discriminator, stride_at, stride_stage, weights_at
from .semantic import (AugmentationPolicy, build_extractor, cls_loss, critic_loss, generator_loss, global_feature,
                       reinit_discriminator)
from .warping import DepthMap, geometry_loss, masked_l1, warp_depth, warp_patch_points

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "monoview-checkpoint"
CHECKPOINT_VERSION = 1
# loss items that enter the total, with the weight that scales each
WEIGHTED_TERMS = (("pix", None), ("geo", "geo"), ("depth_ref", "geo"), ("adv_g", "adv"), ("cls", "cls"))


def total_loss(items: dict, weights: dict):
    """``pix + w_geo * (geo + depth_ref) + w_adv * adv_g + w_cls * cls`` over the items present."""
    total = 0.0
    for name, weight in WEIGHTED_TERMS:
        if name in items:
            total = total + (items[name] if weight is None else weights[weight] * items[name])
    return total


@dataclass
class TrainState:
    """Everything needed to resume: parameters, optimiser moments, RNG streams, counters."""

    iteration: int = 0
    disc_stage: int | None = None
    history: list = field(default_factory=list)


def _footprint_mask(patch: PixelPatch, size) -> torch.Tensor:
    u0, v0, u1, v1 = patch.footprint
    m = torch.zeros(size, dtype=torch.bool)
    m[v0:v1 + 1, u0:u1 + 1] = True
    return m


def _gather(image: torch.Tensor, patch: PixelPatch) -> torch.Tensor:
    coords = torch.as_tensor(patch.coords)
    out = image[coords[:, 1], coords[:, 0]]
    return out.reshape(*patch.shape, *image.shape[2:])


class Trainer:
    def __init__(self, config: TrainConfig, scene: SceneBundle, extractor=None):
        self.config = config
        self.scene = scene
        self.schedule = config.schedule
        self.patch_size = tuple(config.patch_size or scene.patch_size)
        self.render_config = RenderConfig(**{**config.render.to_dict(), "white_background": scene.white_background})
        if not config.use_fine:
            self.render_config.n_fine = 0

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.coarse = RadianceField(config.field)
            self.fine = RadianceField(config.field) if config.use_fine and self.render_config.n_fine > 0 else None
        self.optimizer = torch.optim.RAdam(self.field_parameters(), lr=self.schedule.lr_init, betas=(0.9, 0.999))
        self.np_rng = np.random.default_rng(config.seed)
        self.generator = torch.Generator().manual_seed(config.seed)
        self.policy = AugmentationPolicy.from_names(config.augment)
        self._extractor = extractor
        self.disc = None
        self.disc_optimizer = None
        self.state = TrainState()

        self.ref_image = torch.as_tensor(scene.image, dtype=torch.float32)
        values, mask = scene.depth.numpy()
        self.ref_depth = DepthMap(torch.as_tensor(np.where(mask, values, 1.0), dtype=torch.float32),
                                  torch.as_tensor(mask))

    # ---- bookkeeping ----------------------------------------------------------

    @property
    def fields(self):
        return (self.coarse, self.fine)

    @property
    def iteration(self) -> int:
        return self.state.iteration

    def field_parameters(self):
        params = list(self.coarse.parameters())
        if self.fine is not None:
            params += list(self.fine.parameters())
        return params

    @property
    def extractor(self):
        if self._extractor is None:
            self._extractor = build_extractor(self.config.extractor)
        return self._extractor

    def _branch_on(self, flag: bool, weight_name: str) -> bool:
        # weights are linear in the iteration, so a branch is live for the run if either endpoint is positive
        if not flag:
            return False
        s = self.schedule
        return max(getattr(weights_at(0, s), weight_name), getattr(weights_at(s.total_iterations, s), weight_name)) > 0

    def reset_discriminator(self, stage: int):
        """Fresh critic and critic optimiser, seeded by the run seed and the stride stage."""
        self.disc = reinit_discriminator(self.config.seed + stage, self.patch_size, self.config.discriminator)
        _, lr_d = lr_at(self.iteration, self.schedule)
        self.disc_optimizer = torch.optim.RAdam(self.disc.parameters(), lr=lr_d, betas=(0.9, 0.999))
        self.state.disc_stage = stage

    def sample_unseen_camera(self, omega: float) -> Camera:
        src = self.scene.unseen
        ref = self.scene.camera
        picked = sample_dataset_pose(src.strategy, ref.pose, src.pool, self.np_rng, omega, src.pivot)
        return picked if isinstance(picked, Camera) else Camera(ref.intrinsics, picked)

    # ---- one iteration --------------------------------------------------------

    def train_step(self) -> dict:
        """One D-step and one field update; returns the itemised, level-averaged losses."""
        it = self.iteration
        s = self.schedule
        cfg = self.config
        w = weights_at(it, s)
        lr, lr_d = lr_at(it, s)
        stride = stride_at(it, s)
        ref = self.scene.camera

        use_geo = cfg.use_geo and w.geo > 0
        use_depth_ref = w.geo > 0
        adv_live = self._branch_on(cfg.use_adv, "adv")
        use_cls = cfg.use_cls and w.cls > 0
        if adv_live and (self.disc is None or should_reinit_discriminator(it, s)):
            self.reset_discriminator(stride_stage(it, s))

        ref_patch = random_patch(self.np_rng, stride, self.patch_size, ref.intrinsics.size)
        ref_render = render_patch(self.fields, ref.intrinsics, ref.pose, ref_patch, self.render_config,
                                  self.scene.near, self.scene.far, self.generator)
        levels = list(ref_render)
        target = _gather(self.ref_image, ref_patch)
        ref_z = _gather(self.ref_depth.values, ref_patch)
        ref_z_mask = _gather(self.ref_depth.mask, ref_patch)

        items = {"pix": sum(pixel_loss(ref_render[lv].colors, target) for lv in levels) / len(levels)}
        if use_depth_ref:
            items["depth_ref"] = sum(masked_l1(ref_render[lv].z_depths, ref_z, ref_z_mask)[0]
                                     for lv in levels) / len(levels)

        need_unseen = use_geo or adv_live or use_cls
        if need_unseen:
            cam = self.sample_unseen_camera(omega_at(it, s))
            uns_patch = random_patch(self.np_rng, stride, self.patch_size, cam.intrinsics.size)
            uns_render = render_patch(self.fields, cam.intrinsics, cam.pose, uns_patch, self.render_config,
                                      self.scene.near, self.scene.far, self.generator)
        if use_geo:
            items.update(self._geometry_items(ref_patch, cam, uns_patch, uns_render, w.smooth))
        if adv_live:
            items["adv_d"] = self._critic_step(target, [uns_render[lv].colors for lv in levels], lr_d)
            if w.adv > 0:
                items["adv_g"] = sum(generator_loss(self.disc, uns_render[lv].colors, self.policy, self.generator)
                                     for lv in levels) / len(levels)
        if use_cls:
            with torch.no_grad():
                real_feat = global_feature(self.extractor, target)
            items["cls"] = sum(cls_loss(real_feat, global_feature(self.extractor, uns_render[lv].colors))
                               for lv in levels) / len(levels)

        weights = w.as_dict()
        total = total_loss(items, weights)
        breakdown = {k: float(v.detach()) if torch.is_tensor(v) else float(v) for k, v in items.items()}
        breakdown["total"] = float(total.detach())
        for name, value in breakdown.items():
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss term {name!r} at iteration {it}", breakdown)

        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        self.optimizer.step()

        breakdown.update(iteration=it, stride=stride, lr=lr, **{f"w_{k}": v for k, v in weights.items()})
        self.state.iteration += 1
        self.state.history.append(breakdown)
        return breakdown

    def _geometry_items(self, ref_patch, cam: Camera, uns_patch, uns_render, lambda_smooth: float) -> dict:
        ref = self.scene.camera
        ref_size = ref.intrinsics.size
        to_unseen = relative_transform(ref.pose, cam.pose)
        to_ref = relative_transform(cam.pose, ref.pose)

        # ground-truth reference depth pushed into the unseen view, read at the unseen patch pixels
        src_mask = self.ref_depth.mask
        if self.config.geo_footprint == "patch":
            src_mask = src_mask & _footprint_mask(ref_patch, ref_size)
        fwd = warp_depth(DepthMap(self.ref_depth.values, src_mask), ref.intrinsics, cam.intrinsics, to_unseen)
        fwd_patch = DepthMap(_gather(fwd.depth.values, uns_patch), _gather(fwd.mask, uns_patch))
        ref_region = self.ref_depth.mask & _footprint_mask(ref_patch, ref_size)

        acc = {}
        for lv, rendered in uns_render.items():
            back = warp_patch_points(uns_patch.coords, rendered.z_depths, cam.intrinsics, ref.intrinsics, to_ref,
                                     ref_size)
            terms = geometry_loss(self.ref_depth.values, back.depth, rendered.z_depths, fwd_patch, lambda_smooth,
                                  smooth_depth=rendered.z_depths, smooth_image=rendered.colors,
                                  smooth_factor=self.config.smooth_factor, mask_a=ref_region)
            for key, value in (("geo", terms.total), ("geo_l1_ref", terms.l1_a), ("geo_l1_unseen", terms.l1_b),
                               ("smooth", terms.smooth)):
                acc[key] = acc.get(key, 0.0) + value / len(uns_render)
        return {"geo": acc["geo"], **{k: v.detach() for k, v in acc.items() if k != "geo"}}

    def _critic_step(self, real, fakes, lr_d: float):
        for group in self.disc_optimizer.param_groups:
            group["lr"] = lr_d
        loss_d = sum(critic_loss(self.disc, real, f, self.policy, self.generator) for f in fakes) / len(fakes)
        if not torch.isfinite(loss_d):
            raise TrainingError(f"non-finite loss term 'adv_d' at iteration {self.iteration}",
                                {"adv_d": float(loss_d.detach())})
        self.disc_optimizer.zero_grad(set_to_none=True)
        loss_d.backward()
        self.disc_optimizer.step()
        # the generator pass must not leave gradients on the critic
        self.disc_optimizer.zero_grad(set_to_none=True)
        return loss_d.detach()

    def fit(self, iterations: int | None = None, callback=None):
        """Run until ``iterations`` more steps (default: to the end of the schedule)."""
        stop = self.schedule.total_iterations if iterations is None else self.iteration + iterations
        while self.iteration < stop:
            out = self.train_step()
            if self.config.log_every and out["iteration"] % self.config.log_every == 0:
                log.info("iter %d total %.5f pix %.5f", out["iteration"], out["total"], out["pix"])
            if callback is not None and callback(self, out) is False:
                break
        return self.state.history

    # ---- rendering and evaluation ---------------------------------------------

    @torch.no_grad()
    def render_view(self, intrinsics: CameraIntrinsics, pose: CameraPose, chunk: int | None = None) -> dict:
        """Full-image deterministic render; returns numpy ``color``, ``z_depth`` and ``opacity``."""
        h, w = intrinsics.size
        vv, uu = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        pixels = np.stack([uu.ravel(), vv.ravel()], axis=-1)
        origins, dirs, cos = rays_for_pixels(intrinsics, pose, pixels)
        out = render_rays_chunked(self.fields, origins, dirs, self.scene.near, self.scene.far, self.render_config,
                                  deterministic=True, chunk=chunk or self.config.eval_chunk)
        r = out["fine"] if "fine" in out else out["coarse"]
        return {
            "color": r["color"].reshape(h, w, 3).clamp(0, 1).numpy(),
            "z_depth": (r["depth"] * cos).reshape(h, w).numpy(),
            "opacity": r["opacity"].reshape(h, w).numpy(),
        }

    def render_novel_view(self, pose: CameraPose, intrinsics: CameraIntrinsics | None = None,
                          chunk: int | None = None) -> np.ndarray:
        return self.render_view(intrinsics or self.scene.camera.intrinsics, pose, chunk)["color"]

    def evaluate(self, views=None, perceptual=None, progress=None) -> EvalReport:
        """Render every view with ground truth and score it."""
        views = self.scene.test_views if views is None else views
        backend = build_perceptual(self.config.perceptual) if perceptual is None else perceptual
        results = []
        for view in views:
            if view.image is None:
                continue
            out = self.render_view(view.camera.intrinsics, view.camera.pose)
            depth_err = None
            if view.depth is not None and view.depth_mask is not None and view.depth_mask.any():
                depth_err = float(np.abs(out["z_depth"] - view.depth)[view.depth_mask].mean())
            results.append(ViewMetrics(
                view.name, psnr(out["color"], view.image), ssim(out["color"], view.image),
                None if backend is None else backend(out["color"], view.image), depth_err, dict(view.meta),
            ))
            if progress is not None:
                progress(view, results[-1])
        return EvalReport(results, getattr(backend, "name", None))

    # ---- checkpoints ----------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "iteration": self.state.iteration,
            "history": self.state.history,
            "coarse": self.coarse.state_dict(),
            "fine": None if self.fine is None else self.fine.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "disc_stage": self.state.disc_stage,
            "disc": None if self.disc is None else self.disc.state_dict(),
            "disc_optimizer": None if self.disc_optimizer is None else self.disc_optimizer.state_dict(),
            "np_rng": self.np_rng.bit_generator.state,
            "torch_rng": self.generator.get_state(),
            "scene": self.scene.metadata(),
        }

    def load_state_dict(self, ckpt: dict):
        self.coarse.load_state_dict(ckpt["coarse"])
        if self.fine is not None:
            self.fine.load_state_dict(ckpt["fine"])
        self.optimizer.load_state_dict(ckpt["optimizer"])
        self.state = TrainState(ckpt["iteration"], ckpt["disc_stage"], list(ckpt["history"]))
        if ckpt["disc"] is not None:
            self.reset_discriminator(ckpt["disc_stage"])
            self.disc.load_state_dict(ckpt["disc"])
            self.disc_optimizer.load_state_dict(ckpt["disc_optimizer"])
        self.np_rng.bit_generator.state = ckpt["np_rng"]
        self.generator.set_state(ckpt["torch_rng"])

    def save(self, path):
        torch.save(self.state_dict(), path)

    @classmethod
    def load(cls, path, scene: SceneBundle | None = None, extractor=None) -> "Trainer":
        """Restore a trainer; the scene is reloaded from the stored config unless given."""
        ckpt = read_checkpoint(path)
        config = TrainConfig.from_dict(ckpt["config"])
        if scene is None:
            from .data import load_scene

            scene = load_scene(config.dataset, config.scene, config.ref_view, config.patch_size,
                               **config.scene_options)
        trainer = cls(config, scene, extractor)
        trainer.load_state_dict(ckpt)
        return trainer


def read_checkpoint(path) -> dict:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(ckpt, dict) or ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {ckpt.get('version')}")
    return ckpt
