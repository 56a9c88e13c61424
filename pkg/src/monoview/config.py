"""Training configuration and its YAML form."""

from __future__ import annotations

from dataclasses import dataclass, fields
from dataclasses import field as dc_field

import yaml

from .errors import ConfigurationError
from .field import FieldConfig
from .render import RenderConfig
from .schedule import TrainingSchedule
from .semantic import DiscriminatorConfig

GEO_FOOTPRINTS = ("patch", "image")


@dataclass
class TrainConfig:
    dataset: str = "blender"
    scene: str | None = None
    ref_view: int | None = None  # None: the loader's default
    patch_size: tuple | None = None  # None: the dataset default
    scene_options: dict = dc_field(default_factory=dict)  # extra loader keywords
    seed: int = 0
    schedule: TrainingSchedule = dc_field(default_factory=TrainingSchedule)
    field: FieldConfig = dc_field(default_factory=FieldConfig)
    render: RenderConfig = dc_field(default_factory=RenderConfig)
    use_fine: bool = True
    discriminator: DiscriminatorConfig = dc_field(default_factory=DiscriminatorConfig)
    augment: list = dc_field(default_factory=lambda: ["color", "translation", "cutout"])
    extractor: dict = dc_field(default_factory=lambda: {"kind": "vit", "weights_path": None})
    use_geo: bool = True
    use_adv: bool = True
    use_cls: bool = True
    smooth_factor: int = 2
    # source region of reference depth warped into the unseen view
    geo_footprint: str = "patch"
    perceptual: str | None = "lpips"
    eval_chunk: int = 4096
    log_every: int = 100

    def __post_init__(self):
        if self.geo_footprint not in GEO_FOOTPRINTS:
            raise ConfigurationError(f"geo_footprint must be one of {GEO_FOOTPRINTS}")
        if self.smooth_factor < 1:
            raise ConfigurationError("smooth_factor must be >= 1")
        if self.patch_size is not None:
            self.patch_size = tuple(int(x) for x in self.patch_size)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if hasattr(value, "to_dict"):
                value = value.to_dict()
            elif isinstance(value, DiscriminatorConfig):
                value = vars(value).copy()
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "schedule" in d:
                d["schedule"] = TrainingSchedule.from_dict(d["schedule"] or {})
            if "field" in d:
                d["field"] = FieldConfig.from_dict(d["field"] or {})
            if "render" in d:
                d["render"] = RenderConfig.from_dict(d["render"] or {})
            if "discriminator" in d:
                d["discriminator"] = DiscriminatorConfig(**(d["discriminator"] or {}))
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(f"invalid config: {exc}") from exc


def load_config(path, overrides: dict | None = None) -> TrainConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    data.update(overrides or {})
    return TrainConfig.from_dict(data)


def save_config(config: TrainConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)


def toy_config(**overrides) -> TrainConfig:
    """Desk-scale settings for the procedural toy scene (64x64, 2k iterations)."""
    base = {
        "dataset": "toy",
        "patch_size": [16, 16],
        "scene_options": {"resolution": 64, "n_test": 12},
        "schedule": {
            "total_iterations": 2000, "stride_init": 4, "stride_step": 1, "stride_interval": 500,
            "stride_min": 1, "omega_init_deg": 3.0, "omega_max_deg": 15.0, "lr_init": 5e-3,
            "lr_half_interval": 1000,
        },
        "field": {"depth": 4, "width": 128, "skips": [2]},
        "render": {"n_coarse": 48, "n_fine": 0, "white_background": True, "chunk": 4096},
        "use_fine": False,
        "discriminator": {"base_channels": 32, "n_layers": 4},
        "extractor": {"kind": "random-conv", "seed": 0},
        "perceptual": "mad-stub",
        "log_every": 100,
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            base[key] = {**base[key], **value}
        else:
            base[key] = value
    return TrainConfig.from_dict(base)
