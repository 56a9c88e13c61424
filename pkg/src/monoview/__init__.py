"""Single-view radiance fields supervised by geometry and semantic pseudo labels."""

from .config import TrainConfig, toy_config
from .data import SceneBundle, load_scene
from .metrics import EvalReport, psnr, ssim
from .trainer import Trainer

__version__ = "0.1.0"

__all__ = ["EvalReport", "SceneBundle", "TrainConfig", "Trainer", "load_scene", "psnr", "ssim", "toy_config"]
