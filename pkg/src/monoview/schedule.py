"""Iteration-indexed curricula: stride, pose width, loss weights, learning rates."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .errors import ConfigurationError

LAMBDA_ASSIGNMENTS = ("prose", "printed")


@dataclass(frozen=True)
class LossWeights:
    geo: float
    adv: float
    cls: float
    smooth: float

    def as_dict(self):
        return asdict(self)


@dataclass
class TrainingSchedule:
    total_iterations: int = 40_000
    stride_init: int = 6
    stride_step: int = 2
    stride_interval: int = 10_000
    stride_min: int = 1
    omega_init: float = math.radians(3.0)
    omega_max: float = math.radians(15.0)
    omega_ramp: int | None = None  # None: half of total_iterations
    lambda_geo: float = 8.0
    lambda_smooth: float = 0.1
    # the adversarial and global-prior weights trade this total linearly
    lambda_semantic: float = 0.1
    lambda_assignment: str = "prose"
    lr_init: float = 1e-3
    lr_half_interval: int = 10_000
    d_lr_ratio: float = 0.2

    def __post_init__(self):
        if not self.stride_init >= self.stride_min >= 1:
            raise ConfigurationError("need stride_init >= stride_min >= 1")
        if self.stride_interval <= 0 or self.lr_half_interval <= 0 or self.total_iterations <= 0:
            raise ConfigurationError("schedule intervals must be positive")
        if self.omega_ramp is not None and self.omega_ramp <= 0:
            raise ConfigurationError("omega_ramp must be positive")
        if not 0 < self.d_lr_ratio <= 1:
            raise ConfigurationError("d_lr_ratio must lie in (0, 1]")
        if self.lambda_assignment not in LAMBDA_ASSIGNMENTS:
            raise ConfigurationError(f"lambda_assignment must be one of {LAMBDA_ASSIGNMENTS}")
        for name in ("lambda_geo", "lambda_smooth", "lambda_semantic", "omega_init", "omega_max", "lr_init"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigurationError(f"{name} must be finite and non-negative")

    @property
    def ramp(self) -> int:
        return self.omega_ramp if self.omega_ramp is not None else max(1, self.total_iterations // 2)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("omega_init", "omega_max"):
            deg = d.pop(key + "_deg", None)
            if deg is not None:
                d[key] = math.radians(float(deg))
        return cls(**d)


def stride_at(iteration: int, sched: TrainingSchedule) -> int:
    return max(sched.stride_min, sched.stride_init - sched.stride_step * (iteration // sched.stride_interval))


def stride_stage(iteration: int, sched: TrainingSchedule) -> int:
    """Index of the distinct stride value in effect (0 for the initial stride)."""
    if sched.stride_step == 0:
        return 0
    stage = iteration // sched.stride_interval
    last = math.ceil((sched.stride_init - sched.stride_min) / sched.stride_step)
    return min(stage, last)


def omega_at(iteration: int, sched: TrainingSchedule) -> float:
    frac = min(iteration / sched.ramp, 1.0)
    return sched.omega_init + (sched.omega_max - sched.omega_init) * frac


def weights_at(iteration: int, sched: TrainingSchedule) -> LossWeights:
    """Geometry and smoothness weights are constant; the semantic pair anneals linearly.

    With the ``prose`` assignment the global-prior weight starts at
    ``lambda_semantic`` and decays to 0 while the adversarial weight rises;
    ``printed`` swaps the two.
    """
    frac = min(iteration / sched.total_iterations, 1.0)
    rising = sched.lambda_semantic * frac
    falling = sched.lambda_semantic - rising
    if sched.lambda_assignment == "prose":
        adv, cls_ = rising, falling
    else:
        adv, cls_ = falling, rising
    return LossWeights(geo=sched.lambda_geo, adv=adv, cls=cls_, smooth=sched.lambda_smooth)


def lr_at(iteration: int, sched: TrainingSchedule) -> tuple[float, float]:
    """``(field_lr, discriminator_lr)``; the field rate halves every ``lr_half_interval``."""
    lr = sched.lr_init * 0.5 ** (iteration // sched.lr_half_interval)
    return lr, sched.d_lr_ratio * lr


def should_reinit_discriminator(iteration: int, sched: TrainingSchedule) -> bool:
    if iteration <= 0:
        return False
    return stride_at(iteration, sched) != stride_at(iteration - 1, sched)


def schedule_table(sched: TrainingSchedule, every: int = 1000, start: int = 0, stop: int | None = None):
    """Rows of every scheduled quantity, one per ``every`` iterations (inclusive of ``stop``)."""
    stop = sched.total_iterations if stop is None else stop
    rows = []
    for it in range(start, stop + 1, every):
        w = weights_at(it, sched)
        lr, lr_d = lr_at(it, sched)
        rows.append({
            "iteration": it,
            "stride": stride_at(it, sched),
            "omega_deg": math.degrees(omega_at(it, sched)),
            "lambda_geo": w.geo,
            "lambda_adv": w.adv,
            "lambda_cls": w.cls,
            "lambda_smooth": w.smooth,
            "lr_field": lr,
            "lr_disc": lr_d,
            "reinit_disc": should_reinit_discriminator(it, sched),
        })
    return rows
