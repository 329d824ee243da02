import math
from dataclasses import dataclass, field
from typing import List

from errors import ConfigError
from settings import POLY_POWER, SQRT_THRESHOLD


@dataclass
class Schedule:
    base_lr: float
    base_batch: int
    total_iters: int
    warmup_iters: int = 0
    scaling: str = 'linear-then-sqrt'
    sqrt_threshold: int = SQRT_THRESHOLD
    decay: str = 'none'
    milestones: List[int] = field(default_factory=list)
    decay_factor: float = 0.1
    poly_power: float = POLY_POWER

    @classmethod
    def from_config(cls, config):
        return cls(
            base_lr=config.base_lr, base_batch=config.base_batch, total_iters=config.iterations,
            warmup_iters=config.warmup_iters, scaling=config.scaling, sqrt_threshold=config.sqrt_threshold,
            decay=config.decay, milestones=list(config.milestones), decay_factor=config.decay_factor,
            poly_power=config.poly_power,
        )


def peak_lr(schedule, b):
    '''Batch-scaled peak learning rate.

    Linear in b up to sqrt_threshold; beyond it the growth is sqrt(b / threshold)
    for linear-then-sqrt and sqrt(1.5) per doubling for linear-then-smooth.
    '''
    if schedule.scaling == 'linear':
        return schedule.base_lr * b / schedule.base_batch
    threshold = schedule.sqrt_threshold
    linear = schedule.base_lr * min(b, threshold) / schedule.base_batch
    if b <= threshold:
        return linear
    if schedule.scaling == 'linear-then-sqrt':
        return linear * math.sqrt(b / threshold)
    if schedule.scaling == 'linear-then-smooth':
        return linear * 1.5 ** (0.5 * math.log2(b / threshold))
    raise ConfigError(f'unknown scaling mode {schedule.scaling!r}')


def lr_at(schedule, t, b):
    '''Learning rate at iteration t for global batch b: warmup, then decay'''
    if t > schedule.total_iters:
        raise ConfigError(f'iteration {t} is past the schedule end {schedule.total_iters}')
    peak = peak_lr(schedule, b)
    if schedule.warmup_iters > 0 and t < schedule.warmup_iters:
        return peak * max(t, 1) / schedule.warmup_iters

    if schedule.decay == 'multistep':
        passed = sum(1 for m in schedule.milestones if t >= m)
        return peak * schedule.decay_factor ** passed
    if schedule.decay == 'poly':
        # decay starts where warmup ends
        span = max(schedule.total_iters - schedule.warmup_iters, 1)
        return peak * (1.0 - (t - schedule.warmup_iters) / span) ** schedule.poly_power
    if schedule.decay == 'none':
        return peak
    raise ConfigError(f'unknown decay mode {schedule.decay!r}')
