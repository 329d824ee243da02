import logging
from dataclasses import dataclass, field

import numpy as np

from errors import ConfigError
from settings import ALPHA, CLIP_HI, CLIP_LO, EPS_RATIO, LARGE_BATCH, TAU, TAU_LARGE_BATCH

logger = logging.getLogger(__name__)


def default_tau(batch_size):
    '''Shorter refresh interval for very large global batches'''
    return TAU_LARGE_BATCH if batch_size > LARGE_BATCH else TAU


@dataclass
class ModulatorState:
    '''Per-module learning-rate multipliers mu and their refresh policy.

    mu starts at 1, is refreshed every tau iterations (never at t=0) and is
    kept inside [clip_lo, clip_hi]; the anchor module's mu is always 1.
    '''
    partition: object
    mu: np.ndarray = None
    tau: int = TAU
    alpha: float = ALPHA
    clip_lo: float = CLIP_LO
    clip_hi: float = CLIP_HI
    eps_ratio: float = EPS_RATIO
    enabled: bool = True
    updates: int = field(default=0)

    def __post_init__(self):
        if self.mu is None:
            self.mu = np.ones(self.partition.h)
        if self.tau < 1:
            raise ConfigError(f'tau must be a positive interval, got {self.tau}')
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f'alpha must lie in [0, 1), got {self.alpha}')
        if not 0.0 < self.clip_lo <= 1.0 <= self.clip_hi:
            raise ConfigError(f'clip bounds must satisfy 0 < clip_lo <= 1 <= clip_hi, got [{self.clip_lo}, {self.clip_hi}]')
        if self.eps_ratio < 0:
            raise ConfigError(f'eps_ratio must be >= 0, got {self.eps_ratio}')

    @property
    def anchor(self):
        return self.partition.anchor_index

    @property
    def names(self):
        return self.partition.names

    def is_update_step(self, t):
        return t > 0 and t % self.tau == 0

    def due(self, t):
        return self.enabled and self.is_update_step(t)

    def effective_lr(self, eta):
        return eta * self.mu


def compute_mu(phi, state):
    '''Clipped sqrt((phi_anchor + eps) / (phi_i + eps)) for every module'''
    if list(phi.names) != list(state.names):
        raise ConfigError(f'phi covers modules {phi.names}, partition has {state.names}')
    values = np.asarray(phi.phi, dtype=np.float64)
    anchor = state.anchor
    with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
        raw = np.sqrt((values[anchor] + state.eps_ratio) / (values + state.eps_ratio))
    # nan only arises from inf/inf; treat it as no information
    raw = np.where(np.isnan(raw), 1.0, raw)
    raw = np.clip(raw, state.clip_lo, state.clip_hi)
    raw[anchor] = 1.0
    return raw


def smooth_mu(state, raw_mu):
    '''Moving average mu <- alpha mu + (1 - alpha) raw'''
    smoothed = state.alpha * state.mu + (1.0 - state.alpha) * np.asarray(raw_mu, dtype=np.float64)
    clipped = np.clip(smoothed, state.clip_lo, state.clip_hi)
    if not np.allclose(clipped, smoothed, rtol=0.0, atol=1e-12):
        logger.warning('Smoothed mu left the clip range; raw mu was not clipped')
    clipped[state.anchor] = 1.0
    state.mu = clipped
    state.updates += 1


def force_unit_mu(state):
    '''Pin every mu to 1 and stop refreshing; the optimizers reduce to plain SGD/AdamW'''
    state.mu = np.ones(state.partition.h)
    state.enabled = False


def enable_updates(state):
    state.enabled = True
