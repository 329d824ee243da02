import logging
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from errors import ConfigError, NonFiniteError
from misc_functions import is_finite
from optim.modulator import compute_mu, smooth_mu
from settings import BETA1, BETA2, EPS_ADAM
from variance import phi_estimate

logger = logging.getLogger(__name__)


@dataclass
class SgdState:
    m: List[Optional[np.ndarray]]
    beta1: float = BETA1
    weight_decay: float = 0.0
    t: int = 0


@dataclass
class AdamWState:
    m: List[Optional[np.ndarray]]
    v: List[Optional[np.ndarray]]
    beta1: float = BETA1
    beta2: float = BETA2
    eps_adam: float = EPS_ADAM
    weight_decay: float = 0.0
    t: int = 0


def _buffers(params, partition):
    trainable = set(partition.param_ids)
    return [np.zeros_like(p.data) if i in trainable else None for i, p in enumerate(params)]


def init_sgd_state(params, partition, beta1=BETA1, weight_decay=0.0):
    if not 0.0 <= beta1 < 1.0:
        raise ConfigError(f'beta1 must lie in [0, 1), got {beta1}')
    if weight_decay < 0:
        raise ConfigError(f'weight_decay must be >= 0, got {weight_decay}')
    return SgdState(m=_buffers(params, partition), beta1=beta1, weight_decay=weight_decay)


def init_adamw_state(params, partition, beta1=BETA1, beta2=BETA2, eps_adam=EPS_ADAM, weight_decay=0.0):
    for label, value in (('beta1', beta1), ('beta2', beta2)):
        if not 0.0 <= value < 1.0:
            raise ConfigError(f'{label} must lie in [0, 1), got {value}')
    if eps_adam < 0 or weight_decay < 0:
        raise ConfigError('eps_adam and weight_decay must be >= 0')
    return AdamWState(m=_buffers(params, partition), v=_buffers(params, partition), beta1=beta1, beta2=beta2,
                      eps_adam=eps_adam, weight_decay=weight_decay)


def clip_gradients(grads, max_norm):
    '''Rescale all gradients together so their global L2 norm is at most max_norm'''
    total = np.sqrt(np.sum([np.sum(g * g) for g in grads if g is not None]))
    if max_norm is None or max_norm <= 0 or total <= max_norm:
        return grads
    scale = max_norm / total
    return [None if g is None else g * scale for g in grads]


def _check_gradients(grads, mod, t):
    for name, ids in mod.partition.modules:
        for i in ids:
            if not is_finite(grads[i]):
                raise NonFiniteError('gradient', module=name, iteration=t)


def _refresh(groups, eta_t, mod, t):
    '''Phi on every interval step, plus a copy of mod whose mu has moved when due.

    mod itself is left alone so a failed step can be dropped without a trace.
    '''
    staged = replace(mod)
    if not mod.is_update_step(t):
        return None, staged
    if groups is None:
        if mod.due(t):
            raise ConfigError(f'iteration {t} refreshes mu but no grouped gradients were supplied')
        return None, staged
    phi = phi_estimate(groups, eta_t)
    if staged.due(t):
        smooth_mu(staged, compute_mu(phi, staged))
    return phi, staged


def _check_update(weights, ids, name, t):
    if not all(is_finite(weights[i]) for i in ids):
        raise NonFiniteError('update', module=name, iteration=t)


def _commit(params, weights, mod, staged):
    for i, value in weights.items():
        params[i].data = value
    mod.mu = staged.mu
    mod.updates = staged.updates


def agvm_sgd_step(params, grads, groups, eta_t, sgd, mod):
    '''One AGVM-enabled SGD iteration; returns the phi estimate on interval steps.

    m <- beta1 m + (1 - beta1)(g + lambda w), then w_i <- w_i - eta_t mu_i m_i.
    Phi is taken from the raw gradients, before weight decay. If any module's
    update is non-finite nothing is written: parameters, momentum, mu and t
    all keep their values from before the call.
    '''
    if eta_t < 0:
        raise ConfigError(f'learning rate must be >= 0, got {eta_t}')
    t = sgd.t + 1
    _check_gradients(grads, mod, t)

    phi, staged = _refresh(groups, eta_t, mod, t)
    lrs = staged.effective_lr(eta_t)

    momentum = {}
    weights = {}
    for k, (name, ids) in enumerate(mod.partition.modules):
        for i in ids:
            w = params[i].data
            momentum[i] = sgd.beta1 * sgd.m[i] + (1.0 - sgd.beta1) * (grads[i] + sgd.weight_decay * w)
            weights[i] = w - lrs[k] * momentum[i]
        _check_update(weights, ids, name, t)

    for i, value in momentum.items():
        sgd.m[i] = value
    _commit(params, weights, mod, staged)
    sgd.t = t
    return phi


def agvm_adamw_step(params, grads, groups, eta_t, adam, mod):
    '''One AGVM-enabled AdamW iteration; returns the phi estimate on interval steps.

    Phi is measured on the group gradients divided by sqrt(v_t + eps) using
    this step's v before bias correction. The update is
    w_i <- w_i - eta_t mu_i (r_i + lambda w_i) with r = m_hat / sqrt(v_hat + eps).
    Moments, parameters, mu and t are only written once every module's
    update is finite.
    '''
    if eta_t < 0:
        raise ConfigError(f'learning rate must be >= 0, got {eta_t}')
    t = adam.t + 1
    _check_gradients(grads, mod, t)

    first = {}
    second = {}
    for i in mod.partition.param_ids:
        g = grads[i]
        first[i] = adam.beta1 * adam.m[i] + (1.0 - adam.beta1) * g
        second[i] = adam.beta2 * adam.v[i] + (1.0 - adam.beta2) * (g * g)

    if groups is not None and mod.is_update_step(t):
        divisors = [
            np.concatenate([np.sqrt(second[i] + adam.eps_adam).reshape(-1) for i in ids])
            for _, ids in mod.partition.modules
        ]
        groups = groups.scaled(divisors)
    phi, staged = _refresh(groups, eta_t, mod, t)
    lrs = staged.effective_lr(eta_t)

    bias1 = 1.0 - adam.beta1 ** t
    bias2 = 1.0 - adam.beta2 ** t
    weights = {}
    for k, (name, ids) in enumerate(mod.partition.modules):
        for i in ids:
            w = params[i].data
            r = (first[i] / bias1) / np.sqrt(second[i] / bias2 + adam.eps_adam)
            weights[i] = w - lrs[k] * (r + adam.weight_decay * w)
        _check_update(weights, ids, name, t)

    for i in first:
        adam.m[i] = first[i]
        adam.v[i] = second[i]
    _commit(params, weights, mod, staged)
    adam.t = t
    return phi
