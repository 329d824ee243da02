import logging

import numpy as np

from errors import NonFiniteError, TapeError
from misc_functions import is_finite
from settings import FD_STEP

logger = logging.getLogger(__name__)


def _evaluate(model):
    loss = model()
    value = loss.item()
    if not is_finite(value):
        raise NonFiniteError('loss during gradient check')
    return loss, value


def grad_check(model, params, probe_count, step=FD_STEP, seed=0):
    '''Largest relative error between analytic and central-difference gradients.

    model is a closure returning a scalar loss Tensor built on a fresh tape.
    Frozen parameters are never probed. A probe whose +/- perturbation flips
    the sign of any relu input sits on a kink and is skipped.
    Relative error is |analytic - numeric| / max(1, |analytic|).
    '''
    if probe_count < 1:
        raise ValueError(f'probe_count must be at least 1, got {probe_count}')

    trainable = [p for p in params if p.requires_grad]
    if not trainable:
        raise ValueError('no trainable parameters to probe')

    loss, _ = _evaluate(model)
    if loss._tape is None:
        raise TapeError('model must return a loss produced by tape primitives')
    analytic = loss._tape.gradients(loss, trainable)

    sizes = np.array([p.size for p in trainable])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    probes = rng.choice(offsets[-1], size=min(probe_count, offsets[-1]), replace=False)

    worst = 0.0
    skipped = 0
    for flat_index in np.sort(probes):
        which = int(np.searchsorted(offsets, flat_index, side='right') - 1)
        local = int(flat_index - offsets[which])
        flat = trainable[which].data.reshape(-1)
        original = flat[local]

        flat[local] = original + step
        loss_plus, f_plus = _evaluate(model)
        flat[local] = original - step
        loss_minus, f_minus = _evaluate(model)
        flat[local] = original

        if not np.array_equal(loss_plus._tape.relu_signature(), loss_minus._tape.relu_signature()):
            skipped += 1
            continue

        numeric = (f_plus - f_minus) / (2.0 * step)
        exact = analytic[which].reshape(-1)[local]
        worst = max(worst, abs(exact - numeric) / max(1.0, abs(exact)))

    if skipped:
        logger.warning(f'Skipped {skipped} of {len(probes)} probes at relu kinks')
    return worst
