import logging

import numpy as np
import pandas as pd
from tqdm import tqdm

from errors import ConfigError
from models import per_sample_gradients
from settings import SHOW_PROGRESS
from variance.grad_variance import full_variance_estimate, split_groups

logger = logging.getLogger(__name__)


def _all_sample_gradients(model, dataset, w, workers):
    inputs, targets = dataset
    saved = model.snapshot()
    try:
        if w is not None:
            model.load(w)
        _, grads = per_sample_gradients(model, inputs, targets, workers=workers)
    finally:
        model.load(saved)
    return grads


def brute_force_variance_oracle(model, dataset, w, b, resamples, seed, replace=True, normalize=True,
                                workers=1, progress=SHOW_PROGRESS):
    '''Empirical E||g - grad f(w)||^2 per module over random mini-batches.

    grad f(w) is the exact full-dataset gradient. Each module's value is
    divided by its parameter count unless normalize is False.
    '''
    n = dataset[0].shape[0]
    if b > n:
        raise ConfigError(f'batch b={b} exceeds dataset size n={n}')
    if resamples < 100:
        raise ConfigError(f'the oracle needs at least 100 resamples, got {resamples}')

    grads = _all_sample_gradients(model, dataset, w, workers)
    full = grads.mean(axis=0)
    slices = model.partition.slices()
    rng = np.random.default_rng(seed)

    totals = np.zeros(len(slices))
    for _ in tqdm(range(resamples), disable=not progress, desc='oracle'):
        idx = rng.choice(n, size=b, replace=replace)
        deviation = grads[idx].mean(axis=0) - full
        totals += [np.dot(deviation[s], deviation[s]) for s in slices]

    result = totals / resamples
    if normalize:
        result = result / np.array(model.partition.module_sizes())
    return result


def compare_with_oracle(model, dataset, w=None, b=32, batches=200, resamples=2000, seed=0, workers=1,
                        progress=SHOW_PROGRESS):
    '''Average the split-half variance estimate over independent batches drawn
    without replacement and compare it with the brute-force oracle.'''
    n = dataset[0].shape[0]
    grads = _all_sample_gradients(model, dataset, w, workers)
    sizes = np.array(model.partition.module_sizes())
    rng = np.random.default_rng(seed)

    estimates = np.zeros(len(sizes))
    for _ in tqdm(range(batches), disable=not progress, desc='estimate'):
        idx = rng.choice(n, size=b, replace=False)
        groups = split_groups(grads[idx], model.partition)
        estimates += full_variance_estimate(groups, n) / sizes
    estimates /= batches

    oracle = brute_force_variance_oracle(model, dataset, w, b, resamples, seed + 1, replace=False,
                                         workers=workers, progress=progress)
    table = pd.DataFrame({
        'module': model.partition.names,
        'estimate': estimates,
        'oracle': oracle,
    })
    table['rel_error'] = (table['estimate'] - table['oracle']).abs() / table['oracle']
    logger.info(f'Variance estimate vs oracle, max relative error {table["rel_error"].max():.4f}')
    return table
