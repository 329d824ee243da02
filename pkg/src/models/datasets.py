import numpy as np

from errors import ConfigError


def make_dataset(n, input_dim, output_dim, noise_std, seed):
    '''Synthetic regression set: targets are a fixed random linear map of
    gaussian inputs plus gaussian noise. Returns (inputs, targets).'''
    if n < 2:
        raise ConfigError(f'dataset needs n >= 2, got {n}')
    if input_dim < 1 or output_dim < 1:
        raise ConfigError(f'dimensions must be positive, got input_dim={input_dim}, output_dim={output_dim}')
    if noise_std < 0:
        raise ConfigError(f'noise_std must be >= 0, got {noise_std}')

    rng = np.random.default_rng(seed)
    weights = rng.normal(0.0, 1.0 / np.sqrt(input_dim), size=(input_dim, output_dim))
    inputs = rng.normal(0.0, 1.0, size=(n, input_dim))
    targets = inputs @ weights
    if noise_std > 0:
        targets = targets + rng.normal(0.0, noise_std, size=(n, output_dim))

    return inputs, targets


def make_regression_benchmark(n, input_dim, noise_std, seed, input_mean=1.0):
    '''Least-squares set for checking the variance estimator.

    Inputs share a common mean and the true weights are uniform, so at
    w = 0 the per-sample gradients carry a strong common signal with close
    to isotropic noise around it.
    '''
    if n < 2:
        raise ConfigError(f'dataset needs n >= 2, got {n}')
    rng = np.random.default_rng(seed)
    weights = np.full((input_dim, 1), 1.0 / input_dim)
    inputs = input_mean + rng.normal(0.0, 1.0, size=(n, input_dim))
    targets = inputs @ weights
    if noise_std > 0:
        targets = targets + rng.normal(0.0, noise_std, size=(n, 1))
    return inputs, targets
