import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from errors import ConfigError, ShapeError
from settings import EPS_NORM

logger = logging.getLogger(__name__)


@dataclass
class GroupedGradients:
    '''Per-module half-batch means G1 (odd samples), G2 (even samples) and
    the full mean g = (G1 + G2) / 2, for a batch of size b'''
    names: List[str]
    g1: List[np.ndarray]
    g2: List[np.ndarray]
    g: List[np.ndarray]
    b: int

    def scaled(self, divisors):
        '''Same groups with each module's vectors divided elementwise by divisors[i]'''
        g1 = [a / d for a, d in zip(self.g1, divisors)]
        g2 = [a / d for a, d in zip(self.g2, divisors)]
        return GroupedGradients(self.names, g1, g2, [(a + c) / 2.0 for a, c in zip(g1, g2)], self.b)

    def full_gradient(self):
        return np.concatenate(self.g)


@dataclass
class PhiEstimate:
    names: List[str]
    phi: np.ndarray
    cosine: np.ndarray
    eta: float

    def omitting_lr(self):
        return 1.0 - self.cosine

    def as_dict(self):
        return dict(zip(self.names, self.phi))


def groups_from_halves(first, second, partition, b):
    '''Split-half groups from the flat mean gradients of the two halves of a batch of size b'''
    if b < 2 or b % 2 != 0:
        raise ConfigError(f'split-half groups need an even batch of at least 2, got b={b}; drop or pad one sample')
    total = sum(partition.module_sizes())
    for half in (first, second):
        if np.shape(half) != (total,):
            raise ShapeError('groups_from_halves', np.shape(half), (total,), 'gradient length differs from the partition')
    g1 = [first[s] for s in partition.slices()]
    g2 = [second[s] for s in partition.slices()]
    return GroupedGradients(partition.names, g1, g2, [(a + c) / 2.0 for a, c in zip(g1, g2)], b)


def split_groups(per_sample_grads, partition):
    '''Interleaved split: G1 averages samples 1, 3, 5, ... and G2 samples 2, 4, 6, ...'''
    grads = np.asarray(per_sample_grads, dtype=np.float64)
    if grads.ndim != 2:
        raise ShapeError('split_groups', grads.shape, (), 'expected a (batch, parameters) array')
    b = grads.shape[0]
    total = sum(partition.module_sizes())
    if grads.shape[1] != total:
        raise ShapeError('split_groups', grads.shape, (b, total), 'gradient length differs from the partition')
    if b < 2 or b % 2 != 0:
        raise ConfigError(f'split_groups needs an even batch of at least 2, got b={b}; drop or pad one sample')
    return groups_from_halves(grads[0::2].mean(axis=0), grads[1::2].mean(axis=0), partition, b)


def cosine_similarity(a, b, eps_norm=EPS_NORM):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError('cosine_similarity', a.shape, b.shape)
    norm_a = np.sqrt(np.dot(a, a))
    norm_b = np.sqrt(np.dot(b, b))
    if norm_a < eps_norm or norm_b < eps_norm:
        # vanishing signal counts as uncorrelated, the largest phi the data allows
        return 0.0
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def phi_estimate(groups, eta=1.0):
    '''phi = eta^2 (1 - cos(G1, G2)) per module; eta=1 omits the learning rate'''
    if eta < 0:
        raise ValueError(f'eta must be >= 0, got {eta}')
    cosine = np.array([cosine_similarity(a, b) for a, b in zip(groups.g1, groups.g2)])
    phi = (eta * eta) * (1.0 - cosine)
    return PhiEstimate(list(groups.names), phi, cosine, eta)


def full_variance_estimate(groups, n, eta=1.0):
    '''Single-iteration plug-in for Var(eta g) = (n-b)/(2n-b) phi E||g||^2'''
    b = groups.b
    if n < b:
        raise ConfigError(f'dataset size n={n} is smaller than the batch b={b}')
    factor = (n - b) / (2.0 * n - b)
    phi = phi_estimate(groups, eta).phi
    norms = np.array([np.dot(g, g) for g in groups.g])
    return factor * phi * norms
