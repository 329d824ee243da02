import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from autograd import Tape, Tensor, add, concat, mask_select, matmul, relu, squared_error
from errors import ConfigError, ShapeError
from settings import FEATURE_NOISE

logger = logging.getLogger(__name__)

HEAD_MODES = ('shared', 'independent')


@dataclass(frozen=True)
class ModulePartition:
    '''Named parameter groups, one of which is the anchor.

    modules holds (name, parameter indices) pairs; shapes holds the shape of
    every model parameter so the flat layout (module order, then parameter
    order within a module) can be rebuilt.
    '''
    modules: Tuple[Tuple[str, Tuple[int, ...]], ...]
    shapes: Tuple[Tuple[int, ...], ...]
    anchor_index: int = 0

    def __post_init__(self):
        if len(self.modules) < 2:
            raise ConfigError(f'partition needs at least 2 modules, got {len(self.modules)}')
        if not 0 <= self.anchor_index < len(self.modules):
            raise ConfigError(f'anchor_index {self.anchor_index} outside [0, {len(self.modules)})')
        seen = [i for _, ids in self.modules for i in ids]
        if len(seen) != len(set(seen)):
            raise ConfigError('a parameter belongs to more than one module')

    @property
    def h(self):
        return len(self.modules)

    @property
    def names(self):
        return [name for name, _ in self.modules]

    @property
    def anchor(self):
        return self.modules[self.anchor_index][0]

    @property
    def param_ids(self):
        return [i for _, ids in self.modules for i in ids]

    def module_sizes(self):
        return [int(np.sum([math.prod(self.shapes[i]) for i in ids])) for _, ids in self.modules]

    def slices(self):
        out = []
        start = 0
        for size in self.module_sizes():
            out.append(slice(start, start + size))
            start += size
        return out

    def flatten(self, arrays):
        '''Concatenate per-parameter arrays (indexed by parameter id) in partition layout'''
        return np.concatenate([np.asarray(arrays[i], dtype=np.float64).reshape(-1) for i in self.param_ids])

    def flatten_trainable(self, arrays):
        '''Same as flatten, for a list holding only the trainable parameters in partition order'''
        return np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1) for a in arrays])

    def unflatten(self, flat):
        '''Split a flat vector back into a list indexed by parameter id (None for frozen)'''
        arrays = [None] * len(self.shapes)
        start = 0
        for i in self.param_ids:
            size = math.prod(self.shapes[i])
            arrays[i] = flat[start:start + size].reshape(self.shapes[i])
            start += size
        return arrays


@dataclass
class ModelConfig:
    input_dim: int = 8
    trunk_widths: List[int] = field(default_factory=lambda: [32, 16])
    levels: int = 3
    head_width: int = 16
    output_dim: int = 2
    head_mode: str = 'shared'
    pyramid: bool = True
    mask_fraction: float = 0.0
    proposals: int = 1
    proposal_noise: float = FEATURE_NOISE
    freeze_head: bool = False

    def validate(self):
        problems = []
        if self.input_dim < 1:
            problems.append(f'input_dim must be positive (got {self.input_dim})')
        if not self.trunk_widths or any(w < 1 for w in self.trunk_widths):
            problems.append(f'trunk_widths must be a non-empty list of positive widths (got {self.trunk_widths})')
        if self.levels < 1:
            problems.append(f'levels must be positive (got {self.levels})')
        if self.head_width < 1 or self.output_dim < 1:
            problems.append('head_width and output_dim must be positive')
        if self.head_mode not in HEAD_MODES:
            problems.append(f'head_mode must be one of {HEAD_MODES} (got {self.head_mode!r})')
        if not 0.0 <= self.mask_fraction < 1.0:
            problems.append(f'mask_fraction must lie in [0, 1) (got {self.mask_fraction})')
        if self.proposals < 1:
            problems.append(f'proposals must be positive (got {self.proposals})')
        if self.proposal_noise < 0:
            problems.append(f'proposal_noise must be >= 0 (got {self.proposal_noise})')
        if self.trunk_widths and self.pyramid:
            if self.trunk_widths[-1] % (2 ** (self.levels - 1)) != 0:
                problems.append(
                    f'trunk output width {self.trunk_widths[-1]} cannot be halved {self.levels - 1} times')
        if self.trunk_widths and not self.pyramid and self.trunk_widths[-1] != self.head_width:
            problems.append(
                f'without a pyramid the trunk output width ({self.trunk_widths[-1]}) must equal head_width ({self.head_width})')
        if self.head_mode == 'shared' and len(set(self.level_widths())) > 1:
            problems.append(f'shared head needs identical per-level widths (got {self.level_widths()})')
        if self.freeze_head and not self.pyramid:
            problems.append('freeze_head without a pyramid leaves a single trainable module')
        if problems:
            raise ConfigError('invalid model config: ' + '; '.join(problems))
        return self

    @property
    def level_count(self):
        return self.levels if self.pyramid else 1

    def level_widths(self):
        # pyramid laterals project every level to head_width
        return [self.head_width] * self.level_count

    @property
    def evaluations(self):
        return self.level_count * self.proposals

    @property
    def outputs_per_sample(self):
        return self.evaluations * self.output_dim


@dataclass
class Perturbation:
    '''Per-iteration loss mask and the feature noise of every head evaluation'''
    mask: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = None

    def rows(self, index):
        '''Restriction to the samples selected by index, a slice over the batch'''
        return Perturbation(
            mask=None if self.mask is None else self.mask[index],
            noise=None if self.noise is None else self.noise[:, index],
        )

    def row(self, j):
        return self.rows(slice(j, j + 1))


@dataclass
class Model:
    params: List[Tensor]
    partition: ModulePartition
    forward: Callable
    loss_fn: Callable
    config: object = None

    @property
    def names(self):
        return [p.name for p in self.params]

    @property
    def trainable(self):
        return [self.params[i] for i in self.partition.param_ids]

    def snapshot(self):
        return [p.data.copy() for p in self.params]

    def load(self, values):
        for p, v in zip(self.params, values):
            p.data = np.array(v, dtype=np.float64, order='C')


def _init_layer(rng, fan_in, fan_out, prefix):
    weight = Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)), requires_grad=True,
                    name=f'{prefix}.weight')
    bias = Tensor(np.zeros(fan_out), requires_grad=True, name=f'{prefix}.bias')
    return [weight, bias]


def _pool_pairs(width):
    pool = np.zeros((width, width // 2))
    pool[np.arange(width), np.arange(width) // 2] = 0.5
    return pool


def _linear(x, weight, bias):
    return add(matmul(x, weight), bias)


def build_model(config, seed):
    '''Trunk, optional pyramid laterals and a shared or per-level head.

    Each part draws from its own seed stream so the trunk is identical
    across head modes and ablations, and independent heads all start as
    copies of the shared head. Every head evaluation gets its own noisy copy
    of its level's features, so a shared head averages many partly
    independent evaluations per sample while the trunk sees each sample once.
    '''
    config.validate()
    params = []
    modules = []

    def take(tensors):
        ids = tuple(range(len(params), len(params) + len(tensors)))
        params.extend(tensors)
        return ids

    trunk_rng = np.random.default_rng([seed, 0])
    trunk_layers = []
    fan_in = config.input_dim
    for index, width in enumerate(config.trunk_widths):
        trunk_layers.append(_init_layer(trunk_rng, fan_in, width, f'trunk.{index}'))
        fan_in = width
    modules.append(('trunk', take([t for layer in trunk_layers for t in layer])))

    pools = []
    laterals = []
    if config.pyramid:
        pyramid_rng = np.random.default_rng([seed, 1])
        width = config.trunk_widths[-1]
        for level in range(config.levels):
            pools.append([_pool_pairs(width // 2 ** i) for i in range(level)])
            laterals.append(_init_layer(pyramid_rng, width // 2 ** level, config.head_width, f'pyramid.{level}'))
        modules.append(('pyramid', take([t for layer in laterals for t in layer])))

    head_count = 1 if config.head_mode == 'shared' else config.level_count
    heads = []
    for h in range(head_count):
        head_rng = np.random.default_rng([seed, 2])
        label = 'head' if config.head_mode == 'shared' else f'head_{h + 1}'
        layers = [
            _init_layer(head_rng, config.head_width, config.head_width, f'{label}.0'),
            _init_layer(head_rng, config.head_width, config.output_dim, f'{label}.1'),
        ]
        heads.append(layers)
        tensors = [t for layer in layers for t in layer]
        if config.freeze_head:
            for t in tensors:
                t.requires_grad = False
            params.extend(tensors)
        else:
            modules.append((label, take(tensors)))

    partition = ModulePartition(tuple(modules), tuple(tuple(p.data.shape) for p in params))

    def loss_fn(inputs, targets, perturbation=None):
        perturbation = perturbation or Perturbation()
        with Tape():
            h = Tensor(inputs)
            for weight, bias in trunk_layers:
                h = relu(_linear(h, weight, bias))

            if config.pyramid:
                features = []
                for level in range(config.levels):
                    f = h
                    for pool in pools[level]:
                        f = matmul(f, Tensor(pool))
                    f = relu(_linear(f, *laterals[level]))
                    features.append(f)
            else:
                features = [h]

            outputs = []
            for level, f in enumerate(features):
                (w0, b0), (w1, b1) = heads[0] if head_count == 1 else heads[level]
                for k in range(config.proposals):
                    fk = f
                    if perturbation.noise is not None:
                        fk = add(f, Tensor(perturbation.noise[level * config.proposals + k]))
                    outputs.append(_linear(relu(_linear(fk, w0, b0)), w1, b1))

            prediction = concat(outputs)
            target = np.tile(targets, (1, len(outputs)))
            if perturbation.mask is None:
                return squared_error(prediction, Tensor(target))
            return squared_error(mask_select(prediction, perturbation.mask), Tensor(target[perturbation.mask]))

    model = Model(params=params, partition=partition, forward=None, loss_fn=loss_fn, config=config)
    model.forward = lambda inputs, targets, mask_seed: forward_loss(
        model, inputs, targets, config.mask_fraction, mask_seed)
    logger.debug(f'Built model with modules {partition.names} and sizes {partition.module_sizes()}')
    return model


def build_linear_model(input_dim, modules=2, output_dim=1, seed=0, init_scale=0.0):
    '''Linear least-squares model whose input features split into equal blocks,
    one module per block. Weights start at zero unless init_scale is set.'''
    if modules < 2 or input_dim % modules != 0:
        raise ConfigError(f'input_dim {input_dim} must split into {modules} >= 2 equal blocks')
    block = input_dim // modules
    rng = np.random.default_rng(seed)
    params = [
        Tensor(init_scale * rng.normal(size=(block, output_dim)), requires_grad=True, name=f'block_{m + 1}.weight')
        for m in range(modules)
    ]
    partition = ModulePartition(
        tuple((f'block_{m + 1}', (m,)) for m in range(modules)),
        tuple(tuple(p.data.shape) for p in params),
    )

    def loss_fn(inputs, targets, perturbation=None):
        with Tape():
            prediction = None
            for m, weight in enumerate(params):
                part = matmul(Tensor(inputs[:, m * block:(m + 1) * block]), weight)
                prediction = part if prediction is None else add(prediction, part)
            return squared_error(prediction, Tensor(targets))

    model = Model(params=params, partition=partition, forward=None, loss_fn=loss_fn)
    model.forward = lambda inputs, targets, mask_seed=None: loss_fn(inputs, targets)
    return model


def make_perturbation(config, batch, mask_fraction, mask_seed):
    '''Fresh loss mask (at least one kept element per sample) and feature noise
    for every (level, proposal) evaluation of every sample'''
    rng = np.random.default_rng(mask_seed)
    mask = None
    noise = None
    if mask_fraction > 0:
        elements = config.outputs_per_sample
        kept = max(1, int(math.floor((1.0 - mask_fraction) * elements)))
        order = rng.random((batch, elements)).argsort(axis=1)
        mask = np.zeros((batch, elements), dtype=bool)
        np.put_along_axis(mask, order[:, :kept], True, axis=1)
    if config.proposal_noise > 0:
        noise = rng.normal(0.0, config.proposal_noise, size=(config.evaluations, batch, config.head_width))
    return Perturbation(mask=mask, noise=noise)


def forward_loss(model, inputs, targets, mask_fraction, mask_seed):
    inputs = np.atleast_2d(inputs)
    targets = np.atleast_2d(targets)
    if inputs.shape[0] != targets.shape[0]:
        raise ShapeError('forward_loss', inputs.shape, targets.shape, 'batch dimensions differ')
    if not 0.0 <= mask_fraction < 1.0:
        raise ConfigError(f'mask_fraction must lie in [0, 1), got {mask_fraction}')
    perturbation = make_perturbation(model.config, inputs.shape[0], mask_fraction, mask_seed)
    return model.loss_fn(inputs, targets, perturbation)


def batch_gradient(model, inputs, targets, perturbation=None):
    '''Mini-batch loss and flat gradient in partition layout'''
    loss = model.loss_fn(inputs, targets, perturbation)
    grads = loss._tape.gradients(loss, model.trainable)
    return loss.item(), model.partition.flatten_trainable(grads)


def per_sample_gradients(model, inputs, targets, perturbation=None, workers=1):
    '''Losses (b,) and flat gradients (b, D) from one backward pass per sample.

    Samples may be spread over a thread pool; results are collected in
    sample order, so the output does not depend on the pool size.
    '''
    def one(j):
        row = perturbation.row(j) if perturbation is not None else None
        return batch_gradient(model, inputs[j:j + 1], targets[j:j + 1], row)

    indices = range(inputs.shape[0])
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, indices))
    else:
        results = [one(j) for j in indices]

    losses = np.array([loss for loss, _ in results])
    grads = np.stack([g for _, g in results])
    return losses, grads


def half_batch_gradients(model, inputs, targets, perturbation=None, workers=1):
    '''Mean loss and the flat gradients of the two interleaved halves of a batch.

    Every sample contributes the same number of loss elements, so the gradient
    of a half's mean loss is the mean of that half's per-sample gradients.
    Two batched passes therefore give the split-half groups without a
    backward pass per sample.
    '''
    b = inputs.shape[0]
    if b < 2 or b % 2 != 0:
        raise ConfigError(f'split-half gradients need an even batch of at least 2, got b={b}')

    def half(start):
        index = slice(start, None, 2)
        rows = perturbation.rows(index) if perturbation is not None else None
        return batch_gradient(model, inputs[index], targets[index], rows)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            (loss_first, first), (loss_second, second) = pool.map(half, (0, 1))
    else:
        (loss_first, first), (loss_second, second) = half(0), half(1)
    return (loss_first + loss_second) / 2.0, first, second
