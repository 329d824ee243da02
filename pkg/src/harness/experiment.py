import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import pandas as pd
from tqdm import tqdm

from errors import NonFiniteError
from misc_functions import is_finite
from models import batch_gradient, build_model, half_batch_gradients, make_dataset, make_perturbation
from optim import (
    ModulatorState, agvm_adamw_step, agvm_sgd_step, clip_gradients, default_tau, force_unit_mu,
    init_adamw_state, init_sgd_state, save_checkpoint,
)
from harness.schedules import Schedule, lr_at
from settings import EPS_RATIO, SHOW_PROGRESS, TRACE_COLUMNS
from variance import groups_from_halves, phi_estimate

logger = logging.getLogger(__name__)

# seed streams; model init uses [seed, 0..2]
BATCH_STREAM = 3
PERTURBATION_STREAM = 4


@dataclass
class TraceRow:
    iter: int
    module: str
    phi: float
    mu: float
    eff_lr: float
    loss: float
    grad_norm_sq: float


@dataclass
class ExperimentResult:
    final_loss: float
    trace: List[TraceRow]
    summary: Dict[str, object] = field(default_factory=dict)


def trace_to_frame(trace):
    return pd.DataFrame([vars(row) for row in trace], columns=TRACE_COLUMNS)


def head_modules(names, anchor_index=0):
    '''Modules compared against the anchor: every head, else the last non-anchor module'''
    heads = [name for name in names if name.startswith('head')]
    if heads:
        return heads
    others = [name for i, name in enumerate(names) if i != anchor_index]
    return others[-1:]


class _Setup:
    '''Model, data and optimizer state shared by training and tracing'''

    def __init__(self, config):
        config.validate()
        self.config = config
        self.model_config = config.model_config()
        self.model = build_model(self.model_config, config.seed)
        self.inputs, self.targets = make_dataset(
            config.n, config.input_dim, config.output_dim, config.noise_std, config.data_seed)
        self.partition = self.model.partition
        self.schedule = Schedule.from_config(config)
        self.tau = config.tau if config.tau is not None else default_tau(config.batch_size)
        self.mod = ModulatorState(
            self.partition, tau=self.tau, alpha=config.alpha, clip_lo=config.clip_lo, clip_hi=config.clip_hi,
            eps_ratio=config.eps_ratio,
        )
        if not config.agvm:
            force_unit_mu(self.mod)
        if config.optimizer == 'adamw':
            self.state = init_adamw_state(self.model.params, self.partition, config.beta1, config.beta2,
                                          config.eps_adam, config.weight_decay)
            self.step = agvm_adamw_step
        else:
            self.state = init_sgd_state(self.model.params, self.partition, config.beta1, config.weight_decay)
            self.step = agvm_sgd_step
        self.batch_rng = np.random.default_rng([config.seed, BATCH_STREAM])

    def draw(self, t):
        idx = self.batch_rng.choice(self.config.n, size=self.config.batch_size, replace=False)
        perturbation = make_perturbation(self.model_config, self.config.batch_size,
                                         self.model_config.mask_fraction, [self.config.seed, PERTURBATION_STREAM, t])
        return self.inputs[idx], self.targets[idx], perturbation

    def grouped(self, x, y, perturbation):
        '''Two half-batch passes: mean loss, split-half groups and the flat mini-batch gradient'''
        loss, first, second = half_batch_gradients(self.model, x, y, perturbation, workers=self.config.workers)
        groups = groups_from_halves(first, second, self.partition, x.shape[0])
        return loss, groups, groups.full_gradient()

    def rows(self, t, phi_omitted, eta, loss, flat):
        norms = [float(np.dot(flat[s], flat[s])) for s in self.partition.slices()]
        lrs = self.mod.effective_lr(eta)
        return [
            TraceRow(t, name, float(phi_omitted[k]), float(self.mod.mu[k]), float(lrs[k]),
                     float(loss), norms[k])
            for k, name in enumerate(self.partition.names)
        ]


def summarize(trace, names, anchor_index=0, iterations=0, eps=EPS_RATIO):
    '''Time-averaged statistics over the trace iterations'''
    summary = {}
    frame = trace_to_frame(trace)
    if frame.empty:
        return summary
    phi = frame.pivot(index='iter', columns='module', values='phi')[names]
    mu = frame.pivot(index='iter', columns='module', values='mu')[names]
    anchor = names[anchor_index]
    heads = head_modules(names, anchor_index)

    for name in names:
        summary[f'phi_mean.{name}'] = float(phi[name].mean())
    for name in names:
        summary[f'abs_log_mu.{name}'] = float(np.log(mu[name]).abs().mean())

    gaps = np.log((phi[[anchor]].to_numpy() + eps) / (phi[heads].to_numpy() + eps)).mean(axis=1)
    summary['phi_gap'] = float(gaps.mean())
    modulated = mu.to_numpy() ** 2 * phi.to_numpy() + eps
    summary['phi_ratio'] = float((modulated.max(axis=1) / modulated.min(axis=1)).mean())

    head_log_mu = np.log(mu[heads]).abs().mean(axis=1)
    updates = head_log_mu[head_log_mu.index > 0]
    half = iterations / 2.0
    first = updates[updates.index <= half]
    second = updates[updates.index > half]
    summary['head_abs_log_mu_first_half'] = float(first.mean()) if len(first) else math.nan
    summary['head_abs_log_mu_second_half'] = float(second.mean()) if len(second) else math.nan
    return summary


def run_experiment(config, progress=SHOW_PROGRESS, checkpoint_path=None):
    '''Train one model and trace phi and mu at iteration 0 and every tau iterations.

    Iteration t >= 1 performs optimizer step t at learning rate lr_at(t - 1).
    Trace iterations run one backward pass per half batch so the split-half
    groups exist; other iterations use a single batched backward pass.
    '''
    setup = _Setup(config)
    model, mod = setup.model, setup.mod
    b = config.batch_size
    logger.info(f'Training {config.optimizer} with modules {setup.partition.names}, b={b}, '
                f'T={config.iterations}, tau={setup.tau}, agvm={"on" if config.agvm else "off"}, '
                f'ablation={config.ablation}')

    trace = []
    x, y, perturbation = setup.draw(0)
    loss, groups, flat = setup.grouped(x, y, perturbation)
    trace.extend(setup.rows(0, phi_estimate(groups).omitting_lr(), lr_at(setup.schedule, 0, b), loss, flat))

    diverged_at = None
    iterations_run = 0
    for t in tqdm(range(1, config.iterations + 1), disable=not progress, desc='train'):
        eta = lr_at(setup.schedule, t - 1, b)
        x, y, perturbation = setup.draw(t)
        traced = mod.is_update_step(t)
        if traced:
            loss, groups, flat = setup.grouped(x, y, perturbation)
        else:
            loss, flat = batch_gradient(model, x, y, perturbation)
            groups = None

        if not is_finite(loss):
            diverged_at = t
            logger.warning(f'Loss became non-finite at iteration {t}; stopping the run')
            break
        grads = setup.partition.unflatten(flat)
        if config.grad_clip is not None:
            grads = clip_gradients(grads, config.grad_clip)
        try:
            phi = setup.step(model.params, grads, groups, eta, setup.state, mod)
        except NonFiniteError as e:
            diverged_at = t
            logger.warning(f'Stopping the run: {e}')
            break
        iterations_run = t

        if traced:
            trace.extend(setup.rows(t, phi.omitting_lr(), eta, loss, flat))

    if diverged_at is None:
        final_loss = model.loss_fn(setup.inputs, setup.targets).item()
        if not is_finite(final_loss):
            diverged_at = iterations_run
    if diverged_at is not None:
        final_loss = math.nan
    elif checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model.params, setup.state, mod, config.to_dict())

    summary = summarize(trace, setup.partition.names, setup.partition.anchor_index, config.iterations)
    summary.update({
        'final_loss': final_loss,
        'diverged': diverged_at is not None,
        'diverged_at': diverged_at if diverged_at is not None else math.nan,
        'iterations_run': iterations_run,
    })
    logger.info(f'Finished after {iterations_run} iterations, final loss {final_loss:.6g}')
    return ExperimentResult(final_loss=final_loss, trace=trace, summary=summary)


def variance_trace(config, progress=SHOW_PROGRESS):
    '''Phi at the initial parameters on a fresh batch every tau iterations; no updates'''
    setup = _Setup(config)
    b = config.batch_size
    trace = []
    for t in tqdm(range(0, config.iterations + 1, setup.tau), disable=not progress, desc='variance'):
        x, y, perturbation = setup.draw(t)
        loss, groups, flat = setup.grouped(x, y, perturbation)
        trace.extend(setup.rows(t, phi_estimate(groups).omitting_lr(), lr_at(setup.schedule, t, b), loss, flat))
    logger.info(f'Traced {len(trace) // setup.partition.h} batches at the initial parameters')
    return trace
