import logging
import math
from concurrent.futures import ThreadPoolExecutor

import pandas as pd
from tqdm import tqdm

from errors import ConfigError
from harness.experiment import run_experiment
from settings import SHOW_PROGRESS

logger = logging.getLogger(__name__)

ABLATION_ARMS = [
    ('shared', 'none'),
    ('independent_heads', 'independent_heads'),
    ('no_pyramid', 'no_pyramid'),
    ('mask_0.75', 'mask(0.75)'),
    ('proposals_1', 'proposals(1)'),
    ('proposals_8', 'proposals(8)'),
    ('freeze_head', 'freeze_head'),
]

# None runs the optimizer without modulation
SWEEP_SETTINGS = [None, (5, 0.95), (5, 0.97), (10, 0.97), (20, 0.97), (20, 0.98)]


def _map_in_order(run, items, workers, progress, desc):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(tqdm(pool.map(run, items), total=len(items), disable=not progress, desc=desc))
    return [run(item) for item in tqdm(items, disable=not progress, desc=desc)]


def arm_config(base_config, ablation):
    '''Ablation arm of a shared-head pyramid config; modulation off so raw phi is compared'''
    return base_config.with_updates(ablation=ablation, agvm=False)


def ablation_suite(base_config, arms=None, workers=1, progress=SHOW_PROGRESS):
    '''Run every ablation arm with the base seed and tabulate phi-gap per arm'''
    if base_config.head_mode != 'shared' or not base_config.pyramid or base_config.ablation != 'none':
        raise ConfigError('the ablation suite starts from a shared-head pyramid config with ablation=none')
    if base_config.proposal_noise <= 0:
        raise ConfigError('the ablation suite needs proposal_noise > 0, otherwise proposal replicas are identical')
    arms = ABLATION_ARMS if arms is None else arms

    def run(arm):
        label, ablation = arm
        result = run_experiment(arm_config(base_config, ablation))
        logger.info(f'Arm {label}: phi_gap={result.summary.get("phi_gap", math.nan):.4f}')
        return {'arm': label, 'ablation': ablation, 'seed': base_config.seed, **result.summary}

    rows = _map_in_order(run, list(arms), workers, progress, 'ablation')
    return pd.DataFrame(rows)


def sensitivity_sweep(base_config, settings=None, workers=1, progress=SHOW_PROGRESS):
    '''Final loss and phi-ratio over a grid of (tau, alpha) settings with identical seeds'''
    settings = SWEEP_SETTINGS if settings is None else settings

    def run(setting):
        if setting is None:
            config = base_config.with_updates(agvm=False)
            label = 'agvm_off'
        else:
            tau, alpha = setting
            config = base_config.with_updates(agvm=True, tau=tau, alpha=alpha)
            label = f'tau_{tau}_alpha_{alpha}'
        summary = run_experiment(config).summary
        return {
            'setting': label,
            'agvm': config.agvm,
            'tau': setting[0] if setting else math.nan,
            'alpha': setting[1] if setting else math.nan,
            'final_loss': summary['final_loss'],
            'diverged': summary['diverged'],
            'phi_ratio': summary.get('phi_ratio', math.nan),
        }

    return pd.DataFrame(_map_in_order(run, list(settings), workers, progress, 'sweep'))
