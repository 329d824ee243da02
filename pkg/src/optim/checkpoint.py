import io
import logging
import os
import tempfile
from pathlib import Path

import numpy as np
import yaml

from errors import ConfigError, OutputError
from optim.agvm_optimizers import AdamWState, SgdState
from optim.modulator import ModulatorState
from settings import CHECKPOINT_VERSION

logger = logging.getLogger(__name__)


def _buffer_arrays(prefix, buffers):
    out = {}
    for i, buffer in enumerate(buffers):
        if buffer is not None:
            out[f'{prefix}_{i}'] = buffer
    return out


def save_checkpoint(path, params, state, mod, config=None):
    '''Write step, parameters, optimizer buffers, mu and config to one .npz record.

    The file is written next to its destination and moved into place, so an
    interrupted save never leaves a truncated checkpoint behind.
    '''
    path = Path(path)
    kind = 'adamw' if isinstance(state, AdamWState) else 'sgd'
    arrays = {
        'format_version': np.array(CHECKPOINT_VERSION),
        'kind': np.array(kind),
        'step': np.array(state.t),
        'beta1': np.array(state.beta1),
        'weight_decay': np.array(state.weight_decay),
        'mu': mod.mu,
        'modules': np.array(mod.names),
        'modulator': np.array([mod.tau, mod.alpha, mod.clip_lo, mod.clip_hi, mod.eps_ratio]),
        'enabled': np.array(mod.enabled),
        'updates': np.array(mod.updates),
        'config': np.array(yaml.safe_dump(config or {}, sort_keys=True)),
    }
    arrays.update({f'param_{i}': p.data for i, p in enumerate(params)})
    arrays.update(_buffer_arrays('m', state.m))
    if kind == 'adamw':
        arrays['beta2'] = np.array(state.beta2)
        arrays['eps_adam'] = np.array(state.eps_adam)
        arrays.update(_buffer_arrays('v', state.v))

    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    try:
        handle, tmp_name = tempfile.mkstemp(dir=path.parent or '.', prefix=f'.{path.name}.')
        with os.fdopen(handle, 'wb') as f:
            f.write(buffer.getvalue())
        os.replace(tmp_name, path)
    except OSError as e:
        raise OutputError(path, e.strerror or str(e)) from e
    logger.info(f'Saved {kind} checkpoint at step {state.t} to {path}')


def load_checkpoint(path, params, partition):
    '''Restore parameters in place and rebuild (optimizer state, modulator state, config)'''
    with np.load(path, allow_pickle=False) as record:
        version = int(record['format_version'])
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f'checkpoint {path} has format_version {version}, expected {CHECKPOINT_VERSION}')
        names = [str(n) for n in record['modules']]
        if names != partition.names:
            raise ConfigError(f'checkpoint modules {names} do not match the model partition {partition.names}')
        if len(params) != len(partition.shapes):
            raise ConfigError(f'checkpoint holds {len(partition.shapes)} parameters, got {len(params)}')

        for i, p in enumerate(params):
            p.data = record[f'param_{i}'].copy()

        def buffers(prefix):
            return [record[f'{prefix}_{i}'].copy() if f'{prefix}_{i}' in record.files else None
                    for i in range(len(params))]

        kind = str(record['kind'])
        common = dict(beta1=float(record['beta1']), weight_decay=float(record['weight_decay']),
                      t=int(record['step']))
        if kind == 'adamw':
            state = AdamWState(m=buffers('m'), v=buffers('v'), beta2=float(record['beta2']),
                               eps_adam=float(record['eps_adam']), **common)
        else:
            state = SgdState(m=buffers('m'), **common)

        tau, alpha, clip_lo, clip_hi, eps_ratio = record['modulator'].tolist()
        mod = ModulatorState(partition, mu=record['mu'].copy(), tau=int(tau), alpha=alpha, clip_lo=clip_lo,
                             clip_hi=clip_hi, eps_ratio=eps_ratio, enabled=bool(record['enabled']),
                             updates=int(record['updates']))
        config = yaml.safe_load(str(record['config']))

    return state, mod, config
