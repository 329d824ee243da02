import logging
import os
import re
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional

import yaml

from errors import ConfigError
from models import ModelConfig
from settings import (
    ALPHA, BETA1, BETA2, CLIP_HI, CLIP_LO, EPS_ADAM, EPS_RATIO, FEATURE_NOISE, POLY_POWER, SQRT_THRESHOLD,
)

logger = logging.getLogger(__name__)

SEED_ENV_VAR = 'AGVM_SEED'
OPTIMIZERS = ('sgd', 'adamw')
SCALINGS = ('linear', 'linear-then-sqrt', 'linear-then-smooth')
DECAYS = ('multistep', 'poly', 'none')
ABLATION_PATTERN = re.compile(
    r'^(none|independent_heads|no_pyramid|freeze_head|mask\((?P<p>[0-9.eE+-]+)\)|proposals\((?P<k>[0-9]+)\))$')


@dataclass
class ExperimentConfig:
    '''Every knob of one training run, as flat keys'''
    # model
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
    # dataset
    n: int = 2048
    noise_std: float = 0.1
    data_seed: int = 0
    # optimizer
    optimizer: str = 'sgd'
    beta1: float = BETA1
    beta2: float = BETA2
    eps_adam: float = EPS_ADAM
    weight_decay: float = 0.0
    grad_clip: Optional[float] = None
    # batching and schedule
    batch_size: int = 256
    iterations: int = 200
    base_lr: float = 0.01
    base_batch: int = 32
    warmup_iters: int = 0
    scaling: str = 'linear-then-sqrt'
    sqrt_threshold: int = SQRT_THRESHOLD
    decay: str = 'none'
    milestones: List[int] = field(default_factory=list)
    decay_factor: float = 0.1
    poly_power: float = POLY_POWER
    # modulator
    agvm: bool = True
    tau: Optional[int] = None
    alpha: float = ALPHA
    clip_lo: float = CLIP_LO
    clip_hi: float = CLIP_HI
    eps_ratio: float = EPS_RATIO
    # run
    ablation: str = 'none'
    seed: int = 0
    workers: int = 1

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    def to_dict(self):
        return asdict(self)

    def with_updates(self, **changes):
        return replace(self, **changes)

    def model_config(self):
        '''ModelConfig with the ablation arm applied on top of the model keys'''
        model = ModelConfig(
            input_dim=self.input_dim, trunk_widths=list(self.trunk_widths), levels=self.levels,
            head_width=self.head_width, output_dim=self.output_dim, head_mode=self.head_mode,
            pyramid=self.pyramid, mask_fraction=self.mask_fraction, proposals=self.proposals,
            proposal_noise=self.proposal_noise,
        )
        kind, value = parse_ablation(self.ablation)
        if kind == 'independent_heads':
            model.head_mode = 'independent'
        elif kind == 'no_pyramid':
            model.pyramid = False
            model.trunk_widths = list(self.trunk_widths[:-1]) + [self.head_width]
        elif kind == 'freeze_head':
            model.freeze_head = True
        elif kind == 'mask':
            model.mask_fraction = value
        elif kind == 'proposals':
            model.proposals = value
        return model

    def validate(self):
        problems = []
        if self.batch_size < 2 or self.batch_size % 2 != 0:
            problems.append(f'batch_size must be even and positive (got {self.batch_size})')
        if self.batch_size > self.n:
            problems.append(f'batch_size {self.batch_size} exceeds dataset size n={self.n}')
        if self.iterations < 0:
            problems.append(f'iterations must be >= 0 (got {self.iterations})')
        if self.warmup_iters < 0 or (self.warmup_iters > 0 and self.warmup_iters >= self.iterations):
            problems.append(f'warmup_iters must be < iterations (got {self.warmup_iters} vs {self.iterations})')
        if self.optimizer not in OPTIMIZERS:
            problems.append(f'optimizer must be one of {OPTIMIZERS} (got {self.optimizer!r})')
        if self.scaling not in SCALINGS:
            problems.append(f'scaling must be one of {SCALINGS} (got {self.scaling!r})')
        if self.decay not in DECAYS:
            problems.append(f'decay must be one of {DECAYS} (got {self.decay!r})')
        if self.base_lr < 0 or self.base_batch < 1 or self.sqrt_threshold < 1:
            problems.append('base_lr must be >= 0, base_batch and sqrt_threshold positive')
        if list(self.milestones) != sorted(self.milestones):
            problems.append(f'milestones must be increasing (got {self.milestones})')
        if self.tau is not None and self.tau < 1:
            problems.append(f'tau must be positive (got {self.tau})')
        if self.grad_clip is not None and self.grad_clip <= 0:
            problems.append(f'grad_clip must be positive when set (got {self.grad_clip})')
        if self.workers < 1:
            problems.append(f'workers must be >= 1 (got {self.workers})')
        if self.n < 2:
            problems.append(f'n must be >= 2 (got {self.n})')
        try:
            parse_ablation(self.ablation)
        except ConfigError as e:
            problems.append(str(e))
        if problems:
            raise ConfigError('invalid experiment config: ' + '; '.join(problems))
        self.model_config().validate()
        return self


def parse_ablation(value):
    '''Split an ablation string into (kind, parameter): mask(0.75) -> ('mask', 0.75)'''
    match = ABLATION_PATTERN.match(str(value).strip())
    if match is None:
        raise ConfigError(
            f'unknown ablation {value!r}; expected none, independent_heads, no_pyramid, freeze_head, mask(p) or proposals(K)')
    if match.group('p') is not None:
        return 'mask', float(match.group('p'))
    if match.group('k') is not None:
        return 'proposals', int(match.group('k'))
    return match.group(1), None


def _check_keys(values, source):
    unknown = sorted(set(values) - set(ExperimentConfig.keys()))
    if unknown:
        raise ConfigError(f'unknown config keys in {source}: {", ".join(unknown)}')


def parse_overrides(args):
    '''["--key=value", ...] -> {key: value} with YAML scalar typing'''
    overrides = {}
    for arg in args:
        if not arg.startswith('--') or '=' not in arg:
            raise ConfigError(f'override {arg!r} is not of the form --key=value')
        key, raw = arg[2:].split('=', 1)
        key = key.replace('-', '_')
        try:
            overrides[key] = yaml.safe_load(raw) if raw != '' else None
        except yaml.YAMLError as e:
            raise ConfigError(f'cannot parse value for {key}: {raw!r}') from e
    _check_keys(overrides, 'command-line overrides')
    return overrides


def load_config(path=None, overrides=None, environ=None):
    '''Defaults, then the YAML file, then --key=value overrides, then AGVM_SEED'''
    values = {}
    if path is not None:
        try:
            with open(path) as f:
                loaded = yaml.safe_load(f) or {}
        except OSError as e:
            raise ConfigError(f'cannot read config file {path}: {e.strerror}') from e
        if not isinstance(loaded, dict):
            raise ConfigError(f'config file {path} must hold a mapping of flat keys')
        _check_keys(loaded, path)
        values.update(loaded)
    if overrides:
        _check_keys(overrides, 'overrides')
        values.update(overrides)

    environ = os.environ if environ is None else environ
    if environ.get(SEED_ENV_VAR):
        try:
            values['seed'] = int(environ[SEED_ENV_VAR])
        except ValueError as e:
            raise ConfigError(f'{SEED_ENV_VAR} must be an integer, got {environ[SEED_ENV_VAR]!r}') from e
        logger.info(f'Seed taken from {SEED_ENV_VAR}: {values["seed"]}')

    try:
        config = ExperimentConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from e
    return config.validate()
