from pathlib import Path

import pytest
import yaml

from errors import ConfigError
from harness import ExperimentConfig, load_config, parse_ablation, parse_overrides

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / 'configs' / 'default.yaml'


def test_defaults_are_valid():
    config = load_config(environ={})
    assert config == ExperimentConfig()
    assert config.batch_size % 2 == 0


def test_shipped_config_lists_every_key():
    with open(DEFAULT_CONFIG) as f:
        shipped = yaml.safe_load(f)
    assert sorted(shipped) == sorted(ExperimentConfig.keys())
    assert load_config(DEFAULT_CONFIG, environ={}) == ExperimentConfig()


def test_file_then_overrides(tmp_path):
    path = tmp_path / 'run.yaml'
    path.write_text('batch_size: 64\noptimizer: adamw\nmilestones: [10, 20]\n')
    config = load_config(path, overrides={'batch_size': 32}, environ={})
    assert config.batch_size == 32
    assert config.optimizer == 'adamw'
    assert config.milestones == [10, 20]


def test_unknown_keys_are_hard_errors(tmp_path):
    path = tmp_path / 'run.yaml'
    path.write_text('batch_size: 64\nlearning_rate: 0.1\n')
    with pytest.raises(ConfigError, match='learning_rate'):
        load_config(path, environ={})
    with pytest.raises(ConfigError, match='bogus'):
        parse_overrides(['--bogus=1'])


def test_overrides_use_yaml_scalars():
    overrides = parse_overrides(['--batch_size=64', '--agvm=false', '--milestones=[10, 20]',
                                 '--ablation=mask(0.75)', '--trunk-widths=[8,8]', '--tau=null', '--alpha=0.95'])
    assert overrides == {
        'batch_size': 64, 'agvm': False, 'milestones': [10, 20], 'ablation': 'mask(0.75)',
        'trunk_widths': [8, 8], 'tau': None, 'alpha': 0.95,
    }
    with pytest.raises(ConfigError, match='--key=value'):
        parse_overrides(['--batch_size'])


def test_seed_environment_variable_wins():
    config = load_config(overrides={'seed': 3}, environ={'AGVM_SEED': '17'})
    assert config.seed == 17
    with pytest.raises(ConfigError, match='AGVM_SEED'):
        load_config(environ={'AGVM_SEED': 'abc'})


@pytest.mark.parametrize('changes, message', [
    ({'batch_size': 7}, 'even'),
    ({'batch_size': 64, 'n': 32}, 'exceeds dataset size'),
    ({'iterations': 10, 'warmup_iters': 10}, 'warmup_iters'),
    ({'optimizer': 'lamb'}, 'optimizer'),
    ({'scaling': 'cubic'}, 'scaling'),
    ({'ablation': 'mask'}, 'unknown ablation'),
    ({'levels': 0}, 'levels'),
])
def test_constraint_violations(changes, message):
    with pytest.raises(ConfigError, match=message):
        load_config(overrides=changes, environ={})


def test_ablation_strings():
    assert parse_ablation('none') == ('none', None)
    assert parse_ablation('mask(0.75)') == ('mask', 0.75)
    assert parse_ablation('proposals(8)') == ('proposals', 8)
    assert parse_ablation('freeze_head') == ('freeze_head', None)
    with pytest.raises(ConfigError):
        parse_ablation('proposals(two)')


def test_ablation_changes_the_model_config():
    base = ExperimentConfig()
    assert base.with_updates(ablation='independent_heads').model_config().head_mode == 'independent'
    no_pyramid = base.with_updates(ablation='no_pyramid').model_config()
    assert not no_pyramid.pyramid
    assert no_pyramid.trunk_widths[-1] == base.head_width
    assert base.with_updates(ablation='mask(0.75)').model_config().mask_fraction == 0.75
    assert base.with_updates(ablation='proposals(8)').model_config().proposals == 8
    assert base.with_updates(ablation='freeze_head').model_config().freeze_head
