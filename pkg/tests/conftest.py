import pytest

from harness import ExperimentConfig
from models import ModulePartition


@pytest.fixture
def tiny_config():
    '''Small shared-head pyramid run that finishes in well under a second'''
    return ExperimentConfig(
        input_dim=4, trunk_widths=[8, 8], levels=2, head_width=4, output_dim=1,
        n=64, noise_std=0.1, batch_size=8, iterations=20, tau=5, base_lr=0.01,
    )


@pytest.fixture
def two_scalar_modules():
    '''Partition of two one-element parameters: anchor 'a' and module 'b' '''
    return ModulePartition((('a', (0,)), ('b', (1,))), ((1,), (1,)))


@pytest.fixture(autouse=True)
def no_seed_override(monkeypatch):
    monkeypatch.delenv('AGVM_SEED', raising=False)
