import numpy as np
import pytest

from errors import ConfigError, ShapeError
from models import (
    ModelConfig, ModulePartition, batch_gradient, build_linear_model, build_model, forward_loss,
    half_batch_gradients, make_dataset, make_perturbation, per_sample_gradients,
)
from variance import groups_from_halves, phi_estimate, split_groups


def _batch(config, b=6, seed=0):
    return make_dataset(b, config.input_dim, config.output_dim, 0.1, seed)


def test_shared_head_partition():
    model = build_model(ModelConfig(levels=3, head_mode='shared', pyramid=True), seed=0)
    assert model.partition.h == 3
    assert model.partition.names == ['trunk', 'pyramid', 'head']
    assert model.partition.anchor == 'trunk'


def test_independent_heads_partition():
    model = build_model(ModelConfig(levels=3, head_mode='independent'), seed=0)
    assert model.partition.h == 5
    assert model.partition.names == ['trunk', 'pyramid', 'head_1', 'head_2', 'head_3']


def test_every_trainable_parameter_in_exactly_one_module():
    model = build_model(ModelConfig(head_mode='independent'), seed=1)
    ids = model.partition.param_ids
    assert sorted(ids) == list(range(len(model.params)))
    assert len(ids) == len(set(ids))


def test_same_seed_gives_identical_parameters():
    first = build_model(ModelConfig(), seed=5)
    second = build_model(ModelConfig(), seed=5)
    for a, b in zip(first.params, second.params):
        np.testing.assert_array_equal(a.data, b.data)
        assert a.name == b.name


def test_sharing_does_not_change_trunk_or_head_initialisation():
    shared = build_model(ModelConfig(head_mode='shared'), seed=2)
    independent = build_model(ModelConfig(head_mode='independent'), seed=2)
    by_name = {p.name: p.data for p in independent.params}
    for p in shared.params:
        if p.name.startswith('trunk') or p.name.startswith('pyramid'):
            np.testing.assert_array_equal(p.data, by_name[p.name])
        else:
            np.testing.assert_array_equal(p.data, by_name[p.name.replace('head', 'head_2')])


def test_invalid_config_lists_violations():
    with pytest.raises(ConfigError, match='levels must be positive'):
        build_model(ModelConfig(levels=0), seed=0)
    with pytest.raises(ConfigError, match='mask_fraction'):
        ModelConfig(mask_fraction=1.0).validate()
    with pytest.raises(ConfigError, match='head_mode'):
        ModelConfig(head_mode='tied').validate()
    with pytest.raises(ConfigError, match='cannot be halved'):
        ModelConfig(trunk_widths=[32, 6], levels=3).validate()


def test_partition_rejects_degenerate_layouts():
    with pytest.raises(ConfigError):
        ModulePartition((('only', (0,)),), ((2,),))
    with pytest.raises(ConfigError):
        ModulePartition((('a', (0,)), ('b', (0,))), ((2,),))
    with pytest.raises(ConfigError):
        ModulePartition((('a', (0,)), ('b', (1,))), ((2,), (2,)), anchor_index=2)


def test_flatten_and_unflatten_follow_module_order():
    partition = ModulePartition((('a', (1,)), ('b', (0,))), ((2,), (1, 3)))
    arrays = [np.array([7.0, 8.0]), np.array([[1.0, 2.0, 3.0]])]
    flat = partition.flatten(arrays)
    np.testing.assert_array_equal(flat, [1.0, 2.0, 3.0, 7.0, 8.0])
    assert partition.module_sizes() == [3, 2]
    back = partition.unflatten(flat)
    np.testing.assert_array_equal(back[0], arrays[0])
    np.testing.assert_array_equal(back[1], arrays[1])


def test_unmasked_loss_equals_plain_mse():
    config = ModelConfig(proposal_noise=0.0)
    model = build_model(config, seed=0)
    inputs, targets = _batch(config)
    plain = model.loss_fn(inputs, targets).item()
    assert forward_loss(model, inputs, targets, 0.0, mask_seed=3).item() == plain
    assert model.forward(inputs, targets, 3).item() == plain


def test_feature_noise_is_fresh_per_seed_and_reaches_every_evaluation():
    config = ModelConfig(levels=2, proposals=3)
    noise = make_perturbation(config, batch=4, mask_fraction=0.0, mask_seed=[0, 1]).noise
    assert noise.shape == (6, 4, config.head_width)
    again = make_perturbation(config, batch=4, mask_fraction=0.0, mask_seed=[0, 1]).noise
    np.testing.assert_array_equal(noise, again)
    other = make_perturbation(config, batch=4, mask_fraction=0.0, mask_seed=[0, 2]).noise
    assert not np.array_equal(noise, other)

    model = build_model(config, seed=0)
    inputs, targets = _batch(config)
    plain = model.loss_fn(inputs, targets).item()
    assert forward_loss(model, inputs, targets, 0.0, mask_seed=3).item() != plain
    assert make_perturbation(ModelConfig(proposal_noise=0.0), 4, 0.0, 0).noise is None


def test_perfect_prediction_gives_zero_loss_under_any_mask():
    config = ModelConfig()
    model = build_model(config, seed=0)
    for p in model.params:
        if p.name.startswith('head.1'):
            p.data = np.zeros_like(p.data)
    inputs, _ = _batch(config)
    targets = np.zeros((inputs.shape[0], config.output_dim))
    for fraction in (0.0, 0.5, 0.9):
        assert forward_loss(model, inputs, targets, fraction, mask_seed=1).item() == 0.0


def test_mask_keeps_floor_of_remaining_elements():
    config = ModelConfig(levels=2, output_dim=4)
    assert config.outputs_per_sample == 8
    mask = make_perturbation(config, batch=5, mask_fraction=0.75, mask_seed=0).mask
    np.testing.assert_array_equal(mask.sum(axis=1), [2] * 5)

    tiny = ModelConfig(levels=1, pyramid=False, trunk_widths=[16], output_dim=1)
    mask = make_perturbation(tiny, batch=3, mask_fraction=0.9, mask_seed=0).mask
    np.testing.assert_array_equal(mask.sum(axis=1), [1, 1, 1])


def test_fresh_mask_per_seed():
    config = ModelConfig(levels=2, output_dim=4)
    first = make_perturbation(config, 4, 0.5, mask_seed=[0, 1]).mask
    again = make_perturbation(config, 4, 0.5, mask_seed=[0, 1]).mask
    other = make_perturbation(config, 4, 0.5, mask_seed=[0, 2]).mask
    np.testing.assert_array_equal(first, again)
    assert not np.array_equal(first, other)


def test_forward_loss_validates_inputs():
    config = ModelConfig()
    model = build_model(config, seed=0)
    inputs, targets = _batch(config)
    with pytest.raises(ShapeError):
        forward_loss(model, inputs, targets[:-1], 0.0, 0)
    with pytest.raises(ConfigError):
        forward_loss(model, inputs, targets, 1.0, 0)


def test_per_sample_gradients_average_to_batch_gradient():
    config = ModelConfig(mask_fraction=0.5, proposals=2, proposal_noise=0.1)
    model = build_model(config, seed=4)
    inputs, targets = _batch(config, b=6)
    perturbation = make_perturbation(config, 6, config.mask_fraction, mask_seed=9)
    loss, flat = batch_gradient(model, inputs, targets, perturbation)
    losses, grads = per_sample_gradients(model, inputs, targets, perturbation)
    assert grads.shape == (6, sum(model.partition.module_sizes()))
    np.testing.assert_allclose(grads.mean(axis=0), flat, rtol=1e-10, atol=1e-12)
    assert losses.mean() == pytest.approx(loss, rel=1e-12)


def test_half_batch_passes_give_the_split_half_groups():
    config = ModelConfig(mask_fraction=0.5, proposals=2)
    model = build_model(config, seed=5)
    inputs, targets = _batch(config, b=8)
    perturbation = make_perturbation(config, 8, config.mask_fraction, mask_seed=3)
    losses, grads = per_sample_gradients(model, inputs, targets, perturbation)
    expected = split_groups(grads, model.partition)

    for workers in (1, 2):
        loss, first, second = half_batch_gradients(model, inputs, targets, perturbation, workers=workers)
        groups = groups_from_halves(first, second, model.partition, 8)
        assert loss == pytest.approx(losses.mean(), rel=1e-12)
        for a, c in zip(groups.g1 + groups.g2, expected.g1 + expected.g2):
            np.testing.assert_allclose(a, c, rtol=1e-10, atol=1e-12)

    with pytest.raises(ConfigError, match="even batch"):
        half_batch_gradients(model, inputs[:7], targets[:7])


def test_per_sample_gradients_do_not_depend_on_pool_size():
    config = ModelConfig()
    model = build_model(config, seed=0)
    inputs, targets = _batch(config, b=8)
    _, serial = per_sample_gradients(model, inputs, targets, workers=1)
    _, pooled = per_sample_gradients(model, inputs, targets, workers=4)
    np.testing.assert_array_equal(serial, pooled)


def test_frozen_head_leaves_the_partition():
    model = build_model(ModelConfig(freeze_head=True), seed=0)
    assert model.partition.names == ['trunk', 'pyramid']
    frozen = [p for p in model.params if p.name.startswith('head')]
    assert frozen and not any(p.requires_grad for p in frozen)


def test_proposals_multiply_head_evaluations():
    config = ModelConfig(levels=3, proposals=4)
    assert config.evaluations == 12
    model = build_model(config, seed=0)
    inputs, targets = _batch(config)
    assert np.isfinite(model.loss_fn(inputs, targets).item())


def test_linear_model_blocks():
    model = build_linear_model(8, modules=2, seed=0)
    assert model.partition.names == ['block_1', 'block_2']
    assert model.partition.module_sizes() == [4, 4]
    with pytest.raises(ConfigError):
        build_linear_model(7, modules=2)


def test_dataset_is_linear_without_noise_and_reproducible():
    inputs, targets = make_dataset(50, 6, 2, 0.0, seed=3)
    weights, residual, _, _ = np.linalg.lstsq(inputs, targets, rcond=None)
    np.testing.assert_allclose(inputs @ weights, targets, atol=1e-12)
    again = make_dataset(50, 6, 2, 0.0, seed=3)
    np.testing.assert_array_equal(inputs, again[0])
    np.testing.assert_array_equal(targets, again[1])
    with pytest.raises(ConfigError):
        make_dataset(1, 6, 2, 0.0, seed=3)


def test_per_sample_gradient_variance_is_positive():
    inputs, targets = make_dataset(1000, 8, 1, 0.1, seed=0)
    model = build_linear_model(8, modules=2, seed=0)
    _, grads = per_sample_gradients(model, inputs[:200], targets[:200])
    assert grads.var(axis=0).sum() > 0


@pytest.mark.slow
def test_shared_head_has_lower_variance_than_trunk():
    config = ModelConfig(levels=4)
    wins = 0
    for seed in range(20):
        model = build_model(config, seed=seed)
        inputs, targets = make_dataset(64, config.input_dim, config.output_dim, 0.1, seed)
        _, grads = per_sample_gradients(model, inputs, targets)
        phi = phi_estimate(split_groups(grads, model.partition)).as_dict()
        wins += phi['head'] < phi['trunk']
    assert wins >= 16
