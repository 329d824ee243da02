from models.datasets import make_dataset, make_regression_benchmark
from models.model_suite import (
    Model, ModelConfig, ModulePartition, Perturbation, batch_gradient, build_linear_model,
    build_model, forward_loss, half_batch_gradients, make_perturbation, per_sample_gradients,
)
