from optim.modulator import (
    ModulatorState, compute_mu, default_tau, enable_updates, force_unit_mu, smooth_mu,
)
from optim.agvm_optimizers import (
    AdamWState, SgdState, agvm_adamw_step, agvm_sgd_step, clip_gradients, init_adamw_state, init_sgd_state,
)
from optim.checkpoint import load_checkpoint, save_checkpoint
