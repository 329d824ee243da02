from harness.config import ExperimentConfig, load_config, parse_ablation, parse_overrides
from harness.schedules import Schedule, lr_at, peak_lr
from harness.experiment import (
    ExperimentResult, TraceRow, head_modules, run_experiment, summarize, trace_to_frame, variance_trace,
)
from harness.ablation import ABLATION_ARMS, SWEEP_SETTINGS, ablation_suite, arm_config, sensitivity_sweep
from harness.outputs import emit_csv, store_run, store_table, unique_run_id, write_frame_csv
