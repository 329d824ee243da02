import argparse
import logging
import sys
import time

import numpy as np

from autograd import grad_check
from errors import AgvmError
from harness import (
    ablation_suite, emit_csv, load_config, parse_overrides, run_experiment, sensitivity_sweep, store_run,
    store_table, unique_run_id, variance_trace, write_frame_csv,
)
from misc_functions import format_summary, get_engine
from models import build_linear_model, build_model, make_dataset, make_regression_benchmark
from variance import compare_with_oracle
import settings

logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)


def build_parser():
    parser = argparse.ArgumentParser(
        allow_abbrev=False,
        description='Train and inspect per-module variance-modulated optimizers. '
                    'Any config key can be overridden with --key=value.')
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p):
        p.add_argument('--config', type=str, default=None, help='Path to a YAML file of flat config keys')
        p.add_argument('--output', type=str, default=None, help='CSV file for the trace or table')
        p.add_argument('--database', type=str, default=None, help='sqlite file to append results to')
        p.add_argument('--quiet', action='store_true', help='Hide progress bars')
        return p

    train = common(sub.add_parser('train', allow_abbrev=False, help='Run one experiment'))
    train.add_argument('--checkpoint', type=str, default=None, help='Save the final optimizer state here')
    common(sub.add_parser('ablate', allow_abbrev=False, help='Run the ablation arms with modulation off'))
    common(sub.add_parser('sweep', allow_abbrev=False, help='Run the tau/alpha sensitivity grid'))
    common(sub.add_parser('variance-trace', allow_abbrev=False, help='Trace phi at the initial parameters without updates'))
    check = common(sub.add_parser('grad-check', allow_abbrev=False, help='Compare analytic and finite-difference gradients'))
    check.add_argument('--probes', type=int, default=settings.GRAD_CHECK_PROBES)
    common(sub.add_parser('oracle-check', allow_abbrev=False, help='Compare the variance estimate with brute-force resampling'))
    return parser


def _store(args, table_name, run_id, df):
    if args.database:
        engine = get_engine(args.database)
        store_table(engine, table_name, unique_run_id(engine, run_id, table_name), df)


def cmd_train(args, config, run_id):
    result = run_experiment(config, progress=not args.quiet, checkpoint_path=args.checkpoint)
    if args.output:
        emit_csv(result.trace, args.output)
    if args.database:
        engine = get_engine(args.database)
        store_run(engine, unique_run_id(engine, run_id), config, result)
    print(format_summary(result.summary))
    return 0


def cmd_ablate(args, config, run_id):
    table = ablation_suite(config, workers=config.workers, progress=not args.quiet)
    if args.output:
        write_frame_csv(table, args.output)
    _store(args, 'ablations', run_id, table)
    print(table[['arm', 'phi_gap', 'phi_ratio', 'final_loss']].to_string(index=False))
    return 0


def cmd_sweep(args, config, run_id):
    table = sensitivity_sweep(config, workers=config.workers, progress=not args.quiet)
    if args.output:
        write_frame_csv(table, args.output)
    _store(args, 'sweeps', run_id, table)
    print(table.to_string(index=False))
    return 0


def cmd_variance_trace(args, config, run_id):
    trace = variance_trace(config, progress=not args.quiet)
    if args.output:
        emit_csv(trace, args.output)
    for row in trace:
        print(f'iter={row.iter} module={row.module} phi={row.phi:.6g} grad_norm_sq={row.grad_norm_sq:.6g}')
    return 0


def cmd_grad_check(args, config, run_id):
    model = build_model(config.model_config(), config.seed)
    inputs, targets = make_dataset(config.n, config.input_dim, config.output_dim, config.noise_std, config.data_seed)
    batch = min(settings.GRAD_CHECK_BATCH, config.n)
    worst = grad_check(lambda: model.loss_fn(inputs[:batch], targets[:batch]), model.params, args.probes,
                       seed=config.seed)
    passed = worst < settings.GRAD_CHECK_TOLERANCE
    print(format_summary({'max_rel_error': worst, 'passed': passed}))
    return 0 if passed else 1


def cmd_oracle_check(args, config, run_id):
    model = build_linear_model(settings.ORACLE_INPUT_DIM, modules=2, seed=config.seed)
    dataset = make_regression_benchmark(settings.ORACLE_N, settings.ORACLE_INPUT_DIM, settings.ORACLE_NOISE_STD,
                                        config.data_seed)
    table = compare_with_oracle(model, dataset, b=settings.ORACLE_BATCH, batches=settings.ORACLE_BATCHES,
                                resamples=settings.ORACLE_RESAMPLES, seed=config.seed, workers=config.workers,
                                progress=not args.quiet)
    if args.output:
        write_frame_csv(table, args.output)
    _store(args, 'oracle_checks', run_id, table)
    passed = bool((table['rel_error'] < settings.ORACLE_TOLERANCE).all())
    print(table.to_string(index=False))
    print(format_summary({'max_rel_error': float(table['rel_error'].max()), 'passed': passed}))
    return 0 if passed else 1


COMMANDS = {
    'train': cmd_train,
    'ablate': cmd_ablate,
    'sweep': cmd_sweep,
    'variance-trace': cmd_variance_trace,
    'grad-check': cmd_grad_check,
    'oracle-check': cmd_oracle_check,
}


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        config = load_config(args.config, parse_overrides(extra))
        run_id = f'{args.command}-{config.seed}-{int(time.time())}'
        return COMMANDS[args.command](args, config, run_id)
    except AgvmError as e:
        logger.error(e)
        return 2


if __name__ == '__main__':
    np.seterr(over='ignore', invalid='ignore')
    sys.exit(main())
