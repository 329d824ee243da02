import logging
import os
import tempfile
from pathlib import Path

import pandas as pd

from errors import OutputError
from harness.experiment import trace_to_frame
from misc_functions import import_data_from_sql, insert_into_db
from settings import CSV_FLOAT_FORMAT

logger = logging.getLogger(__name__)


def write_frame_csv(df, path):
    '''17-digit reals, LF endings; written beside the target and renamed into place'''
    path = Path(path)
    if not path.parent.is_dir():
        raise OutputError(path, 'parent directory does not exist')
    try:
        handle, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f'.{path.name}.', suffix='.tmp')
        os.close(handle)
        try:
            df.to_csv(tmp_name, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n', na_rep='NaN')
            os.replace(tmp_name, path)
        finally:
            if os.path.exists(tmp_name):
                os.remove(tmp_name)
    except OSError as e:
        raise OutputError(path, e.strerror or str(e)) from e
    logger.info(f'Wrote {len(df)} rows to {path}')


def emit_csv(trace, path):
    write_frame_csv(trace_to_frame(trace), path)


def _storable(values):
    # sqlite has no list type
    return {key: str(value) if isinstance(value, (list, tuple)) else value for key, value in values.items()}


def unique_run_id(engine, run_id, table_name='runs'):
    '''run_id, or run_id-2, run_id-3, ... when table_name already holds it'''
    stored = import_data_from_sql(table_name, engine)
    if stored.empty or 'run_id' not in stored.columns:
        return run_id
    taken = set(stored['run_id'])
    candidate = run_id
    count = 1
    while candidate in taken:
        count += 1
        candidate = f'{run_id}-{count}'
    if candidate != run_id:
        logger.info(f'{run_id} is already in {table_name}; storing as {candidate}')
    return candidate


def store_run(engine, run_id, config, result):
    '''Append the run's config and summary to runs and its trace to traces'''
    row = {'run_id': run_id, **_storable(config.to_dict()), **result.summary}
    insert_into_db(pd.DataFrame([row]), 'runs', engine)
    trace = trace_to_frame(result.trace)
    trace.insert(0, 'run_id', run_id)
    insert_into_db(trace, 'traces', engine)


def store_table(engine, table_name, run_id, df):
    df = df.copy()
    df.insert(0, 'run_id', run_id)
    insert_into_db(df, table_name, engine)
