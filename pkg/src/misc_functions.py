import logging
import math

import numpy as np
import pandas as pd
import sqlalchemy as sa

from settings import DATABASE_NAME

logger = logging.getLogger(__name__)


def get_engine(database_name=DATABASE_NAME):
    return sa.create_engine(f'sqlite:///{database_name}')


def import_data_from_sql(table_name, engine):
    insp = sa.inspect(engine)

    if insp.has_table(table_name):
        table_data = pd.read_sql_table(table_name, engine)
    else:
        table_data = pd.DataFrame([])

    return table_data


def insert_into_db(df, table_name, engine, if_exists='append'):
    if df is None:
        logger.info('No data in DF')
        return
    if not df.empty:
        df.to_sql(
            table_name, engine, if_exists=if_exists, index=False
        )
    else:
        logger.warning(f'No data to insert into {table_name}')


def is_finite(value):
    '''True when every element of a scalar or array is finite'''
    return bool(np.all(np.isfinite(value)))


def format_real(value):
    '''17 significant digits, enough for an exact float64 round trip'''
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return 'NaN'
        return f'{value:.17g}'
    return str(value)


def format_summary(summary):
    return '\n'.join(f'{key}={format_real(value)}' for key, value in summary.items())
