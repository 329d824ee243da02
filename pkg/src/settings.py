DATABASE_NAME = 'agvm_results.db'
LOG_LEVEL = 'INFO'
SHOW_PROGRESS = False

# Modulator defaults
TAU = 10
TAU_LARGE_BATCH = 5
LARGE_BATCH = 1024
ALPHA = 0.97
CLIP_LO = 0.1
CLIP_HI = 10.0
EPS_RATIO = 1e-12
EPS_NORM = 1e-12

# Optimizer defaults
BETA1 = 0.9
BETA2 = 0.999
EPS_ADAM = 1e-8

# Learning-rate schedule defaults
SQRT_THRESHOLD = 128
POLY_POWER = 0.9

# Finite differences
FD_STEP = 1e-6

# Std of the fresh noise added to the features of every head evaluation
FEATURE_NOISE = 0.5

CSV_FLOAT_FORMAT = '%.17g'
TRACE_COLUMNS = ['iter', 'module', 'phi', 'mu', 'eff_lr', 'loss', 'grad_norm_sq']
CHECKPOINT_VERSION = 1

# Variance estimator benchmark (least squares, two feature blocks)
ORACLE_N = 512
ORACLE_INPUT_DIM = 128
ORACLE_NOISE_STD = 0.1
ORACLE_BATCH = 32
ORACLE_BATCHES = 200
ORACLE_RESAMPLES = 2000
ORACLE_TOLERANCE = 0.15

GRAD_CHECK_PROBES = 50
GRAD_CHECK_BATCH = 16
GRAD_CHECK_TOLERANCE = 1e-5
