"""Constants for sfl_sim."""

from logging import Logger, getLogger

LOGGER: Logger = getLogger(__package__)

DOMAIN = "sfl_sim"

# Training defaults.
DEFAULT_BATCH_SIZE = 128
DEFAULT_LEARNING_RATE = 0.0001
DEFAULT_LOCAL_EPOCHS = 1
DEFAULT_DROPOUT_RATE = 0.5
INIT_WEIGHT_RANGE = 0.05

DEFAULT_EPSILON = 8.0
DEFAULT_SENSITIVITY = 1.0

DEFAULT_CONVERGENCE_WINDOW = 5
DEFAULT_CONVERGENCE_TOL = 0.002

# Gas schedule, in gas units.
GAS_DEPLOY = 500
GAS_INIT = 100
GAS_ANNOUNCE = 20
GAS_SUBMIT_BASE = 50
GAS_DISCLOSE = 200
GAS_EVALUATE_PER_SUBMISSION = 300
GAS_AGGREGATE_BASE = 100
GAS_REPORT = 20
GAS_FINALIZE = 50
GAS_POST = 20
GAS_PARAMETERS_PER_UNIT = 100
DEFAULT_BLOCK_GAS_LIMIT = 100_000

RECEIPT_QUEUED = "queued"
RECEIPT_DEFERRED = "deferred"
RECEIPT_GAS_EXHAUSTED = "GasExhausted"

DIGEST_SIZE = 32
ADDRESS_SIZE = 20
ZERO_DIGEST = bytes(DIGEST_SIZE)

# Default sweep grids for the grid command.
SWEEP_LAMBDAS = (0.05, 0.10, 0.15, 0.20)
SWEEP_DELTA_EXPONENTS = (1, 3, 5, 6)
SWEEP_POPULATION_SIZES = (10, 100, 200, 300)
DEFAULT_MIX = (0.6, 0.2, 0.2)

METRICS_FILENAME = "metrics.csv"
LEDGER_FILENAME = "ledger.json"
SUMMARY_FILENAME = "summary.json"
GRID_FILENAME = "grid.csv"

# Run configuration keys; each one is also a command-line flag.
CONF_SEED = "seed"
CONF_POPULATION = "p"
CONF_MIX = "mix"
CONF_LAMBDA = "lambda"
CONF_EMD = "emd"
CONF_RATIONAL = "rational"
CONF_MODEL = "model"
CONF_HIDDEN = "hidden"
CONF_BATCH_SIZE = "batch_size"
CONF_LEARNING_RATE = "learning_rate"
CONF_LOCAL_EPOCHS = "local_epochs"
CONF_DROPOUT = "dropout"
CONF_EPSILON = "epsilon"
CONF_DELTA = "delta"
CONF_SENSITIVITY = "sensitivity"
CONF_SIGMA_OVERRIDE = "sigma_override"
CONF_THRESHOLD = "threshold"
CONF_AA_AUTO = "aa_auto"
CONF_AA_MARGIN = "aa_margin"
CONF_REPEATS = "repeats"
CONF_REWARD = "reward_total"
CONF_ROUNDS = "rounds"
CONF_GAS_LIMIT = "gas_limit"
CONF_MINERS = "miners"
CONF_LOCAL_EVALUATION = "local_evaluation"
CONF_DISCLOSE = "disclose_test_data"
CONF_DATASET = "dataset"
CONF_CLASSES = "classes"
CONF_PER_CLASS = "per_class"
CONF_INPUT_DIM = "input_dim"
CONF_SEPARATION = "separation"
CONF_IDX_IMAGES = "idx_images"
CONF_IDX_LABELS = "idx_labels"
CONF_TEST_FRACTION = "test_fraction"
CONF_TEST_GROUPS = "test_groups"
CONF_WORKERS = "workers"
CONF_OUT_DIR = "out_dir"
CONF_RECORD_TIMING = "record_timing"
CONF_LOG_LEVEL = "log_level"

DATASET_SYNTHETIC = "synthetic"
DATASET_IDX = "idx"

DEFAULT_POPULATION = 10
DEFAULT_LAMBDA = 0.2
DEFAULT_EMD = 1.5
DEFAULT_DELTA_EXPONENT = 5
DEFAULT_AA_MARGIN = 0.05
DEFAULT_REPEATS = 10
DEFAULT_REWARD = 10_000
DEFAULT_ROUNDS = 5
DEFAULT_MINERS = 3
DEFAULT_CLASSES = 10
DEFAULT_PER_CLASS = 200
DEFAULT_INPUT_DIM = 20
DEFAULT_SEPARATION = 3.0
DEFAULT_TEST_FRACTION = 0.2
DEFAULT_TEST_GROUPS = 10
DEFAULT_WORKERS = 4
DEFAULT_OUT_DIR = "runs"
