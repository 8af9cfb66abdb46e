# Quadrature constants
QUAD_NODES_DEFAULT = 64
QUAD_NODES_CAP = 512
TOL_QUAD = 1e-10
TOL_PSD = 1e-8
MAX_LINK_ORDER = 3

# Solver defaults
TOL_SOLVE = 1e-10
MAX_ITER = 100
LAMBDA_BOUNDS = (-6.0, 6.0)
GAMMA2_BOUNDS = (1e-8, 25.0)
ARMIJO_FACTOR = 0.5
MULTISTART_GRID = 8
MONOTONE_GRID_POINTS = 65

# Degeneracy guards
DET_FLOOR = 1e-14
DIVISION_FLOOR = 1e-12
LINEAR_COND_CAP = 1e12
LINEAR_DET_SCALE = 1e-12
SYMMETRY_TOL = 1e-10
MOMENT_NEG_SLACK = 1e-8

# Simulation
MAR_NOISE_SD = 0.2
QQ_MIN_REPLICATES = 30
MAX_FAILURE_SHARE = 0.01

# Exit codes
EXIT_OK = 0
EXIT_SELFTEST_FAILED = 1
EXIT_VALIDATION = 2
EXIT_ESTIMATION = 3

# Environment / file names
SEED_ENV_VAR = "MOMGLM_SEED"
REPLICATES_FILE_NAME = "replicates.csv"
SUMMARY_FILE_NAME = "summary.csv"
QQ_DIR_NAME = "qq"
