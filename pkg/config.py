"""
Configuration module for the mixed p-spin Gibbs toolkit
Handles environment settings, compute defaults and the RNG key schedule
"""
import os
from dotenv import load_dotenv
from pathlib import Path

# Load environment variables
load_dotenv()


def get_config(key, default=""):
    """Get configuration value from environment variables (.env supported)"""
    return os.getenv(key, default)


# Project paths (only these and the log level are read from the environment)
BASE_DIR = Path(__file__).parent
OUTPUT_DIR = Path(get_config("PSPIN_OUTPUT_DIR", str(BASE_DIR / "output")))
LOGS_DIR = Path(get_config("PSPIN_LOGS_DIR", str(BASE_DIR / "logs")))
LOG_LEVEL = get_config("PSPIN_LOG_LEVEL", "INFO")

TOOLKIT_VERSION = "0.3.0"

# Model limits
P_MAX = 4
MAX_COUPLING_ENTRIES = 2 ** 28

# Exact enumeration caps
EXACT_N_CAP = 20
DIRECT_TUPLE_CAP = 26          # n * N for direct n-replica enumeration
MOMENT_TUPLE_CAP = 2 ** 24     # N ** degree for the factorized moment engine
ENUMERATION_CHUNK = 2 ** 18    # configurations per vectorised block

# Sampler defaults
DEFAULT_LADDER = {"k": 12, "s_min": 0.2, "s_max": 1.0}
DEFAULT_BURN_IN = 2000
BATCH_COUNT = 20
ENERGY_RESYNC_INTERVAL = 1000
ENERGY_DRIFT_TOLERANCE = 1e-6
LOW_SWAP_ACCEPTANCE = 0.05
INTEGRATION_NODES = 8          # thermodynamic integration over the scale s

# Identities
QUADRATURE_POINTS = 16
SLACK_TOLERANCE = 1e-8

# RNG key schedule. Every stream is
#   Generator(Philox(SeedSequence(master_seed, spawn_key=(STREAM_*, ...))))
# STREAM_DISORDER: (realization_index, p)
# STREAM_CHAIN:    (realization_index, stream, replica, rung)  proposals and acceptances
# STREAM_INIT:     (realization_index, stream, replica, rung)  initial configuration
# STREAM_EXCHANGE: (realization_index, stream, replica)        tempering swaps
# Thermodynamic integration chains take replica slot INTEGRATION_SLOT + node.
INTEGRATION_SLOT = 2 ** 20
STREAM_DISORDER = 0x5EED0001
STREAM_CHAIN = 0x5EED0002
STREAM_INIT = 0x5EED0003
STREAM_EXCHANGE = 0x5EED0004

# Report layout
REPORT_COLUMNS = (
    ["experiment", "N", "p", "n"]
    + [f"beta_{p}" for p in range(1, P_MAX + 1)]
    + ["h", "mode", "quantity", "mean", "std_error", "n_samples", "seed"]
)
FLOAT_FORMAT = "%.17g"
