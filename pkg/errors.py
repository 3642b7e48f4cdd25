"""
Error types shared by the toolkit and their CLI exit codes
"""


class ToolkitError(Exception):
    """Base class for every error raised on purpose by the toolkit"""


class ConfigError(ToolkitError, ValueError):
    """Run configuration failed validation; the message names the key"""


class BudgetExceededError(ToolkitError, ValueError):
    """A memory or enumeration cap would be exceeded"""


class MissingDegreeError(ToolkitError, KeyError):
    """A p-spin degree was requested that the disorder or parameters lack"""

    def __str__(self):
        return str(self.args[0]) if self.args else "missing degree"


class SiteIndexError(ToolkitError, IndexError):
    """Site index outside 0..N-1"""


class ShapeMismatchError(ToolkitError, ValueError):
    """Configurations of different lengths were combined"""


class ScheduleError(ToolkitError, ValueError):
    """Invalid Monte Carlo schedule (burn-in, thinning, sweeps)"""


class LadderError(ToolkitError, ValueError):
    """Invalid tempering ladder"""


class ArityError(ToolkitError, ValueError):
    """A test function was used with the wrong number of replicas"""


class RealizationError(ToolkitError, RuntimeError):
    """A per-realization computation failed; carries the realization index"""

    def __init__(self, index, cause):
        super().__init__(f"realization {index} failed: {cause}")
        self.index = index
        self.cause = cause

    def __reduce__(self):
        # crosses process boundaries from worker pools
        return (type(self), (self.index, self.cause))


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_RUNTIME = 4


def exit_code_for(error):
    """Map an exception to the CLI exit status"""
    if isinstance(error, RealizationError) and isinstance(error.cause, BudgetExceededError):
        return EXIT_BUDGET
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, BudgetExceededError):
        return EXIT_BUDGET
    return EXIT_RUNTIME
