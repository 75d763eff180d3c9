# errors.py
# Exception types shared by the solver modules and mapped to exit codes by the CLI

class DomainError(ValueError):
    """Raised when an argument violates an operation's precondition."""


class GeometryError(DomainError):
    """Raised when a list of rectangles does not tile its box (overlap or gap)."""


class NumericalError(ArithmeticError):
    """
    Raised when a linear program fails or a solution fails its feasibility re-check.

    Attributes:
        index (int): Position of the linear function whose witness LP failed, if known.
    """

    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"{message} (function index {index})")
        self.index = index


class ModelError(ValueError):
    """
    Raised when a model document is malformed or violates model invariants.

    Attributes:
        violations (list): Every violation found, one message each.
    """

    def __init__(self, message, violations=None):
        self.violations = list(violations or [])
        if self.violations:
            message = f"{message}: " + "; ".join(self.violations)
        super().__init__(message)


class ResourceCapError(RuntimeError):
    """Raised when a configured memory guard (vector cap, cell cap) is exceeded."""


class BudgetExceededError(ResourceCapError):
    """Raised when a configured wall-clock budget is exceeded."""


class PolicyGapError(LookupError):
    """Raised when a rollout reaches a region for which the policy has no action."""


# --- Exit codes used by src.cli ---
EXIT_OK = 0
# Missing files, bad argument values, anything not listed below
EXIT_FAILURE = 1
# Also argparse's own status for a malformed command line
EXIT_MODEL_INVALID = 2
EXIT_NUMERICAL = 3
# Vector cap, cell cap or time budget
EXIT_RESOURCE_CAP = 4


def exit_code_for(error):
    """
    Maps an exception raised by the library to the CLI exit code.

    Args:
        error (BaseException): The exception caught by a command.

    Returns:
        int: The process exit code.
    """
    if isinstance(error, ModelError):
        return EXIT_MODEL_INVALID
    if isinstance(error, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(error, ResourceCapError):
        return EXIT_RESOURCE_CAP
    return EXIT_FAILURE
