"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures
onto its documented exit statuses (2 config, 3 data, 4 model).
"""


class PpgRocketError(Exception):
    exit_code = 1
    kind = "error"


class ConfigError(PpgRocketError, ValueError):
    exit_code = 2
    kind = "config"


class DataError(PpgRocketError, ValueError):
    exit_code = 3
    kind = "data"


class ParseError(DataError):
    """A dataset file could not be parsed. ``row`` is 1-based when known."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class ConsistencyError(DataError):
    pass


class InfeasibleSplitError(DataError):
    pass


class SignalTooShortError(DataError):
    pass


class InsufficientPeaksError(DataError):
    pass


class DegenerateLabelsError(DataError):
    pass


class ModelError(PpgRocketError, ValueError):
    exit_code = 4
    kind = "model"


class DimensionMismatchError(ModelError):
    pass


class FitError(ModelError):
    pass


class InfeasibleQuotaError(ConfigError):
    pass
