"""Exception hierarchy shared across the package.

Each family maps onto one CLI exit code (see ``wae_lab.cli``).
"""


class WaeLabError(Exception):
    pass


class ConfigError(WaeLabError, ValueError):
    """Bad configuration, bad shapes, or an invalid argument combination."""


class UsageError(WaeLabError, ValueError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class DataError(WaeLabError):
    pass


class NumericError(WaeLabError, ArithmeticError):
    """A NaN or Inf showed up where finite values are required."""


class TrainingAborted(NumericError):
    """Training hit a non-finite loss.

    ``last_good`` holds the model state at the last completed epoch.
    """

    def __init__(self, message, epoch, batch, last_good=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.last_good = last_good
