"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called outside its documented preconditions."""


class UnsupportedOrderError(ContractError):
    """Interaction order exceeds the supported maximum."""


class UndefinedRelevanceError(ValueError):
    """Relevance scores requested for a head whose blocks are all zero."""


class InputError(ValueError):
    """Malformed user data (unknown letters, short sequences, bad files)."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch, message="training diverged"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


class OracleFailure(RuntimeError):
    """A numerical oracle failed to converge within its iteration budget."""
