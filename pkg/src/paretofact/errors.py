"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes or vector lengths do not match."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class LeakageError(ContractError):
    """Generator-training and target-model data overlap."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class FormatError(ValueError):
    """A binary or JSON file does not follow its documented layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} at byte offset {offset}"
        super().__init__(message)
        self.offset = offset
