class ShapeError(ValueError):
    """Operand extents are incompatible with an operation."""


class ContractError(RuntimeError):
    """An operation was called outside its documented preconditions."""


class ConfigError(ValueError):
    """A model, dataset or experiment configuration is invalid."""


class TrainingAborted(RuntimeError):
    """Training hit a non-finite loss."""

    def __init__(self, message, epoch=None, batch=None, model=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.model = model
