"""Exception hierarchy shared by all modules."""


class ContractError(ValueError):
    """A precondition or interface contract was violated by the caller."""


class NumericError(FloatingPointError):
    """A non-finite value appeared during a computation."""

    def __init__(self, message, layer=None, epoch=None):
        super().__init__(message)
        self.layer = layer
        self.epoch = epoch


class CheckpointError(ValueError):
    """A model file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedError(NotImplementedError):
    """The requested construction is not available for this input."""


class NoFeasibleEpochError(RuntimeError):
    """No training checkpoint satisfied the divergence threshold."""

    def __init__(self, message, reports):
        super().__init__(message)
        self.reports = list(reports)


class NoMinimalDepthError(RuntimeError):
    """No probed depth reached the divergence threshold."""

    def __init__(self, message, table):
        super().__init__(message)
        self.table = dict(table)
