"""Error types shared across the library."""


class ContractError(ValueError):
    """An operation was called with arguments violating its contract."""


class DimensionMismatchError(ContractError):
    """Vectors of different dimensions were combined."""


class NonFiniteError(ContractError):
    """A parameter vector contains NaN or Inf entries."""


class NoProgressContact(Exception):
    """Stochastic reweighting was requested for a client with zero local steps.

    The caller must send the anchor model unchanged instead of dividing by
    alpha.
    """


class IdxFormatError(ValueError):
    """Base class for IDX file parse failures."""


class IdxMagicError(IdxFormatError):
    """File does not start with the expected IDX magic number."""


class IdxTruncatedError(IdxFormatError):
    """File ends before the payload announced in its header."""


class IdxCountMismatchError(IdxFormatError):
    """Image file and label file disagree on the number of examples."""


class ConfigError(ValueError):
    """A run configuration field failed validation."""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")
