"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation accepts."""


class NumericalError(FloatingPointError):
    """A non-finite value appeared during a computation.

    ``where`` names the layer, operation or individual that produced it.
    """

    def __init__(self, message: str, where: str | None = None, individual_id: int | None = None):
        super().__init__(message)
        self.where = where
        self.individual_id = individual_id


class IdxFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ConfigError(ValueError):
    pass


class TestSetAccessError(RuntimeError):
    """The held-out test partition was touched more than once for a run."""

    __test__ = False  # keep pytest from collecting this as a test class
