"""Exception types shared across the package."""


class DebcseError(Exception):
    """Base class for all package errors."""


class DataError(DebcseError):
    """Input data is missing, malformed, or violates a format contract."""


class EmbeddingFormatError(DataError):
    """An embedding file failed header or payload validation."""


class TrainingDivergence(DebcseError):
    """A parameter or gradient became non-finite during optimization."""

    def __init__(self, name: str, detail: str = ""):
        self.name = name
        msg = f"non-finite values in {name}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
