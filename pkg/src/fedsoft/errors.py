"""Exception types shared across the package."""

from __future__ import annotations


class ValidationError(ValueError):
    """An argument violates a documented precondition."""


class ShapeError(ValidationError):
    """An array has the wrong shape or an inconsistent dimension."""


class ConfigError(ValueError):
    """A run configuration is invalid; carries every problem found."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class FormatError(ValueError):
    """A serialized artifact (message, IDX file, CSV) cannot be parsed."""


class DecodeError(FormatError):
    """An entropy-coded payload is corrupt or truncated."""


class ProtocolError(RuntimeError):
    """Round state is inconsistent with the requested protocol step."""


class PartitionError(RuntimeError):
    """A data partition cannot satisfy its constraints."""
