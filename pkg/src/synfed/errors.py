"""Exception types shared across the package."""

from __future__ import annotations


class SynfedError(Exception):
    """Base class for all package-specific errors."""


class ParseError(SynfedError):
    """Malformed input file (bad CSV cell, bad hierarchy line, ...)."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc = f" [{loc}]"
        super().__init__(f"{message}{loc}")
        self.path = path
        self.line = line


class HierarchyError(SynfedError):
    """Inconsistent generalization hierarchy (conflicting paths, bad ranges)."""


class SchemaError(SynfedError):
    """Dataset does not match its declared attribute schema."""


class ConfigError(SynfedError):
    """Invalid configuration value."""


class ContractViolation(SynfedError):
    """A documented precondition was violated by the caller."""


class ItemSetTooLargeError(SynfedError):
    """A generalized item covers more than 62 leaves; 2^n arithmetic refused."""


class BudgetExceededError(SynfedError):
    """Verification would exceed the combination-enumeration budget."""


class SingleClassError(SynfedError):
    """An operation that needs both labels saw only one."""


class AnonymizationError(SynfedError):
    """The requested privacy level cannot be reached on this input."""


class DivergenceError(SynfedError):
    """Training produced non-finite parameters."""

    def __init__(self, message: str, *, site: int | None = None, round_index: int | None = None):
        super().__init__(message)
        self.site = site
        self.round_index = round_index


class NoLegitimateMappingError(SynfedError):
    """No equivalence class covers the given sample."""


class SchemaMismatchError(SynfedError):
    """Encoding schema / hierarchy fingerprints disagree between artifacts."""
