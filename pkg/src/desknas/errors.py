"""Exception types shared across the package."""


class DeskNasError(Exception):
    """Base class for all package errors."""


class DimensionError(DeskNasError):
    """Shapes do not conform for an operation."""


class ContractError(DeskNasError):
    """A documented precondition was violated."""


class CatalogError(DeskNasError):
    """Unknown operation name."""


class ConfigError(DeskNasError):
    """Run configuration failed schema validation."""


class IntegrityError(DeskNasError):
    """Stored artifact does not match its manifest hashes."""


class LookupError_(DeskNasError):
    """Benchmark lookup for an unknown genotype."""


class SearchDiverged(DeskNasError):
    """Search aborted on a non-finite loss; state preserved for inspection."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
