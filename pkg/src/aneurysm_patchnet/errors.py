"""Exception hierarchy shared by all modules."""


class PatchNetError(Exception):
    """Base class for every error raised by this package."""


class DomainError(PatchNetError, ValueError):
    """An input lies outside the domain an operation is defined on."""


class ValidationError(PatchNetError, ValueError):
    """A record, file or configuration violates its declared invariants."""


class GenerationError(PatchNetError, RuntimeError):
    """The phantom generator could not satisfy its placement constraints."""


class SamplingExhausted(PatchNetError, RuntimeError):
    """No admissible patch center was found within the attempt budget."""


class PatchTooLarge(DomainError):
    """A weak label does not fit inside the small-scale patch."""


class DatasetBuildError(PatchNetError, RuntimeError):
    """Too many subjects failed during dataset assembly."""


class TrainingError(PatchNetError, RuntimeError):
    """Training diverged (non-finite loss) or was given inconsistent data."""


class ConfigError(ValidationError):
    """A pipeline configuration failed schema validation."""
