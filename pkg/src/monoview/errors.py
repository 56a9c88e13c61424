"""Exception types shared across the package."""


class MonoviewError(Exception):
    """Base class for all package errors."""


class DomainError(MonoviewError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class ValidationError(MonoviewError, ValueError):
    """An input violates a type invariant (shape, orthonormality, finiteness)."""


class ConfigurationError(MonoviewError, ValueError):
    pass


class IngestionError(MonoviewError, OSError):
    """A dataset, depth or image file could not be read or is malformed."""


class InitializationError(MonoviewError, RuntimeError):
    """A pretrained backend (feature extractor, perceptual metric) is unavailable."""


class TrainingError(MonoviewError, RuntimeError):
    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = breakdown or {}
