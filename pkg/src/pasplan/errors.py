"""Exception hierarchy shared across the planner."""


class PlannerError(Exception):
    """Base class for every error raised by this package."""


class ContractViolation(PlannerError, ValueError):
    """A precondition of an operation was not met by its caller."""


class ConfigError(PlannerError, ValueError):
    pass


class IngestionError(PlannerError):
    """Upstream perception output references something the vocabulary lacks."""


class SchemaError(PlannerError):
    """A record is missing a field or has the wrong shape.

    ``path`` names the offending field, e.g. ``"start_step"`` or ``"clips[3].action"``.
    """

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class TransportError(PlannerError):
    """Backend or embedding service could not be reached. Retriable."""


class CapabilityError(PlannerError):
    """Backend does not offer a feature the planner needs (e.g. log-probs)."""


class EmptyGenerationError(PlannerError):
    pass


class ScoringError(PlannerError):
    """YES/NO scores could not be extracted from a backend response."""

    def __init__(self, message: str, top_tokens=()):
        self.top_tokens = tuple(top_tokens)
        super().__init__(f"{message}; top tokens seen: {list(self.top_tokens)}")


class GroundingError(PlannerError):
    pass


class ProviderError(PlannerError):
    """Embedding provider returned unusable vectors."""


class SearchError(PlannerError):
    """Search could not complete. Carries the partial trace for debugging."""

    def __init__(self, message: str, trace=None):
        self.trace = trace
        super().__init__(message)


class OracleRefusal(PlannerError):
    """Exhaustive enumeration would exceed the configured path budget."""


class ReplayMissError(TransportError):
    """A replayed run asked for a backend interaction that was never recorded."""
