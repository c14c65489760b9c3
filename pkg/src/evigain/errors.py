"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class EvigainError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(EvigainError, ValueError):
    """An input violates a documented precondition or invariant."""


class ConfigError(EvigainError):
    """Configuration file is malformed or contains unknown/invalid keys."""


class RecordParseError(EvigainError):
    """A serialized record could not be parsed; carries path and line number."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        loc = f"{path}:{line}: " if path is not None and line is not None else ""
        super().__init__(f"{loc}{message}")


class TeacherEndpointError(EvigainError):
    """Network failure or bad response from a remote teacher endpoint."""


class MissingLogprobsError(TeacherEndpointError):
    """Endpoint response did not contain per-token log-probabilities."""


class TokenAlignmentError(TeacherEndpointError):
    """Returned tokens do not reconstruct the requested answer."""


class ScoringError(EvigainError):
    """Failure while scoring a triplet; carries the triplet id."""

    def __init__(self, triplet_id: str, message: str):
        self.triplet_id = triplet_id
        super().__init__(f"triplet {triplet_id!r}: {message}")


class UnbalanceableDatasetError(EvigainError):
    """A labeled stream has an empty positive or negative class."""

    def __init__(self, positives: int, negatives: int, discarded: int):
        self.positives = positives
        self.negatives = negatives
        self.discarded = discarded
        super().__init__(
            "cannot balance dataset: "
            f"{positives} positives, {negatives} negatives, {discarded} discarded"
        )


class SchemaMismatchError(EvigainError):
    """Feature vector does not match the model's feature schema."""


class NumericalError(EvigainError):
    """A non-finite value appeared where a finite one is required."""


class TrainingDivergedError(NumericalError):
    """Total training loss became non-finite."""


class NoEvaluablePairsError(EvigainError):
    """Ranking evaluation found no query group with comparable documents."""
