"""Exception hierarchy of moad-fusion."""

from typing import Optional


class MoadFusionError(Exception):
    """Base class of every error raised by this package."""


class PlacementError(MoadFusionError):
    """Scene generation could not place all objects within the retry budget."""

    def __init__(self, seed: int, placed: int, requested: int) -> None:
        self.seed = seed
        self.placed = placed
        self.requested = requested
        super().__init__(
            f"scene seed {seed}: placed {placed} of {requested} objects before running out of retries"
        )


class CorruptionError(MoadFusionError):
    """A corruption spec cannot be applied to the given grid."""


class TokenizationError(MoadFusionError):
    """Grid features do not fit the tokenizer or positional embedding."""


class BranchInputError(MoadFusionError):
    """A decoding branch is missing the token sets it needs."""

    def __init__(self, branch: str, message: str) -> None:
        self.branch = branch
        super().__init__(f"branch {branch}: {message}")


class MatchingError(MoadFusionError):
    """The assignment problem is ill-posed (non-finite costs)."""


class CheckpointError(MoadFusionError):
    """A checkpoint container is malformed or truncated."""

    def __init__(self, message: str, key: Optional[str] = None) -> None:
        self.key = key
        super().__init__(f"{message} (tensor '{key}')" if key is not None else message)


class SchemaVersionError(MoadFusionError):
    """A persisted record carries an unsupported schema version."""

    def __init__(self, found: str, expected: str, source: str = "") -> None:
        self.found = found
        self.expected = expected
        where = f"{source}: " if source else ""
        super().__init__(f"{where}schema version {found!r} is not supported (expected {expected!r})")


class TrainingDivergenceError(MoadFusionError):
    """A training step produced a non-finite loss."""

    def __init__(self, step: int, stage: int, value: float) -> None:
        self.step = step
        self.stage = stage
        self.value = value
        super().__init__(f"stage {stage} diverged at step {step}: loss={value}")


class InferenceModeError(MoadFusionError):
    """Requested inference mode does not match the available modalities."""


class DatasetError(MoadFusionError):
    """A dataset split is missing, incomplete or inconsistent."""
