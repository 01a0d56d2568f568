#!/usr/bin/env python
"""
exceptions.py: Exception hierarchy for reviewgraph.

Every error raised deliberately by the package derives from
`ReviewGraphError`, so the command line can report it as a single
machine-parsable line. Each class also derives from the matching builtin
exception, so callers can keep catching `ValueError` and friends.
"""

from typing import Any, Optional


class ReviewGraphError(Exception):
    """Base class for all reviewgraph errors."""


class ShapeError(ReviewGraphError, ValueError):
    """Array dimensions do not line up."""


class ParseError(ReviewGraphError, ValueError):
    """A file could not be parsed.

    Args:
        message: Description of the problem.
        line: 1-based line number in the offending file, if known.
    """

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DanglingReviewError(ParseError):
    """An interaction references a review row outside the review table."""


class SamplingError(ReviewGraphError, ValueError):
    """Sampling cannot proceed (no negatives left, empty synthetic world)."""


class TrainingDivergedError(ReviewGraphError, RuntimeError):
    """Training produced a non-finite loss.

    Args:
        message: Diagnostic message.
        epoch: Epoch at which the loss became non-finite.
        checkpoint: The last finite state, when one exists.
    """

    def __init__(
        self, message: str, epoch: Optional[int] = None, checkpoint: Any = None
    ) -> None:
        self.epoch = epoch
        self.checkpoint = checkpoint
        super().__init__(message)


class MissingArtifactError(ReviewGraphError, FileNotFoundError):
    """A stage input is missing on disk.

    Args:
        path: The missing artifact.
        stage: The command that produces it.
    """

    def __init__(self, path: Any, stage: str) -> None:
        self.path = path
        self.stage = stage
        super().__init__(f"missing {path}; run stage `{stage}` first")


class FingerprintMismatchError(ReviewGraphError, ValueError):
    """An input artifact was produced under a different configuration."""
