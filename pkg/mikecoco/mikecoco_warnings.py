#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""mikecoco warning and error classes."""

from __future__ import annotations


class MikecocoWarning(Warning):
    """Custom warning for specific use in the mikecoco project."""


class MikecocoValidationError(ValueError):
    """
    Exception raised for invalid inputs.

    Covers malformed manifests, mismatched shapes, non-finite grids,
    out-of-range labels and checkpoints of the wrong stage.

    Attributes
    ----------
    message: str
        Explanation of the error.

    """

    def __init__(self, message: str = 'Invalid input.') -> None:
        """Instantiate the error."""
        self.message = message
        super().__init__(self.message)


class MikecocoInvalidConfigError(MikecocoValidationError):
    """
    Exception raised for errors in the configuration of mikecoco.

    Attributes
    ----------
    message: str
        Explanation of the error.

    """

    def __init__(
        self, message: str = 'Invalid options in configuration file.'
    ) -> None:
        """Instantiate the error."""
        super().__init__(message)


class NonFiniteLossError(RuntimeError):
    """
    Exception raised when a training step yields a non-finite loss.

    Attributes
    ----------
    message: str
        Explanation of the error.
    stage: str
        Stage tag of the run.
    step: int
        Global step index at which the loss diverged.
    indices: list of int
        Manifest record indices of the offending batch.

    """

    def __init__(self, stage: str, step: int, indices: list[int]) -> None:
        self.stage = stage
        self.step = step
        self.indices = list(indices)
        self.message = (
            f'Non-finite loss in {stage} at step {step}. '
            f'Batch record indices: {self.indices}'
        )
        super().__init__(self.message)


class FreezeContractError(RuntimeError):
    """Exception raised when a frozen parameter collection changed."""

    def __init__(self, collection: str, stage: str) -> None:
        self.collection = collection
        self.stage = stage
        self.message = (
            f'Parameters of `{collection}` changed during {stage}, '
            f'although they are frozen in that stage.'
        )
        super().__init__(self.message)
