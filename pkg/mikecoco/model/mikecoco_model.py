#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""MikecocoModel object and associated methods."""

from __future__ import annotations

from typing import TYPE_CHECKING

from torch import nn

from mikecoco import base

if TYPE_CHECKING:
    from mikecoco.base import Logger


class MikecocoModel(nn.Module):
    """Generic model class to manage methods shared between all models in mikecoco."""

    def __init__(self, log: Logger | None = None) -> None:
        """
        Instantiate MikecocoModel objects.

        Parameters
        ----------
        log: Logger, optional
            Logger of the run that owns the model.

        """
        super().__init__()
        self.log = log
        self._frozen = False

    @property
    def frozen(self) -> bool:
        """True when the parameters are excluded from optimization."""
        return self._frozen

    def freeze(self) -> MikecocoModel:
        """
        Stop gradient updates and switch to evaluation mode.

        Returns
        -------
        MikecocoModel
            The model itself.

        """
        for parameter in self.parameters():
            parameter.requires_grad_(False)
        self._frozen = True
        self.eval()
        if self.log:
            self.log.debug(f'Froze {type(self).__name__}')
        return self

    def unfreeze(self) -> MikecocoModel:
        """
        Re-enable gradient updates.

        Returns
        -------
        MikecocoModel
            The model itself.

        """
        for parameter in self.parameters():
            parameter.requires_grad_(True)
        self._frozen = False
        return self

    def train(self, mode: bool = True) -> MikecocoModel:  # noqa: FBT001, FBT002
        """
        Set the training mode; frozen models stay in evaluation mode.

        Returns
        -------
        MikecocoModel
            The model itself.

        """
        super().train(mode and not self._frozen)
        return self

    def parameter_hash(self) -> str:
        """
        Hash of the exact parameter and buffer bytes.

        Returns
        -------
        str
            Hex digest.

        """
        return base.parameter_hash(
            [*self.parameters(), *(b for b in self.buffers() if b.is_floating_point())]
        )
