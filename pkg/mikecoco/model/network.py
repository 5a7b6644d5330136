#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""The complete set of learnable components of a run."""

from __future__ import annotations

from typing import TYPE_CHECKING, Any

from mikecoco.mikecoco_warnings import MikecocoValidationError
from mikecoco.model.encoders import ARCHITECTURE_KEYS, PromptSet, build_dual_encoder
from mikecoco.model.meka import Meka
from mikecoco.model.mikecoco_model import MikecocoModel
from mikecoco.model.moe import IdClassifier, MoE

if TYPE_CHECKING:
    from mikecoco.base import Logger

NAMESPACES = ('image_encoder', 'text_encoder', 'prompts', 'meka', 'classifier', 'moe')


class MikecocoNetwork(MikecocoModel):
    """
    Dual encoder, prompt set, expert autoencoders, classifier and teacher.

    Each component is addressed by a checkpoint namespace, see
    `NAMESPACES`.

    """

    def __init__(
        self,
        config: dict[str, Any],
        num_ids: int,
        num_cameras: int,
        backbone: str | None = None,
        log: Logger | None = None,
    ) -> None:
        """
        Instantiate every component.

        Parameters
        ----------
        config: dict
            Training configuration.
        num_ids: int
            Number of source identities.
        num_cameras: int
            Number of source cameras.
        backbone: str, optional
            Overrides `config['Backbone']`.
        log: Logger, optional
            Logger of the run.

        """
        super().__init__(log)
        self.encoder = build_dual_encoder(backbone or config['Backbone'], config, log)
        width = self.encoder.width
        experts = config['Experts']
        self.prompts = PromptSet(num_ids, experts, config['PromptLength'], width, log)
        self.meka = Meka(width, experts, num_cameras, log=log)
        self.classifier = IdClassifier(width, num_ids, log)
        self.moe = MoE(
            width,
            experts,
            num_ids,
            config['MoEHeads'],
            use_vtf=config['UseVTF'],
            log=log,
        )
        self.num_ids = num_ids
        self.num_cameras = num_cameras

    @property
    def architecture(self) -> dict[str, Any]:
        """Encoder architecture settings actually in use."""
        return dict(self.encoder.architecture)

    def collections(self) -> dict[str, MikecocoModel]:
        """
        Components by namespace.

        Returns
        -------
        dict
            Namespace -> model.

        """
        return {
            'image_encoder': self.encoder.image_encoder,
            'text_encoder': self.encoder.text_encoder,
            'prompts': self.prompts,
            'meka': self.meka,
            'classifier': self.classifier,
            'moe': self.moe,
        }

    def state(self) -> dict[str, dict[str, Any]]:
        """State dictionaries grouped by namespace."""
        return {name: model.state_dict() for name, model in self.collections().items()}

    def load_state(
        self, state: dict[str, dict[str, Any]], namespaces: tuple[str, ...] = NAMESPACES
    ) -> None:
        """
        Load selected namespaces of a checkpoint state.

        Raises
        ------
        MikecocoValidationError
            If a requested namespace is missing or does not fit.

        """
        collections = self.collections()
        for name in namespaces:
            if name not in state:
                msg = f'Checkpoint state has no `{name}` entry.'
                raise MikecocoValidationError(msg)
            try:
                collections[name].load_state_dict(state[name])
            except RuntimeError as exc:
                msg = f'Checkpoint `{name}` parameters do not fit the model: {exc}'
                raise MikecocoValidationError(msg) from exc

    def hashes(self, names: list[str] | tuple[str, ...] = NAMESPACES) -> dict[str, str]:
        """Parameter hash of each named collection."""
        collections = self.collections()
        return {name: collections[name].parameter_hash() for name in names}

    @classmethod
    def from_checkpoint(
        cls, payload: dict[str, Any], log: Logger | None = None
    ) -> MikecocoNetwork:
        """
        Rebuild the network stored in a checkpoint payload.

        The stored configuration carries the architecture that was in
        use, so external weights are not needed again.

        Returns
        -------
        MikecocoNetwork
            Network with every stored namespace loaded.

        """
        config = dict(payload['config'])
        network = cls(
            config, payload['num_ids'], payload['num_cameras'], backbone='toy', log=log
        )
        network.load_state(payload['state'], tuple(payload['state']))
        return network


def snapshot_config(config: dict[str, Any], network: MikecocoNetwork) -> dict[str, Any]:
    """
    Configuration to store in a checkpoint.

    The encoder architecture of the network replaces the configured one
    and the backbone is recorded as rebuilt from stored weights.

    Returns
    -------
    dict
        Checkpoint configuration.

    """
    snapshot = dict(config)
    snapshot.update({k: network.architecture[k] for k in ARCHITECTURE_KEYS})
    return snapshot
