#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""
Multi-expert adversarial autoencoders over the global image feature.

K single-layer autoencoders map the feature into K latent
perspectives. A shared K-way discriminator keeps each perspective
identifiable while the alignment loss pushes them apart, and a camera
classifier on a separate projection supervises camera-specific
content.

"""

from __future__ import annotations

from typing import TYPE_CHECKING

import torch
import torch.nn.functional as F  # noqa: N812
from torch import nn

from mikecoco.mikecoco_warnings import MikecocoValidationError
from mikecoco.model.mikecoco_model import MikecocoModel
from mikecoco.objectives import LossReport

if TYPE_CHECKING:
    from mikecoco.base import Logger


class ExpertBundle:
    """
    Outputs of the expert autoencoders for a batch.

    Attributes
    ----------
    latents: torch.Tensor
        b x K x d latents; slice k comes from encoder k only.
    latents_unit: torch.Tensor
        Unit-normalized copy of `latents`.
    reconstructions: torch.Tensor
        b x K x d decoder outputs.
    expert_logits: torch.Tensor
        b x K x K discriminator logits; row k scores latent k.
    camera_logits: torch.Tensor or None
        b x N_cam camera logits, None without a camera classifier.

    """

    __slots__ = [
        'camera_logits',
        'expert_logits',
        'latents',
        'latents_unit',
        'reconstructions',
    ]

    def __init__(
        self,
        latents: torch.Tensor,
        reconstructions: torch.Tensor,
        expert_logits: torch.Tensor,
        camera_logits: torch.Tensor | None = None,
    ) -> None:
        self.latents = latents
        self.latents_unit = F.normalize(latents, dim=-1)
        self.reconstructions = reconstructions
        self.expert_logits = expert_logits
        self.camera_logits = camera_logits

    @property
    def num_experts(self) -> int:
        """Number of expert perspectives K."""
        return self.latents.shape[1]


def _near_identity(layer: nn.Linear, noise: float) -> None:
    with torch.no_grad():
        layer.weight.copy_(torch.eye(layer.in_features))
        if noise > 0:
            layer.weight.add_(torch.randn_like(layer.weight) * noise)
        layer.bias.zero_()


class Meka(MikecocoModel):
    """
    Expert autoencoders, expert discriminator and camera classifier.

    Parameters
    ----------
    width: int
        Feature width d.
    num_experts: int
        Expert count K, at least 2.
    num_cameras: int
        Camera count of the source domain. 0 disables the camera
        classifier.
    init_noise: float
        Standard deviation of the Gaussian noise added to the identity
        initialization of the autoencoder weights.
    log: Logger, optional
        Logger of the run.

    Raises
    ------
    MikecocoValidationError
        If fewer than two experts are requested.

    """

    def __init__(
        self,
        width: int,
        num_experts: int,
        num_cameras: int = 0,
        init_noise: float = 0.01,
        log: Logger | None = None,
    ) -> None:
        super().__init__(log)
        if num_experts < 2:  # noqa: PLR2004
            msg = (
                f'At least two experts are required, received {num_experts}. '
                f'The alignment loss compares expert pairs.'
            )
            raise MikecocoValidationError(msg)
        self.num_experts = num_experts
        self.encoders = nn.ModuleList(nn.Linear(width, width) for _ in range(num_experts))
        self.decoders = nn.ModuleList(nn.Linear(width, width) for _ in range(num_experts))
        for layer in [*self.encoders, *self.decoders]:
            _near_identity(layer, init_noise)
        self.discriminator = nn.Linear(width, num_experts)
        self.camera_map = nn.Linear(width, width)
        self.camera_classifier = (
            nn.Linear(width, num_cameras) if num_cameras > 0 else None
        )

    def encode(self, features: torch.Tensor) -> torch.Tensor:
        """
        Expert latents of a feature batch.

        Returns
        -------
        torch.Tensor
            b x K x d latents.

        """
        return torch.stack([encoder(features) for encoder in self.encoders], dim=1)

    def forward(self, features: torch.Tensor) -> ExpertBundle:
        """
        Run every expert on a feature batch.

        Parameters
        ----------
        features: torch.Tensor
            b x d global image features.

        Returns
        -------
        ExpertBundle
            Latents, reconstructions and logits.

        Raises
        ------
        MikecocoValidationError
            If the features are not finite.

        """
        if not torch.isfinite(features).all():
            msg = 'Expert forward pass received non-finite features.'
            raise MikecocoValidationError(msg)
        latents = self.encode(features)
        reconstructions = torch.stack(
            [decoder(latents[:, k]) for k, decoder in enumerate(self.decoders)], dim=1
        )
        expert_logits = self.discriminator(latents)
        camera_logits = None
        if self.camera_classifier is not None:
            camera_logits = self.camera_classifier(self.camera_map(features))
        return ExpertBundle(latents, reconstructions, expert_logits, camera_logits)

    expert_forward = forward


def loss_rc(bundle: ExpertBundle, features: torch.Tensor) -> torch.Tensor:
    """
    Reconstruction loss.

    Returns
    -------
    torch.Tensor
        Mean squared error between each reconstruction and the input,
        averaged over experts, feature entries and the batch.

    """
    target = features.unsqueeze(1).expand_as(bundle.reconstructions)
    return F.mse_loss(bundle.reconstructions, target)


def loss_ec(bundle: ExpertBundle) -> torch.Tensor:
    """
    Expert perspective classification loss.

    The latent of encoder k carries the perspective label k.

    Returns
    -------
    torch.Tensor
        Cross-entropy averaged over the batch and the experts.

    """
    b, k, _ = bundle.expert_logits.shape
    labels = torch.arange(k, device=bundle.expert_logits.device).repeat(b)
    return F.cross_entropy(bundle.expert_logits.reshape(b * k, k), labels)


def loss_al(bundle: ExpertBundle) -> torch.Tensor:
    """
    Alignment loss pushing expert latents apart.

    Uses unit-normalized latents, so the value lies in [-4, 0].

    Returns
    -------
    torch.Tensor
        Negative mean squared distance over ordered expert pairs,
        averaged over the batch.

    Raises
    ------
    MikecocoValidationError
        If the bundle holds a single expert.

    """
    k = bundle.num_experts
    if k < 2:  # noqa: PLR2004
        msg = 'The alignment loss needs at least two experts.'
        raise MikecocoValidationError(msg)
    unit = bundle.latents_unit
    diff = unit.unsqueeze(2) - unit.unsqueeze(1)
    pairwise = (diff**2).sum(dim=(1, 2, 3))
    return -(pairwise / (k * k - k)).mean()


def loss_cc(bundle: ExpertBundle, cameras: torch.Tensor | None) -> torch.Tensor:
    """
    Camera classification loss.

    Returns
    -------
    torch.Tensor
        Cross-entropy of the camera logits, averaged over the batch.

    Raises
    ------
    MikecocoValidationError
        If camera labels or the camera classifier are missing.

    """
    if cameras is None or bundle.camera_logits is None:
        msg = (
            'The camera loss needs camera labels. Set `UseCameraLoss` to '
            'false or `Lambda1` to 0 for manifests without cameras.'
        )
        raise MikecocoValidationError(msg)
    return F.cross_entropy(bundle.camera_logits, cameras)


def mean_pairwise_distance(latents: torch.Tensor) -> float:
    """
    Mean Euclidean distance between unit expert latents of the same image.

    Returns
    -------
    float
        Average over ordered expert pairs and the batch.

    """
    unit = F.normalize(latents.detach(), dim=-1)
    k = unit.shape[1]
    dist = torch.cdist(unit, unit)
    return float(dist.sum(dim=(1, 2)).mean() / (k * k - k))


def loss_meka(
    components: dict[str, torch.Tensor],
    lambda1: float,
    lambda2: float,
    lambda3: float,
) -> tuple[torch.Tensor, LossReport]:
    """
    Weighted MEKA objective.

    Parameters
    ----------
    components: dict
        `L_EC`, `L_RC`, `L_AL` and optionally `L_CC`.
    lambda1, lambda2, lambda3: float
        Weights of the camera, reconstruction and alignment terms.

    Returns
    -------
    tuple
        The weighted total and the report naming every component.

    """
    weights = {'L_EC': 1.0, 'L_CC': lambda1, 'L_RC': lambda2, 'L_AL': lambda3}
    present = {name: components[name] for name in weights if name in components}
    report = LossReport(
        present, {name: weights[name] for name in present}, stage='stage1'
    )
    return report.total, report
