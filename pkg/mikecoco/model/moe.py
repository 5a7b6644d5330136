#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""
Mixture-of-experts teacher and the student identity classifier.

The teacher fuses the expert latents with their text features through
self-attention and cross-attention, scores every expert with a gate,
and mixes K identity heads into the teacher logits. Its logits are
distilled into the student classifier on the image feature.

"""

from __future__ import annotations

from typing import TYPE_CHECKING

import torch
import torch.nn.functional as F  # noqa: N812
from torch import nn

from mikecoco.mikecoco_warnings import MikecocoValidationError
from mikecoco.model.mikecoco_model import MikecocoModel

if TYPE_CHECKING:
    from mikecoco.base import Logger


class TeacherOutput:
    """
    Teacher forward pass results.

    Attributes
    ----------
    fused: torch.Tensor
        b x d fused features.
    gate_weights: torch.Tensor
        b x K expert weights; rows lie on the probability simplex.
    z_t: torch.Tensor
        b x N_id teacher logits.

    """

    __slots__ = ['fused', 'gate_weights', 'z_t']

    def __init__(
        self, fused: torch.Tensor, gate_weights: torch.Tensor, z_t: torch.Tensor
    ) -> None:
        self.fused = fused
        self.gate_weights = gate_weights
        self.z_t = z_t


class IdClassifier(MikecocoModel):
    """Student identity classifier on the global image feature."""

    def __init__(self, width: int, num_ids: int, log: Logger | None = None) -> None:
        super().__init__(log)
        self.head = nn.Linear(width, num_ids)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.head(features)


class MoE(MikecocoModel):
    """
    Visual-textual fusion, expert gate and identity heads.

    Expert tokens carry no positional encoding, so the fused feature is
    invariant to a joint permutation of the visual and text tokens.

    Parameters
    ----------
    width: int
        Feature width d.
    num_experts: int
        Expert count K; one identity head per expert.
    num_ids: int
        Number of source identities.
    heads: int
        Attention heads of the fusion blocks.
    use_vtf: bool
        If False, the fusion blocks are bypassed and the fused feature
        is the mean of the expert latents.
    log: Logger, optional
        Logger of the run.

    """

    def __init__(
        self,
        width: int,
        num_experts: int,
        num_ids: int,
        heads: int = 2,
        *,
        use_vtf: bool = True,
        log: Logger | None = None,
    ) -> None:
        super().__init__(log)
        if width % heads:
            msg = f'Width {width} is not divisible by {heads} attention heads.'
            raise MikecocoValidationError(msg)
        self.num_experts = num_experts
        self.use_vtf = use_vtf
        self.sa_norm = nn.LayerNorm(width)
        self.sa = nn.MultiheadAttention(width, heads, batch_first=True)
        self.ca_norm = nn.LayerNorm(width)
        self.ca_text_norm = nn.LayerNorm(width)
        self.ca = nn.MultiheadAttention(width, heads, batch_first=True)
        self.gate_layer = nn.Linear(2 * width, num_experts)
        nn.init.zeros_(self.gate_layer.weight)
        nn.init.zeros_(self.gate_layer.bias)
        self.reid_heads = nn.ModuleList(
            nn.Linear(width, num_ids) for _ in range(num_experts)
        )

    def vtf_fuse(self, visual: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
        """
        Fuse expert latents with their text features.

        Parameters
        ----------
        visual: torch.Tensor
            b x K x d expert latents.
        text: torch.Tensor
            b x K x d text features.

        Returns
        -------
        torch.Tensor
            b x d fused feature F_C.

        Raises
        ------
        MikecocoValidationError
            If the visual and text shapes differ.

        """
        if visual.shape != text.shape:
            msg = (
                f'Visual tokens {tuple(visual.shape)} and text tokens '
                f'{tuple(text.shape)} must have the same shape.'
            )
            raise MikecocoValidationError(msg)
        if not self.use_vtf:
            return visual.mean(dim=1)
        x = visual
        q = self.sa_norm(x)
        x = x + self.sa(q, q, q, need_weights=False)[0]
        kv = self.ca_text_norm(text)
        x = x + self.ca(self.ca_norm(x), kv, kv, need_weights=False)[0]
        return x.mean(dim=1)

    def gate(self, fused: torch.Tensor, text_pooled: torch.Tensor) -> torch.Tensor:
        """
        Expert weights from the fused and pooled text features.

        Returns
        -------
        torch.Tensor
            b x K softmax weights.

        """
        return F.softmax(self.gate_layer(torch.cat([fused, text_pooled], dim=-1)), dim=-1)

    def head_logits(self, fused: torch.Tensor) -> torch.Tensor:
        """
        Identity logits of every head.

        Returns
        -------
        torch.Tensor
            b x K x N_id logits.

        """
        return torch.stack([head(fused) for head in self.reid_heads], dim=1)

    def teacher_logits(
        self, fused: torch.Tensor, gate_weights: torch.Tensor
    ) -> torch.Tensor:
        """
        Gate-weighted sum of the head logits.

        Returns
        -------
        torch.Tensor
            b x N_id teacher logits Z_t.

        Raises
        ------
        MikecocoValidationError
            If the gate does not have one weight per head.

        """
        if gate_weights.shape[-1] != len(self.reid_heads):
            msg = (
                f'{gate_weights.shape[-1]} gate weights received for '
                f'{len(self.reid_heads)} heads.'
            )
            raise MikecocoValidationError(msg)
        return (gate_weights.unsqueeze(-1) * self.head_logits(fused)).sum(dim=1)

    def forward(self, visual: torch.Tensor, text: torch.Tensor) -> TeacherOutput:
        """
        Full teacher pass.

        Parameters
        ----------
        visual: torch.Tensor
            b x K x d expert latents.
        text: torch.Tensor
            b x K x d text features of each sample's identity.

        Returns
        -------
        TeacherOutput
            Fused feature, gate weights and teacher logits.

        """
        fused = self.vtf_fuse(visual, text)
        weights = self.gate(fused, text.mean(dim=1))
        return TeacherOutput(fused, weights, self.teacher_logits(fused, weights))


def distill_loss(
    z_s: torch.Tensor, z_t: torch.Tensor, *, reverse: bool = False
) -> torch.Tensor:
    """
    KL divergence between the student and teacher distributions.

    Computes KL(softmax(z_s) || softmax(z_t)), averaged over the batch.
    With `reverse`, the arguments swap roles. Gradients reach both
    sides unless the caller detaches one of them.

    Returns
    -------
    torch.Tensor
        Non-negative scalar.

    """
    log_p = F.log_softmax(z_s, dim=-1)
    log_q = F.log_softmax(z_t, dim=-1)
    if reverse:
        log_p, log_q = log_q, log_p
    return (log_p.exp() * (log_p - log_q)).sum(dim=-1).mean()
