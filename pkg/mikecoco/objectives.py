#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""Visual-text contrastive, identity and stage-level objectives."""

from __future__ import annotations

import torch
import torch.nn.functional as F  # noqa: N812

from mikecoco.mikecoco_warnings import MikecocoValidationError


class LossReport:
    """
    Named loss components and their weights.

    The total is the weighted sum of the components. Components keep
    their autograd graph, so `total` can be back-propagated.

    Attributes
    ----------
    components: dict
        Loss name -> scalar tensor.
    weights: dict
        Loss name -> weight in the total.
    stage: str
        `stage1` or `stage2`.

    """

    __slots__ = ['components', 'stage', 'weights']

    def __init__(
        self,
        components: dict[str, torch.Tensor],
        weights: dict[str, float],
        stage: str,
    ) -> None:
        if set(components) != set(weights):
            msg = (
                f'Loss components {sorted(components)} and weights '
                f'{sorted(weights)} must name the same terms.'
            )
            raise MikecocoValidationError(msg)
        self.components = {
            name: torch.as_tensor(value, dtype=torch.float32)
            if not isinstance(value, torch.Tensor)
            else value
            for name, value in components.items()
        }
        self.weights = {name: float(w) for name, w in weights.items()}
        self.stage = stage

    @property
    def total(self) -> torch.Tensor:
        """Weighted sum of the components."""
        terms = [self.weights[n] * c for n, c in self.components.items()]
        return torch.as_tensor(sum(terms)) if terms else torch.tensor(0.0)

    def names(self) -> list[str]:
        """Component names in insertion order."""
        return list(self.components)

    def is_finite(self) -> bool:
        """True when the total and every component are finite."""
        values = [*self.components.values(), self.total]
        return all(bool(torch.isfinite(v).all()) for v in values)

    def as_dict(self) -> dict[str, float]:
        """
        Plain float view of the report.

        Returns
        -------
        dict
            Every component plus `total`.

        """
        values = {n: float(c.detach()) for n, c in self.components.items()}
        values['total'] = float(self.total.detach())
        return values


def _check_identities(identities: torch.Tensor, num_ids: int) -> None:
    if identities.numel() and (identities.min() < 0 or identities.max() >= num_ids):
        msg = (
            f'Batch identities {sorted(set(identities.tolist()))} are not all '
            f'covered by the prompt table of {num_ids} identities.'
        )
        raise MikecocoValidationError(msg)


def _check_experts(latents: torch.Tensor, text: torch.Tensor) -> None:
    if latents.shape[1] != text.shape[1] or latents.shape[2] != text.shape[2]:
        msg = (
            f'Latents of shape {tuple(latents.shape)} do not match the prompt '
            f'table of shape {tuple(text.shape)}.'
        )
        raise MikecocoValidationError(msg)


def _supervised_contrastive(logits: torch.Tensor, positives: torch.Tensor) -> torch.Tensor:
    # logits: rows are anchors; positives: boolean mask of the same shape
    log_prob = F.log_softmax(logits, dim=1)
    pos = positives.to(log_prob.dtype)
    return (-(log_prob * pos).sum(dim=1) / pos.sum(dim=1)).mean()


def _batch_logits(
    latents: torch.Tensor,
    text: torch.Tensor,
    identities: torch.Tensor,
    scale: torch.Tensor | float,
) -> list[torch.Tensor]:
    # one b x b matrix per expert; row n is image n, column a is text of y_a
    _check_experts(latents, text)
    _check_identities(identities, text.shape[0])
    v = F.normalize(latents, dim=-1)
    t = F.normalize(text[identities], dim=-1)
    return [scale * v[:, k] @ t[:, k].T for k in range(latents.shape[1])]


def loss_v2t(
    latents: torch.Tensor,
    text: torch.Tensor,
    identities: torch.Tensor,
    scale: torch.Tensor | float = 1.0,
) -> torch.Tensor:
    """
    Image-to-text supervised contrastive loss.

    For each expert, every image latent in the batch is contrasted
    against the text features of all batch members' identities.
    Batch members with the same identity, the anchor included, are the
    positives.

    Parameters
    ----------
    latents: torch.Tensor
        b x K x d expert latents.
    text: torch.Tensor
        N_id x K x d prompt table.
    identities: torch.Tensor
        b identity labels.
    scale: float or torch.Tensor
        Similarity scale.

    Returns
    -------
    torch.Tensor
        Loss summed over experts and averaged over the batch.

    Raises
    ------
    MikecocoValidationError
        If a batch identity is outside the prompt table or the shapes
        disagree.

    """
    positives = identities[:, None] == identities[None, :]
    return torch.stack(
        [
            _supervised_contrastive(logits, positives)
            for logits in _batch_logits(latents, text, identities, scale)
        ]
    ).sum()


def loss_t2v(
    latents: torch.Tensor,
    text: torch.Tensor,
    identities: torch.Tensor,
    scale: torch.Tensor | float = 1.0,
) -> torch.Tensor:
    """
    Text-to-image supervised contrastive loss.

    The transpose direction of `loss_v2t`: the text feature of each
    batch member's identity is contrasted against the image latents of
    the batch.

    Returns
    -------
    torch.Tensor
        Loss summed over experts and averaged over the batch.

    """
    positives = identities[:, None] == identities[None, :]
    return torch.stack(
        [
            _supervised_contrastive(logits.T, positives)
            for logits in _batch_logits(latents, text, identities, scale)
        ]
    ).sum()


def loss_v2tce(
    latents: torch.Tensor,
    text: torch.Tensor,
    identities: torch.Tensor,
    scale: torch.Tensor | float = 1.0,
    smoothing: float = 0.0,
) -> torch.Tensor:
    """
    Prompt-classifier loss.

    The prompt table acts as a classifier: for each expert, the
    similarities of an image latent to every identity's text feature are
    the logits of a smoothed cross-entropy.

    Returns
    -------
    torch.Tensor
        Cross-entropy averaged over the batch and the experts.

    """
    _check_experts(latents, text)
    _check_identities(identities, text.shape[0])
    v = F.normalize(latents, dim=-1)
    t = F.normalize(text, dim=-1)
    losses = [
        F.cross_entropy(
            scale * v[:, k] @ t[:, k].T, identities, label_smoothing=smoothing
        )
        for k in range(latents.shape[1])
    ]
    return torch.stack(losses).mean()


def loss_id(
    logits: torch.Tensor, identities: torch.Tensor, smoothing: float = 0.1
) -> torch.Tensor:
    """
    Identity cross-entropy with label smoothing.

    The target puts 1 - eps + eps / N_id on the true identity and
    eps / N_id elsewhere.

    Returns
    -------
    torch.Tensor
        Batch-mean cross-entropy.

    """
    _check_identities(identities, logits.shape[1])
    return F.cross_entropy(logits, identities, label_smoothing=smoothing)


def stage1_total(
    meka: LossReport | torch.Tensor | float,
    v2t: torch.Tensor | float,
    t2v: torch.Tensor | float,
) -> LossReport:
    """
    First-stage objective: the MEKA loss plus both contrastive terms.

    Parameters
    ----------
    meka: LossReport or scalar
        The MEKA report, whose components are carried over with their
        weights, or its precomputed total.
    v2t, t2v: scalar
        Contrastive losses.

    Returns
    -------
    LossReport
        The stage-1 report.

    """
    if isinstance(meka, LossReport):
        components = dict(meka.components)
        weights = dict(meka.weights)
    else:
        components = {'L_MEKA': torch.as_tensor(meka)}
        weights = {'L_MEKA': 1.0}
    components.update({'L_v2t': torch.as_tensor(v2t), 'L_t2v': torch.as_tensor(t2v)})
    weights.update({'L_v2t': 1.0, 'L_t2v': 1.0})
    return LossReport(components, weights, stage='stage1')


def stage2_total(
    id_loss: torch.Tensor | float,
    v2tce: torch.Tensor | float,
    distill: torch.Tensor | float | None,
    alpha1: float,
    alpha2: float,
    teacher: torch.Tensor | float | None = None,
) -> LossReport:
    """
    Second-stage objective.

    alpha1 * L_ID + alpha2 * L_v2tce + L_dis. When the teacher's own
    supervision term is given, it joins the prompt-classifier group
    with weight alpha2.

    Returns
    -------
    LossReport
        The stage-2 report.

    """
    components = {'L_ID': torch.as_tensor(id_loss), 'L_v2tce': torch.as_tensor(v2tce)}
    weights = {'L_ID': alpha1, 'L_v2tce': alpha2}
    if teacher is not None:
        components['L_moe'] = torch.as_tensor(teacher)
        weights['L_moe'] = alpha2
    if distill is not None:
        components['L_dis'] = torch.as_tensor(distill)
        weights['L_dis'] = 1.0
    return LossReport(components, weights, stage='stage2')
