#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""
Dual image/text encoder and the learnable prompt set.

The built-in backbone is a small patch transformer for images and a
causal transformer over a fixed token scaffold for text. Pretrained
weights for the same architecture can be loaded from a file with
`build_dual_encoder('external:<path>', ...)`.

"""

from __future__ import annotations

import math
from pathlib import Path
from typing import TYPE_CHECKING, Any

import torch
import torch.nn.functional as F  # noqa: N812
from torch import nn

from mikecoco.mikecoco_warnings import MikecocoValidationError
from mikecoco.model.mikecoco_model import MikecocoModel

if TYPE_CHECKING:
    from collections.abc import Callable

    from mikecoco.base import Logger

PROMPT_PREFIX = ('a', 'photo', 'of', 'a')
PROMPT_SUFFIX = ('vehicle', '.')
SOT, EOT, PAD, SLOT = '<start>', '<end>', '<pad>', '<slot>'
VOCABULARY = (PAD, SOT, EOT, SLOT, *sorted(set(PROMPT_PREFIX + PROMPT_SUFFIX)))

ARCHITECTURE_KEYS = (
    'Width',
    'PatchSize',
    'ImageLayers',
    'TextLayers',
    'Heads',
    'ContextLength',
    'ImageSize',
)


def _transformer(width: int, heads: int, layers: int) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(
        d_model=width,
        nhead=heads,
        dim_feedforward=4 * width,
        dropout=0.0,
        activation='gelu',
        batch_first=True,
        norm_first=True,
    )
    return nn.TransformerEncoder(layer, layers, enable_nested_tensor=False)


class ImageEncoder(MikecocoModel):
    """Patch-embedding transformer producing one global feature per image."""

    def __init__(
        self,
        image_size: tuple[int, int],
        patch_size: int,
        width: int,
        layers: int,
        heads: int,
        log: Logger | None = None,
    ) -> None:
        super().__init__(log)
        height, wide = image_size
        if height % patch_size or wide % patch_size:
            msg = (
                f'Image size {height} x {wide} is not divisible by the '
                f'patch size {patch_size}.'
            )
            raise MikecocoValidationError(msg)
        self.image_size = (height, wide)
        num_patches = (height // patch_size) * (wide // patch_size)
        self.patch_embed = nn.Conv2d(3, width, patch_size, stride=patch_size)
        self.class_token = nn.Parameter(torch.randn(width) * width**-0.5)
        self.position = nn.Parameter(torch.randn(num_patches + 1, width) * 0.02)
        self.transformer = _transformer(width, heads, layers)
        self.ln_post = nn.LayerNorm(width)
        self.proj = nn.Linear(width, width, bias=False)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """
        Encode a batch of images.

        Parameters
        ----------
        images: torch.Tensor
            B x 3 x H x W pixels in [0, 1].

        Returns
        -------
        torch.Tensor
            B x d global features.

        Raises
        ------
        MikecocoValidationError
            If the resolution differs from the configured one.

        """
        if tuple(images.shape[-2:]) != self.image_size:
            msg = (
                f'Images of size {tuple(images.shape[-2:])} received, the '
                f'encoder is configured for {self.image_size}.'
            )
            raise MikecocoValidationError(msg)
        x = self.patch_embed(images - 0.5).flatten(2).transpose(1, 2)
        cls = self.class_token.expand(x.shape[0], 1, -1)
        x = torch.cat([cls, x], dim=1) + self.position
        x = self.transformer(x)
        return self.proj(self.ln_post(x[:, 0]))


class TextEncoder(MikecocoModel):
    """Causal transformer over token embeddings, read out at the end token."""

    def __init__(
        self,
        context_length: int,
        width: int,
        layers: int,
        heads: int,
        log: Logger | None = None,
    ) -> None:
        super().__init__(log)
        self.context_length = context_length
        self.token_embedding = nn.Embedding(len(VOCABULARY), width)
        self.position = nn.Parameter(torch.randn(context_length, width) * 0.01)
        self.transformer = _transformer(width, heads, layers)
        self.ln_final = nn.LayerNorm(width)
        self.proj = nn.Linear(width, width, bias=False)
        self.register_buffer(
            'causal_mask',
            torch.triu(
                torch.full((context_length, context_length), float('-inf')), 1
            ),
            persistent=False,
        )

    def forward(self, embeddings: torch.Tensor, end_index: int) -> torch.Tensor:
        """
        Encode token embedding sequences.

        Parameters
        ----------
        embeddings: torch.Tensor
            N x context_length x width token embeddings.
        end_index: int
            Position of the end token, shared by all sequences.

        Returns
        -------
        torch.Tensor
            N x d text features.

        """
        x = embeddings + self.position
        x = self.transformer(x, mask=self.causal_mask, is_causal=True)
        return self.proj(self.ln_final(x[:, end_index]))


class PromptSet(MikecocoModel):
    """
    Learnable context tokens per (identity, expert) pair.

    The tokens fill the slots of the scaffold
    "a photo of a <slot> x L vehicle ."

    """

    def __init__(
        self,
        num_ids: int,
        num_experts: int,
        length: int,
        width: int,
        log: Logger | None = None,
    ) -> None:
        super().__init__(log)
        self.num_ids = num_ids
        self.num_experts = num_experts
        self.length = length
        self.tokens = nn.Parameter(
            torch.randn(num_ids, num_experts, length, width) * 0.02
        )

    def token_ids(self, context_length: int) -> tuple[torch.Tensor, int, int]:
        """
        Token ids of the scaffold.

        Returns
        -------
        tuple
            ids: context_length token ids, slots marked with `<slot>`;
            slot_start: index of the first slot;
            end_index: index of the end token.

        Raises
        ------
        MikecocoValidationError
            If the scaffold does not fit into the context.

        """
        words = [SOT, *PROMPT_PREFIX, *([SLOT] * self.length), *PROMPT_SUFFIX, EOT]
        if len(words) > context_length:
            msg = (
                f'A prompt of {self.length} slots needs {len(words)} tokens, '
                f'the context holds {context_length}.'
            )
            raise MikecocoValidationError(msg)
        lookup = {word: i for i, word in enumerate(VOCABULARY)}
        ids = [lookup[w] for w in words] + [lookup[PAD]] * (context_length - len(words))
        return torch.tensor(ids), 1 + len(PROMPT_PREFIX), len(words) - 1


class DualEncoder(MikecocoModel):
    """
    Image and text encoders sharing the feature width d.

    The similarity temperature is stored as a log-scale buffer and never
    trained.

    """

    def __init__(
        self,
        config: dict[str, Any],
        log: Logger | None = None,
    ) -> None:
        super().__init__(log)
        self.architecture = {k: config[k] for k in ARCHITECTURE_KEYS}
        width = config['Width']
        self.width = width
        self.image_encoder = ImageEncoder(
            tuple(config['ImageSize']),
            config['PatchSize'],
            width,
            config['ImageLayers'],
            config['Heads'],
            log,
        )
        self.text_encoder = TextEncoder(
            config['ContextLength'], width, config['TextLayers'], config['Heads'], log
        )
        self.register_buffer('logit_scale', torch.tensor(math.log(1 / 0.07)))

    @property
    def scale(self) -> torch.Tensor:
        """Multiplier applied to cosine similarities."""
        return self.logit_scale.exp()

    def encode_image(
        self, images: torch.Tensor, *, normalize: bool = False
    ) -> torch.Tensor:
        """
        Global image features.

        Returns
        -------
        torch.Tensor
            B x d features, unit-norm rows when `normalize` is set.

        """
        features = self.image_encoder(images)
        return F.normalize(features, dim=-1) if normalize else features

    def prompt_embeddings(self, prompt_set: PromptSet) -> tuple[torch.Tensor, int]:
        """
        Scaffold token embeddings with the learnable slots filled in.

        Returns
        -------
        tuple
            N_id x K x context_length x width embeddings and the index
            of the end token.

        """
        context_length = self.text_encoder.context_length
        ids, slot_start, end_index = prompt_set.token_ids(context_length)
        ids = ids.to(prompt_set.tokens.device)
        scaffold = self.text_encoder.token_embedding(ids)
        n, k = prompt_set.num_ids, prompt_set.num_experts
        scaffold = scaffold.expand(n, k, -1, -1)
        slot_end = slot_start + prompt_set.length
        embeddings = torch.cat(
            [
                scaffold[:, :, :slot_start],
                prompt_set.tokens,
                scaffold[:, :, slot_end:],
            ],
            dim=2,
        )
        return embeddings, end_index

    def encode_prompt_table(self, prompt_set: PromptSet) -> torch.Tensor:
        """
        Text features of every (identity, expert) prompt.

        Returns
        -------
        torch.Tensor
            N_id x K x d features.

        """
        embeddings, end_index = self.prompt_embeddings(prompt_set)
        n, k, length, width = embeddings.shape
        features = self.text_encoder(embeddings.reshape(n * k, length, width), end_index)
        return features.reshape(n, k, -1)

    def encode_prompts(
        self, prompt_set: PromptSet, identity: int, expert: int
    ) -> torch.Tensor:
        """
        Text feature of one (identity, expert) prompt.

        Returns
        -------
        torch.Tensor
            d-vector.

        Raises
        ------
        MikecocoValidationError
            If the identity or expert is out of range.

        """
        if not 0 <= identity < prompt_set.num_ids:
            msg = f'Identity {identity} is outside [0, {prompt_set.num_ids}).'
            raise MikecocoValidationError(msg)
        if not 0 <= expert < prompt_set.num_experts:
            msg = f'Expert {expert} is outside [0, {prompt_set.num_experts}).'
            raise MikecocoValidationError(msg)
        embeddings, end_index = self.prompt_embeddings(prompt_set)
        return self.text_encoder(embeddings[identity, expert][None], end_index)[0]

    def similarity(self, v: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        """
        Scaled cosine similarity s(v, t).

        Broadcasts over leading dimensions.

        Returns
        -------
        torch.Tensor
            logit_scale times the cosine of the two vectors.

        Raises
        ------
        MikecocoValidationError
            If either argument has zero norm or is not finite.

        """
        return similarity(v, t, self.scale)


def similarity(
    v: torch.Tensor, t: torch.Tensor, scale: torch.Tensor | float = 1.0
) -> torch.Tensor:
    """
    Scaled cosine similarity over the last dimension.

    Returns
    -------
    torch.Tensor
        scale * cos(v, t).

    Raises
    ------
    MikecocoValidationError
        If either argument has zero norm or is not finite.

    """
    v_norm = v.norm(dim=-1)
    t_norm = t.norm(dim=-1)
    if not (torch.isfinite(v).all() and torch.isfinite(t).all()):
        msg = 'Similarity received non-finite vectors.'
        raise MikecocoValidationError(msg)
    if (v_norm == 0).any() or (t_norm == 0).any():
        msg = 'Similarity is undefined for zero-norm vectors.'
        raise MikecocoValidationError(msg)
    return scale * (v * t).sum(-1) / (v_norm * t_norm)


def strip_prefix(prefix: str) -> Callable[[str], str | None]:
    """
    Key map for `build_dual_encoder` that keeps the keys under a prefix.

    Returns
    -------
    Callable
        Maps `<prefix>name` to `name` and every other key to None.

    """

    def key_map(key: str) -> str | None:
        return key[len(prefix) :] if key.startswith(prefix) else None

    return key_map


def build_dual_encoder(
    backbone: str,
    config: dict[str, Any],
    log: Logger | None = None,
    key_map: Callable[[str], str | None] | None = None,
) -> DualEncoder:
    """
    Instantiate the dual encoder selected by a backbone string.

    Parameters
    ----------
    backbone: str
        `toy` for freshly initialized weights, or `external:<path>` for
        weights stored in a file. The file holds a dictionary with an
        `architecture` entry (the keys of `ARCHITECTURE_KEYS`) and a
        `state_dict` entry keyed by `image_encoder.*` and
        `text_encoder.*`.
    config: dict
        Training configuration providing the architecture for `toy`.
    log: Logger, optional
        Logger of the run.
    key_map: Callable, optional
        Renames the keys of an external `state_dict` before loading.
        Keys mapped to None are dropped.

    Returns
    -------
    DualEncoder
        The encoder.

    Raises
    ------
    MikecocoValidationError
        If the backbone string or the weight file is invalid.

    Notes
    -----
    Only the layout of `DualEncoder` can be loaded: a patch-embedding
    ViT and a causal text transformer built from
    `torch.nn.TransformerEncoder` blocks. A `key_map` renames tensors of
    another checkpoint, but their shapes must still match these
    modules, so a pretrained CLIP checkpoint with a different block
    layout cannot be mapped in. Checkpoints of trained runs store the
    resulting architecture and are always rebuilt as `toy` before their
    weights are restored.

    """
    if backbone == 'toy':
        return DualEncoder(config, log)
    if not backbone.startswith('external:'):
        msg = f'Unknown backbone `{backbone}`. Use `toy` or `external:<path>`.'
        raise MikecocoValidationError(msg)

    path = Path(backbone.split(':', 1)[1]).expanduser().resolve()
    if not path.is_file():
        msg = f'External backbone weights not found: {path}'
        raise FileNotFoundError(msg)
    payload = torch.load(path, map_location='cpu', weights_only=False)
    if not isinstance(payload, dict) or {'architecture', 'state_dict'} - set(payload):
        msg = f'{path} must hold `architecture` and `state_dict` entries.'
        raise MikecocoValidationError(msg)
    architecture = dict(payload['architecture'])
    if list(architecture.get('ImageSize', [])) != list(config['ImageSize']):
        msg = (
            f'External backbone expects images of size '
            f'{architecture.get("ImageSize")}, the configuration uses '
            f'{config["ImageSize"]}.'
        )
        raise MikecocoValidationError(msg)
    encoder = DualEncoder({**config, **architecture}, log)
    state = payload['state_dict']
    if key_map is not None:
        state = {
            name: tensor
            for name, tensor in ((key_map(k), v) for k, v in state.items())
            if name is not None
        }
    missing, unexpected = encoder.load_state_dict(state, strict=False)
    missing = [k for k in missing if k != 'logit_scale']
    if missing or unexpected:
        msg = (
            f'External weights do not match the encoder. Missing: {missing}; '
            f'unexpected: {unexpected}.'
        )
        raise MikecocoValidationError(msg)
    if log:
        log.msg(f'Loaded external backbone from {path}')
    return encoder
