#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""These are utility functions for the unit and integration tests."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any

import numpy as np
import torch

from mikecoco import file_io


def naive_dct2(grid: np.ndarray) -> np.ndarray:
    """
    Orthonormal 2-D DCT-II evaluated from its defining double sum.

    Parameters
    ----------
    grid: numpy.ndarray
        Small H x W grid.

    Returns
    -------
    numpy.ndarray
        H x W coefficients.

    """
    height, width = grid.shape

    def basis(n: int) -> np.ndarray:
        k = np.arange(n)[:, np.newaxis]
        x = np.arange(n)[np.newaxis, :]
        b = np.cos(np.pi * (2 * x + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
        b[0] /= np.sqrt(2.0)
        return b

    return basis(height) @ grid @ basis(width).T


def brute_force_ap(similarities: np.ndarray, matches: np.ndarray) -> float:
    """
    Average precision by walking the ranked list.

    Returns
    -------
    float
        Mean of the precision values at the ranks of the true matches.

    """
    order = np.argsort(-similarities, kind='stable')
    hits = 0
    precisions = []
    for rank, index in enumerate(order, start=1):
        if matches[index]:
            hits += 1
            precisions.append(hits / rank)
    return float(np.mean(precisions)) if precisions else 0.0


def write_manifest_tree(
    root: Path,
    labels: list[tuple[Any, Any]],
    size: tuple[int, int] = (16, 16),
    seed: int = 0,
) -> Path:
    """
    Write random images and a manifest listing them.

    Parameters
    ----------
    root: Path
        Output directory.
    labels: list
        (identity, camera) per image.
    size: tuple
        Image size.
    seed: int
        Seed of the pixel values.

    Returns
    -------
    Path
        The manifest location.

    """
    rng = np.random.default_rng(seed)
    rows = []
    for index, (identity, camera) in enumerate(labels):
        relative = f'{identity}/{camera}_{index}.png'
        file_io.save_image(rng.uniform(0, 1, (*size, 3)), root / relative)
        rows.append({'path': relative, 'id': identity, 'camera': camera, 'split': 'train'})
    manifest = root / 'manifest.jsonl'
    file_io.write_jsonl(rows, manifest)
    return manifest


def brute_force_cmc(
    similarities: np.ndarray, matches: np.ndarray, max_rank: int
) -> np.ndarray:
    """
    Match indicator at ranks 1..max_rank by walking the ranked list.

    Returns
    -------
    numpy.ndarray
        1 from the rank of the first true match on, 0 before it.

    """
    order = np.argsort(-similarities, kind='stable')
    cmc = np.zeros(max_rank)
    for rank, index in enumerate(order):
        if matches[index]:
            cmc[rank:] = 1.0
            break
    return cmc


# Explicit-loop loss oracles. Inputs are nested lists (`Tensor.tolist()`).


def _log_softmax(row: list[float]) -> list[float]:
    peak = max(row)
    norm = peak + math.log(sum(math.exp(v - peak) for v in row))
    return [v - norm for v in row]


def _unit(vector: list[float]) -> list[float]:
    norm = math.sqrt(sum(v * v for v in vector))
    return [v / norm for v in vector]


def _cos(a: list[float], b: list[float]) -> float:
    return sum(x * y for x, y in zip(_unit(a), _unit(b)))


def oracle_cross_entropy(
    logits: list[list[float]], labels: list[int], smoothing: float = 0.0
) -> float:
    """Mean smoothed cross-entropy of logit rows."""
    total = 0.0
    for row, label in zip(logits, labels):
        log_p = _log_softmax(row)
        total -= (1.0 - smoothing) * log_p[label] + smoothing * sum(log_p) / len(row)
    return total / len(logits)


def oracle_loss_rc(
    reconstructions: list[list[list[float]]], features: list[list[float]]
) -> float:
    total, count = 0.0, 0
    for per_image, feature in zip(reconstructions, features):
        for recon in per_image:
            for r, f in zip(recon, feature):
                total += (r - f) ** 2
                count += 1
    return total / count


def oracle_loss_ec(expert_logits: list[list[list[float]]]) -> float:
    rows, labels = [], []
    for per_image in expert_logits:
        for k, row in enumerate(per_image):
            rows.append(row)
            labels.append(k)
    return oracle_cross_entropy(rows, labels)


def oracle_loss_al(latents: list[list[list[float]]]) -> float:
    total = 0.0
    for per_image in latents:
        k = len(per_image)
        unit = [_unit(z) for z in per_image]
        pairs = 0.0
        for i in range(k):
            for j in range(k):
                if i != j:
                    pairs += sum((a - b) ** 2 for a, b in zip(unit[i], unit[j]))
        total += pairs / (k * k - k)
    return -total / len(latents)


def _contrastive(logits: list[list[float]], ids: list[int]) -> float:
    # rows are anchors; columns follow the batch order of `ids`
    total = 0.0
    for n, row in enumerate(logits):
        log_p = _log_softmax(row)
        positives = [a for a in range(len(ids)) if ids[a] == ids[n]]
        total -= sum(log_p[a] for a in positives) / len(positives)
    return total / len(logits)


def _expert_batch_logits(
    latents: list[list[list[float]]],
    text: list[list[list[float]]],
    ids: list[int],
    scale: float,
    expert: int,
) -> list[list[float]]:
    return [
        [scale * _cos(latents[n][expert], text[ids[a]][expert]) for a in range(len(ids))]
        for n in range(len(ids))
    ]


def oracle_loss_v2t(
    latents: list[list[list[float]]],
    text: list[list[list[float]]],
    ids: list[int],
    scale: float,
) -> float:
    return sum(
        _contrastive(_expert_batch_logits(latents, text, ids, scale, e), ids)
        for e in range(len(latents[0]))
    )


def oracle_loss_t2v(
    latents: list[list[list[float]]],
    text: list[list[list[float]]],
    ids: list[int],
    scale: float,
) -> float:
    total = 0.0
    for e in range(len(latents[0])):
        logits = _expert_batch_logits(latents, text, ids, scale, e)
        transposed = [list(column) for column in zip(*logits)]
        total += _contrastive(transposed, ids)
    return total


def oracle_loss_v2tce(
    latents: list[list[list[float]]],
    text: list[list[list[float]]],
    ids: list[int],
    scale: float,
    smoothing: float,
) -> float:
    experts = len(latents[0])
    total = 0.0
    for e in range(experts):
        logits = [
            [scale * _cos(latent[e], prompt[e]) for prompt in text] for latent in latents
        ]
        total += oracle_cross_entropy(logits, ids, smoothing)
    return total / experts


def oracle_kl(
    z_s: list[list[float]], z_t: list[list[float]], *, reverse: bool = False
) -> float:
    total = 0.0
    for row_s, row_t in zip(z_s, z_t):
        log_p, log_q = _log_softmax(row_s), _log_softmax(row_t)
        if reverse:
            log_p, log_q = log_q, log_p
        total += sum(math.exp(a) * (a - b) for a, b in zip(log_p, log_q))
    return total / len(z_s)


def oracle_teacher_logits(
    fused: list[list[float]],
    gate: list[list[float]],
    weights: list[list[list[float]]],
    biases: list[list[float]],
) -> list[list[float]]:
    """Gate-weighted sum of linear heads; `weights[k]` is N_id x d."""
    logits = []
    for feature, gate_row in zip(fused, gate):
        row = []
        for c in range(len(biases[0])):
            value = 0.0
            for k, g in enumerate(gate_row):
                head = biases[k][c] + sum(w * f for w, f in zip(weights[k][c], feature))
                value += g * head
            row.append(value)
        logits.append(row)
    return logits


def random_trials(seed: int, trials: int = 100) -> list[dict[str, Any]]:
    """
    Random loss instances with b <= 4, K <= 3, N_id <= 5 and d <= 8.

    Returns
    -------
    list
        Per trial: float64 tensors `latents` (b x K x d), `text`
        (N_id x K x d), `reconstructions` (b x K x d), `features`
        (b x d), `expert_logits` (b x K x K), `camera_logits`
        (b x N_cam), `id_logits` (b x N_id), the labels `ids` and
        `cameras` and a similarity `scale`.

    """
    rng = np.random.default_rng(seed)

    def draw(*shape: int) -> torch.Tensor:
        return torch.from_numpy(rng.standard_normal(shape))

    instances = []
    for _ in range(trials):
        b = int(rng.integers(2, 5))
        k = int(rng.integers(2, 4))
        n_id = int(rng.integers(2, 6))
        n_cam = int(rng.integers(2, 6))
        d = int(rng.integers(2, 9))
        instances.append(
            {
                'latents': draw(b, k, d),
                'text': draw(n_id, k, d),
                'reconstructions': draw(b, k, d),
                'features': draw(b, d),
                'expert_logits': 3.0 * draw(b, k, k),
                'camera_logits': 3.0 * draw(b, n_cam),
                'id_logits': 3.0 * draw(b, n_id),
                'ids': torch.from_numpy(rng.integers(0, n_id, b)),
                'cameras': torch.from_numpy(rng.integers(0, n_cam, b)),
                'scale': float(rng.uniform(0.5, 10.0)),
            }
        )
    return instances
