#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""Figures for spectrum inspection and retrieval results."""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

import matplotlib as mpl

mpl.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from mikecoco import file_io, spectral  # noqa: E402

if TYPE_CHECKING:
    from mikecoco.evaluation import FeatureSet, RankingResult


def plot_spectrum(
    image: np.ndarray,
    mask: spectral.BandPassMask,
    noise_seed: int,
    filepath: str | Path,
) -> dict[str, float]:
    """
    Save a panel of the mask, the spectrum and both derived images.

    Returns
    -------
    dict
        Band energy shares of the image.

    """
    derived = spectral.stream(image, mask, noise_seed)
    energy = spectral.band_energy(image, mask.cutoffs or (1, 1, 1))

    fig, axes = plt.subplots(2, 3, figsize=(12, 8))
    axes[0, 0].imshow(np.clip(image, 0, 1))
    axes[0, 0].set_title('Image')
    heat = axes[0, 1].imshow(mask.weights, cmap='viridis', vmin=0, vmax=1)
    axes[0, 1].set_title('Mask weight')
    fig.colorbar(heat, ax=axes[0, 1], fraction=0.046)
    spectrum = axes[0, 2].imshow(
        spectral.Spectrum.from_image(image).log_magnitude(), cmap='magma'
    )
    axes[0, 2].set_title('log |DCT|')
    fig.colorbar(spectrum, ax=axes[0, 2], fraction=0.046)
    axes[1, 0].imshow(np.clip(derived.dii, 0, 1))
    axes[1, 0].set_title('Domain-invariant image')
    axes[1, 1].imshow(np.clip(derived.spi, 0, 1))
    axes[1, 1].set_title(f'Style-perturbed image (seed {noise_seed})')
    axes[1, 2].bar(list(energy), list(energy.values()), color='#0072B2')
    axes[1, 2].set_title('Energy share by band')
    for ax in axes.flat[:5]:
        ax.axis('off')
    fig.tight_layout()
    path = Path(filepath)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches='tight')
    plt.close(fig)
    return energy


def _framed(ax: plt.Axes, image: np.ndarray, color: str | None) -> None:
    ax.imshow(np.clip(image, 0, 1))
    ax.set_xticks([])
    ax.set_yticks([])
    if color is not None:
        for spine in ax.spines.values():
            spine.set_edgecolor(color)
            spine.set_linewidth(3)


def plot_retrievals(
    query: FeatureSet,
    gallery: FeatureSet,
    rankings: list[RankingResult],
    filepath: str | Path,
    top_k: int = 5,
    max_queries: int = 8,
) -> None:
    """Save the top-k gallery images of the first queries, framed green or red."""
    shown = rankings[:max_queries]
    if not shown:
        return
    fig, axes = plt.subplots(
        len(shown), top_k + 1, figsize=(1.6 * (top_k + 1), 1.8 * len(shown)), squeeze=False
    )
    for row, ranking in enumerate(shown):
        q = ranking.query_index
        _framed(axes[row, 0], file_io.load_image(query.paths[q]), None)
        axes[row, 0].set_title(f'id {query.identities[q]}', fontsize=8)
        for col in range(top_k):
            ax = axes[row, col + 1]
            if col >= len(ranking.ordered_gallery):
                ax.axis('off')
                continue
            g = int(ranking.ordered_gallery[col])
            correct = gallery.identities[g] == query.identities[q]
            _framed(ax, file_io.load_image(gallery.paths[g]), 'green' if correct else 'red')
            ax.set_title(f'{ranking.similarities[col]:.2f}', fontsize=8)
    fig.tight_layout()
    path = Path(filepath)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches='tight')
    plt.close(fig)
