#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""
Synthetic domain-shift dataset.

Each identity is a glyph polygon with identity-specific marks. Domain
style is an additive color cast plus a background pattern whose
spectrum lives only at the lowest (r <= v1) and highest (r > v2) DCT
indices of the band-pass mask, so style and identity content are
separated by construction. Source images use every style except the
last one; the held-out style renders the target query and gallery
sets.

"""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
from PIL import Image, ImageDraw

from mikecoco import base, file_io, spectral
from mikecoco.mikecoco_warnings import MikecocoValidationError

if TYPE_CHECKING:
    from mikecoco.base import Logger

CONTENT_RANGE = (0.25, 0.65)
CONTENT_BACKGROUND = 0.45
MAX_CAST = 0.12
MAX_PATTERN = 0.08


class DomainStyle:
    """
    Additive appearance of one domain.

    Attributes
    ----------
    color_cast: numpy.ndarray
        Per-channel offset.
    pattern: numpy.ndarray
        H x W x 3 background pattern.

    """

    __slots__ = ['color_cast', 'pattern']

    def __init__(self, color_cast: np.ndarray, pattern: np.ndarray) -> None:
        self.color_cast = np.asarray(color_cast, dtype=np.float64)
        self.pattern = np.asarray(pattern, dtype=np.float64)

    def apply(self, content: np.ndarray) -> np.ndarray:
        """Add the style to a content image."""
        return content + self.color_cast + self.pattern


def make_style(
    size: tuple[int, int], seed: int, high_terms: int = 12, strength: float = 1.0
) -> DomainStyle:
    """
    Draw a domain style.

    The pattern is the inverse DCT of random coefficients at
    max(i, j) <= v1 (DC excluded) and at max(i, j) > v2, with the
    cutoffs of the default mask for `size`. `strength` scales both the
    pattern peak and the color cast bound.

    Returns
    -------
    DomainStyle
        The style.

    """
    height, width = size
    rng = np.random.default_rng(seed)
    v1, v2, _ = spectral.mask_cutoffs(
        height,
        width,
        spectral.MASK_DEFAULTS['k1'],
        spectral.MASK_DEFAULTS['k2'],
        spectral.MASK_DEFAULTS['k3'],
    )
    coeffs = np.zeros((height, width, 3))
    rows, cols = np.indices((height, width))
    r = np.maximum(rows, cols)
    low = np.argwhere((r <= v1) & (r > 0))
    high = np.argwhere(r > v2)
    picks = high[rng.choice(len(high), min(high_terms, len(high)), replace=False)]
    for i, j in [*low, *picks]:
        coeffs[i, j] = rng.standard_normal(3)
    pattern = spectral.Spectrum(coeffs).to_image()
    peak = np.abs(pattern).max()
    if peak > 0:
        pattern *= strength * MAX_PATTERN / peak
    cast = rng.uniform(-MAX_CAST, MAX_CAST, 3) * strength
    return DomainStyle(cast, pattern)


class SynthSpec:
    """
    Settings of a synthetic dataset.

    Attributes
    ----------
    num_ids: int
        Number of identities, at least 2.
    num_cameras: int
        Cameras per identity.
    images_per_id_per_camera: int
        Sequence length per (identity, camera).
    num_styles: int
        Domain styles; the last one is held out for the target.
    image_size: tuple
        (height, width).
    seed: int
        Master seed.
    style_strength: float
        Scale of every domain style; 1 keeps the default amplitudes.
    styles: list of DomainStyle
        Styles derived from the seed.

    """

    __slots__ = [
        'image_size',
        'images_per_id_per_camera',
        'num_cameras',
        'num_ids',
        'num_styles',
        'seed',
        'style_strength',
        'styles',
    ]

    def __init__(
        self,
        num_ids: int = 8,
        num_cameras: int = 4,
        images_per_id_per_camera: int = 4,
        num_styles: int = 2,
        image_size: tuple[int, int] = (64, 64),
        seed: int = 0,
        style_strength: float = 1.0,
    ) -> None:
        """
        Validate the settings and draw the styles.

        Raises
        ------
        MikecocoValidationError
            If a count is too small or the style strength is not
            positive.

        """
        if num_ids < 2:  # noqa: PLR2004
            msg = f'At least two identities are required, received {num_ids}.'
            raise MikecocoValidationError(msg)
        if num_styles < 2:  # noqa: PLR2004
            msg = 'At least two styles are required: one source, one held out.'
            raise MikecocoValidationError(msg)
        if num_cameras < 1 or images_per_id_per_camera < 1:
            msg = 'Camera and image counts must be positive.'
            raise MikecocoValidationError(msg)
        if not style_strength > 0:
            msg = f'The style strength must be positive, received {style_strength}.'
            raise MikecocoValidationError(msg)
        self.num_ids = num_ids
        self.num_cameras = num_cameras
        self.images_per_id_per_camera = images_per_id_per_camera
        self.num_styles = num_styles
        self.image_size = (int(image_size[0]), int(image_size[1]))
        self.seed = seed
        self.style_strength = float(style_strength)
        self.styles = [
            make_style(
                self.image_size,
                base.derive_seed(seed, 1, s),
                strength=self.style_strength,
            )
            for s in range(num_styles)
        ]

    @property
    def source_styles(self) -> list[DomainStyle]:
        """Styles of the source domain."""
        return self.styles[:-1]

    @property
    def target_style(self) -> DomainStyle:
        """The held-out style."""
        return self.styles[-1]


def _glyph(spec: SynthSpec, identity: int) -> dict[str, Any]:
    rng = np.random.default_rng(base.derive_seed(spec.seed, 2, identity))
    vertices = int(rng.integers(5, 9))
    angles = np.sort(rng.uniform(0, 2 * np.pi, vertices))
    radii = rng.uniform(0.22, 0.4, vertices)
    marks = [
        (rng.uniform(-0.2, 0.2, 2), rng.uniform(0.06, 0.12), rng.uniform(*CONTENT_RANGE, 3))
        for _ in range(3)
    ]
    return {
        'angles': angles,
        'radii': radii,
        'color': rng.uniform(0.3, 0.6, 3),
        'marks': marks,
    }


def _fill(canvas: np.ndarray, shape: list[tuple[float, float]], color: np.ndarray) -> None:
    height, width = canvas.shape[:2]
    stencil = Image.new('L', (width, height), 0)
    ImageDraw.Draw(stencil).polygon(shape, fill=255)
    canvas[np.asarray(stencil) > 0] = color


def render_content(spec: SynthSpec, identity: int, camera: int, seq: int) -> np.ndarray:
    """
    Render the style-free content of one image.

    The glyph and its marks depend on the identity only; the camera
    sets a horizontal stretch and the sequence index a small shift.

    Returns
    -------
    numpy.ndarray
        H x W x 3 grid with values in the content range.

    """
    height, width = spec.image_size
    glyph = _glyph(spec, identity)
    view = np.random.default_rng(base.derive_seed(spec.seed, 3, identity, camera, seq))
    stretch = 0.9 + 0.2 * camera / max(1, spec.num_cameras - 1)
    dy, dx = view.integers(-3, 4, size=2)
    cy, cx = height / 2 + dy, width / 2 + dx
    size = min(height, width)

    canvas = np.full((height, width, 3), CONTENT_BACKGROUND)
    outline = [
        (cx + stretch * r * size * np.cos(a), cy + r * size * np.sin(a))
        for a, r in zip(glyph['angles'], glyph['radii'])
    ]
    _fill(canvas, outline, glyph['color'])
    for (oy, ox), half, color in glyph['marks']:
        y0, x0 = cy + oy * size, cx + stretch * ox * size
        h = half * size / 2
        _fill(canvas, [(x0 - h, y0 - h), (x0 + h, y0 - h), (x0 + h, y0 + h), (x0 - h, y0 + h)], color)
    return canvas


def render_image(
    spec: SynthSpec, identity: int, camera: int, seq: int, style: DomainStyle
) -> np.ndarray:
    """
    Render one styled image.

    Returns
    -------
    numpy.ndarray
        H x W x 3 grid, within [0, 1] for style strengths up to 1.
        `synth_dataset` clips when it saves.

    """
    return style.apply(render_content(spec, identity, camera, seq))


def synth_dataset(
    spec: SynthSpec, out_dir: str | Path, log: Logger | None = None
) -> dict[str, Path]:
    """
    Render the dataset and write its manifests.

    Source images (`source/<id>/<camera>_<seq>.png`) cycle through the
    source styles by camera. The held-out style renders the target:
    sequence 0 of every (identity, camera) is a query and the remaining
    sequences form the gallery.

    Returns
    -------
    dict
        Manifest paths under `source`, `target_query` and
        `target_gallery`.

    """
    root = Path(out_dir).resolve()
    records: dict[str, list[dict[str, Any]]] = {
        'source': [],
        'target_query': [],
        'target_gallery': [],
    }
    sources = spec.source_styles
    for identity in range(spec.num_ids):
        for camera in range(spec.num_cameras):
            for seq in range(spec.images_per_id_per_camera):
                name = f'{identity:03d}/{camera}_{seq}.png'
                source_path = f'source/{name}'
                style = sources[camera % len(sources)]
                file_io.save_image(
                    render_image(spec, identity, camera, seq, style), root / source_path
                )
                records['source'].append(
                    {'path': source_path, 'id': identity, 'camera': camera, 'split': 'train'}
                )
                split = 'query' if seq == 0 else 'gallery'
                target_path = f'target/{split}/{name}'
                file_io.save_image(
                    render_image(spec, identity, camera, seq, spec.target_style),
                    root / target_path,
                )
                records[f'target_{split}'].append(
                    {'path': target_path, 'id': identity, 'camera': camera, 'split': split}
                )

    manifests = {}
    for key, rows in records.items():
        manifests[key] = root / f'{key}.jsonl'
        file_io.write_jsonl(rows, manifests[key])
    if log:
        if not records['target_gallery']:
            log.warning(
                'The target gallery is empty. Use at least two images per '
                'identity and camera.'
            )
        if spec.num_cameras < 2 and records['target_query']:  # noqa: PLR2004
            log.warning(
                'Every target query shares its camera with all of its gallery '
                'matches, so evaluation discards all queries. Use at least two '
                'cameras.'
            )
        log.msg(
            f'Wrote synthetic dataset to {root}',
            **{key: len(rows) for key, rows in records.items()},
        )
    return manifests
