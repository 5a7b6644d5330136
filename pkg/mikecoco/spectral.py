#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""
Spectral preprocessing of training images.

The module splits an image spectrum into a causal band, which carries
the identity-related content, and a non-causal band, which carries
domain style. Two derived images are produced:

- the domain-invariant image (DII), which suppresses the non-causal
  band, and
- the style-perturbation image (SPI), which multiplies the non-causal
  band by Gaussian noise.

All transforms are orthonormal type-II DCTs computed per channel with
`scipy.fft`.

"""

from __future__ import annotations

import math
from typing import Any

import numpy as np
from scipy import fft

from mikecoco.mikecoco_warnings import MikecocoValidationError

# constants of the band-pass mask
MASK_DEFAULTS: dict[str, float] = {
    'k1': 0.005,
    'k2': 0.7,
    'k3': 1.0,
    'c1': 0.95,
    'c2': 0.3,
    'm2': 0.01,
    'm4': 0.5,
}


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        msg = f'{what} contains non-finite values (NaN or Inf).'
        raise MikecocoValidationError(msg)


def _as_hwc(image: np.ndarray) -> np.ndarray:
    """Return a float64 view of an image with an explicit channel axis."""
    array = np.asarray(image, dtype=np.float64)
    if array.ndim == 2:  # noqa: PLR2004
        array = array[:, :, np.newaxis]
    if array.ndim != 3:  # noqa: PLR2004
        msg = f'Expected an H x W or H x W x C grid, received shape {array.shape}.'
        raise MikecocoValidationError(msg)
    return array


def _restore_shape(result: np.ndarray, like: np.ndarray) -> np.ndarray:
    if np.ndim(like) == 2:  # noqa: PLR2004
        return result[:, :, 0]
    return result


class Spectrum:
    """
    DCT-II coefficients of an image, one grid per channel.

    Attributes
    ----------
    coeffs: numpy.ndarray
        H x W x C array of orthonormal DCT-II coefficients.
    height: int
        Number of pixel rows of the source image.
    width: int
        Number of pixel columns of the source image.
    channels: int
        Number of channels of the source image.

    """

    __slots__ = ['channels', 'coeffs', 'height', 'width']

    def __init__(self, coeffs: np.ndarray) -> None:
        coeffs = _as_hwc(coeffs)
        _check_finite(coeffs, 'Spectrum')
        self.coeffs = coeffs
        self.height, self.width, self.channels = coeffs.shape

    @classmethod
    def from_image(cls, image: np.ndarray) -> Spectrum:
        """
        Compute the spectrum of an image.

        Returns
        -------
        Spectrum
            Per-channel DCT-II coefficients.

        """
        array = _as_hwc(image)
        _check_finite(array, 'Image')
        return cls(fft.dctn(array, type=2, norm='ortho', axes=(0, 1)))

    def to_image(self) -> np.ndarray:
        """
        Invert the spectrum back to pixels.

        Returns
        -------
        numpy.ndarray
            H x W x C pixel grid.

        """
        return fft.idctn(self.coeffs, type=2, norm='ortho', axes=(0, 1))

    def log_magnitude(self) -> np.ndarray:
        """
        Channel-averaged log magnitude, for display.

        Returns
        -------
        numpy.ndarray
            H x W grid of log(1 + |coeff|).

        """
        return np.log1p(np.abs(self.coeffs)).mean(axis=2)


def dct2(channel: np.ndarray) -> np.ndarray:
    """
    Orthonormal 2-D DCT-II of a single channel.

    Parameters
    ----------
    channel: numpy.ndarray
        H x W real grid.

    Returns
    -------
    numpy.ndarray
        H x W coefficient grid. The transform preserves energy.

    Raises
    ------
    MikecocoValidationError
        If the grid is not two-dimensional, empty, or not finite.

    """
    array = np.asarray(channel, dtype=np.float64)
    if array.ndim != 2 or min(array.shape) < 1:  # noqa: PLR2004
        msg = f'dct2 expects a non-empty H x W grid, received {array.shape}.'
        raise MikecocoValidationError(msg)
    _check_finite(array, 'Input grid')
    return fft.dctn(array, type=2, norm='ortho')


def idct2(coeffs: np.ndarray, shape: tuple[int, int] | None = None) -> np.ndarray:
    """
    Inverse of `dct2`.

    Parameters
    ----------
    coeffs: numpy.ndarray
        H x W coefficient grid.
    shape: tuple, optional
        Declared (H, W). When given, it must match the grid.

    Returns
    -------
    numpy.ndarray
        H x W real grid.

    Raises
    ------
    MikecocoValidationError
        If the grid does not match the declared shape or is not finite.

    """
    array = np.asarray(coeffs, dtype=np.float64)
    if array.ndim != 2:  # noqa: PLR2004
        msg = f'idct2 expects an H x W grid, received {array.shape}.'
        raise MikecocoValidationError(msg)
    if shape is not None and tuple(array.shape) != tuple(shape):
        msg = (
            f'Spectrum shape {array.shape} does not match the declared '
            f'shape {tuple(shape)}.'
        )
        raise MikecocoValidationError(msg)
    _check_finite(array, 'Spectrum')
    return fft.idctn(array, type=2, norm='ortho')


def _round_half_up(value: float) -> int:
    return math.floor(value + 0.5)


def mask_cutoffs(
    height: int, width: int, k1: float, k2: float, k3: float, *, floor_v1: bool = True
) -> tuple[int, int, int]:
    """
    Frequency cutoffs of the band-pass mask.

    Parameters
    ----------
    height, width: int
        Image size in pixels.
    k1, k2, k3: float
        Cutoff ratios relative to min(height, width).
    floor_v1: bool
        If True, v1 is raised to 1 when it rounds to 0.

    Returns
    -------
    tuple
        (v1, v2, v3) integer frequency indices.

    Raises
    ------
    MikecocoValidationError
        If v1 is zero, v1 is not below v2, or v3 equals v2.

    """
    base = min(height, width)
    v1 = _round_half_up(base * k1)
    v2 = _round_half_up(base * k2)
    v3 = _round_half_up(base * k3)
    if v1 == 0:
        if not floor_v1:
            msg = (
                f'The first cutoff rounds to zero for a {height} x {width} '
                f'image with k1={k1}. Use a larger image or a larger k1.'
            )
            raise MikecocoValidationError(msg)
        v1 = 1
    if v1 >= v2:
        msg = (
            f'Cutoffs v1={v1} and v2={v2} leave no causal band. '
            f'Use a larger image or a larger k2.'
        )
        raise MikecocoValidationError(msg)
    if v3 == v2:
        msg = (
            f'Cutoffs v2 and v3 are both {v2}; the slope of the rising '
            f'band is undefined. Use a larger gap between k2 and k3.'
        )
        raise MikecocoValidationError(msg)
    return v1, v2, v3


def mask_weight(
    r: np.ndarray | float,
    cutoffs: tuple[int, int, int],
    c1: float = MASK_DEFAULTS['c1'],
    c2: float = MASK_DEFAULTS['c2'],
    m2: float = MASK_DEFAULTS['m2'],
    m4: float = MASK_DEFAULTS['m4'],
    *,
    clamp: bool = True,
) -> np.ndarray:
    """
    Evaluate the four-piece mask profile at radius r = max(i, j).

    Returns
    -------
    numpy.ndarray
        Mask weights with the shape of `r`.

    """
    v1, v2, v3 = cutoffs
    r = np.asarray(r, dtype=np.float64)
    weights = np.select(
        [r <= v1, r <= v2, r <= v3],
        [1.0 - (c1 / v1) * r, np.full_like(r, m2), (c2 / (v3 - v2)) * r],
        default=m4,
    )
    if clamp:
        weights = np.clip(weights, 0.0, 1.0)
    return weights


class BandPassMask:
    """
    Band-pass mask over DCT frequency indices.

    The weight at (i, j) depends only on r = max(i, j). A weight of 1
    suppresses the coefficient in the domain-invariant image and fully
    exposes it to noise in the style-perturbation image.

    Attributes
    ----------
    weights: numpy.ndarray
        H x W grid of weights in [0, 1].
    raw_weights: numpy.ndarray
        H x W grid of the weights before clamping.
    cutoffs: tuple
        (v1, v2, v3).
    params: dict
        k1, k2, k3, c1, c2, m2, m4.

    """

    __slots__ = ['cutoffs', 'params', 'raw_weights', 'weights']

    def __init__(
        self,
        weights: np.ndarray,
        cutoffs: tuple[int, int, int] | None = None,
        params: dict[str, float] | None = None,
        raw_weights: np.ndarray | None = None,
    ) -> None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 2:  # noqa: PLR2004
            msg = f'Mask weights must be an H x W grid, received {weights.shape}.'
            raise MikecocoValidationError(msg)
        _check_finite(weights, 'Mask')
        weights.setflags(write=False)
        self.weights = weights
        self.raw_weights = weights if raw_weights is None else raw_weights
        self.cutoffs = cutoffs
        self.params = dict(params or {})

    @property
    def shape(self) -> tuple[int, int]:
        """Mask grid shape."""
        return self.weights.shape  # type: ignore[return-value]

    @classmethod
    def constant(cls, height: int, width: int, value: float) -> BandPassMask:
        """
        Build a mask with the same weight everywhere.

        Returns
        -------
        BandPassMask
            The constant mask.

        """
        return cls(np.full((height, width), float(value)))


def build_mask(
    height: int, width: int, params: dict[str, Any] | None = None
) -> BandPassMask:
    """
    Construct the band-pass mask for a given image size.

    Parameters
    ----------
    height, width: int
        Image size, both at least 2.
    params: dict, optional
        Overrides of `MASK_DEFAULTS`. The additional key `floor_v1`
        (default True) controls the treatment of a zero first cutoff.

    Returns
    -------
    BandPassMask
        The mask, immutable after construction.

    Raises
    ------
    MikecocoValidationError
        If the size or the ratios are invalid.

    """
    config = dict(MASK_DEFAULTS)
    config.update(params or {})
    floor_v1 = bool(config.pop('floor_v1', True))

    unknown = set(config) - set(MASK_DEFAULTS)
    if unknown:
        msg = f'Unknown mask parameters: {sorted(unknown)}.'
        raise MikecocoValidationError(msg)

    if height < 2 or width < 2:  # noqa: PLR2004
        msg = f'Mask size must be at least 2 x 2, received {height} x {width}.'
        raise MikecocoValidationError(msg)
    if not 0 < config['k1'] < config['k2'] <= config['k3']:
        msg = (
            f'Mask ratios must satisfy 0 < k1 < k2 <= k3, received '
            f'k1={config["k1"]}, k2={config["k2"]}, k3={config["k3"]}.'
        )
        raise MikecocoValidationError(msg)

    cutoffs = mask_cutoffs(
        height, width, config['k1'], config['k2'], config['k3'], floor_v1=floor_v1
    )
    rows, cols = np.indices((height, width))
    r = np.maximum(rows, cols)
    profile = {k: config[k] for k in ('c1', 'c2', 'm2', 'm4')}
    raw = mask_weight(r, cutoffs, **profile, clamp=False)
    return BandPassMask(
        np.clip(raw, 0.0, 1.0), cutoffs=cutoffs, params=config, raw_weights=raw
    )


def _check_mask(image: np.ndarray, mask: BandPassMask) -> None:
    if image.shape[:2] != mask.shape:
        msg = (
            f'Image of size {image.shape[:2]} does not match the mask of '
            f'size {mask.shape}.'
        )
        raise MikecocoValidationError(msg)


def extract_dii(
    image: np.ndarray,
    mask: BandPassMask,
    *,
    raw: bool = False,
    pixel_range: tuple[float, float] = (0.0, 1.0),
) -> np.ndarray:
    """
    Domain-invariant image: the spectrum with the masked band removed.

    Computes idct2((1 - M) * dct2(X)) per channel. Unless `raw` is set,
    the removed share of the DC term is added back (M(0, 0) times the
    channel mean of X) and the result is clipped to `pixel_range`.

    Parameters
    ----------
    image: numpy.ndarray
        H x W or H x W x C pixel grid.
    mask: BandPassMask
        Mask of matching size.
    raw: bool
        Return the unshifted, unclipped result.
    pixel_range: tuple
        Valid pixel interval used for clipping.

    Returns
    -------
    numpy.ndarray
        Array with the shape of `image`.

    """
    array = _as_hwc(image)
    _check_mask(array, mask)
    spectrum = Spectrum.from_image(array)
    weights = mask.weights[:, :, np.newaxis]
    result = Spectrum((1.0 - weights) * spectrum.coeffs).to_image()
    if not raw:
        result = result + mask.weights[0, 0] * array.mean(axis=(0, 1))
        result = np.clip(result, *pixel_range)
    return _restore_shape(result, image)


def make_spi(
    image: np.ndarray,
    mask: BandPassMask,
    rng_seed: int | None = None,
    *,
    noise: np.ndarray | None = None,
    clip: bool = False,
    pixel_range: tuple[float, float] = (0.0, 1.0),
) -> np.ndarray:
    """
    Style-perturbation image: masked coefficients scaled by (1 + N(0, 1)).

    Computes idct2(M * S * (1 + N) + (1 - M) * S) with S = dct2(X) and
    N drawn i.i.d. per coefficient and channel.

    Parameters
    ----------
    image: numpy.ndarray
        H x W or H x W x C pixel grid.
    mask: BandPassMask
        Mask of matching size.
    rng_seed: int, optional
        Seed of the noise draw. Ignored when `noise` is given.
    noise: numpy.ndarray, optional
        Explicit noise grid with the shape of the image.
    clip: bool
        Clip the result to `pixel_range`.
    pixel_range: tuple
        Valid pixel interval used for clipping.

    Returns
    -------
    numpy.ndarray
        Array with the shape of `image`.

    """
    array = _as_hwc(image)
    _check_mask(array, mask)
    spectrum = Spectrum.from_image(array)
    if noise is None:
        noise = np.random.default_rng(rng_seed).standard_normal(array.shape)
    else:
        noise = _as_hwc(noise)
        if noise.shape != array.shape:
            msg = f'Noise of shape {noise.shape} does not match {array.shape}.'
            raise MikecocoValidationError(msg)
    weights = mask.weights[:, :, np.newaxis]
    non_causal = weights * spectrum.coeffs
    regrouped = non_causal * (1.0 + noise) + (1.0 - weights) * spectrum.coeffs
    result = Spectrum(regrouped).to_image()
    if clip:
        result = np.clip(result, *pixel_range)
    return _restore_shape(result, image)


class StreamOutput:
    """Both derived images of a source image."""

    __slots__ = ['dii', 'noise_seed', 'spi']

    def __init__(self, dii: np.ndarray, spi: np.ndarray, noise_seed: int) -> None:
        self.dii = dii
        self.spi = spi
        self.noise_seed = noise_seed


def stream(
    image: np.ndarray, mask: BandPassMask, noise_seed: int, *, raw_dii: bool = False
) -> StreamOutput:
    """
    Produce the DII and SPI of an image in one call.

    Returns
    -------
    StreamOutput
        The two derived images and the seed of the SPI noise.

    """
    return StreamOutput(
        extract_dii(image, mask, raw=raw_dii),
        make_spi(image, mask, noise_seed, clip=True),
        noise_seed,
    )


def transform_image(
    image: np.ndarray,
    mode: str,
    mask: BandPassMask | None,
    noise_seed: int | None = None,
    *,
    raw_dii: bool = False,
) -> np.ndarray:
    """
    Route an image through the transform selected for a training stage.

    Parameters
    ----------
    image: numpy.ndarray
        H x W x C pixel grid in [0, 1].
    mode: str
        `raw`, `dii` or `spi`.
    mask: BandPassMask
        Required for `dii` and `spi`.
    noise_seed: int, optional
        Seed of the SPI noise.
    raw_dii: bool
        Use the unshifted DII.

    Returns
    -------
    numpy.ndarray
        The transformed image.

    Raises
    ------
    MikecocoValidationError
        If the mode is unknown or the mask is missing.

    """
    if mode == 'raw':
        return image
    if mask is None:
        msg = f'A mask is required for the `{mode}` input mode.'
        raise MikecocoValidationError(msg)
    if mode == 'dii':
        return extract_dii(image, mask, raw=raw_dii)
    if mode == 'spi':
        return make_spi(image, mask, noise_seed, clip=True)
    msg = f'Unknown input mode `{mode}`. Use `raw`, `dii` or `spi`.'
    raise MikecocoValidationError(msg)


def band_energy(image: np.ndarray, cutoffs: tuple[int, int, int]) -> dict[str, float]:
    """
    Share of spectral energy in each mask region.

    The DC coefficient is excluded so that a global brightness offset
    does not dominate the shares.

    Returns
    -------
    dict
        Energy shares for `low` (0 < r <= v1), `causal`
        (v1 < r <= v2), `rising` (v2 < r <= v3) and `high` (r > v3).

    """
    coeffs = Spectrum.from_image(image).coeffs
    energy = (coeffs**2).sum(axis=2)
    energy[0, 0] = 0.0
    rows, cols = np.indices(energy.shape)
    r = np.maximum(rows, cols)
    v1, v2, v3 = cutoffs
    total = energy.sum()
    if total == 0:
        return {'low': 0.0, 'causal': 0.0, 'rising': 0.0, 'high': 0.0}
    return {
        'low': float(energy[r <= v1].sum() / total),
        'causal': float(energy[(r > v1) & (r <= v2)].sum() / total),
        'rising': float(energy[(r > v2) & (r <= v3)].sum() / total),
        'high': float(energy[r > v3].sum() / total),
    }
