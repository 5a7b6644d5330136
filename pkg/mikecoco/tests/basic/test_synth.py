#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""These are unit tests on the synth module of mikecoco."""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
import pytest

from mikecoco import base, data, file_io, spectral, synth
from mikecoco.mikecoco_warnings import MikecocoValidationError, MikecocoWarning

# The tests maintain the order of definitions of the `synth.py` file.

SIZE = (32, 32)


def band_radius(size: tuple[int, int]) -> np.ndarray:
    rows, cols = np.indices(size)
    return np.maximum(rows, cols)


def test_domain_style() -> None:
    style = synth.DomainStyle([0.1, 0.0, -0.1], np.zeros((4, 4, 3)))
    content = np.full((4, 4, 3), 0.5)
    np.testing.assert_allclose(style.apply(content)[..., 0], 0.6)
    np.testing.assert_allclose(style.apply(content)[..., 2], 0.4)


def test_make_style() -> None:
    style = synth.make_style(SIZE, seed=4)
    assert style.pattern.shape == (*SIZE, 3)
    assert np.abs(style.pattern).max() == pytest.approx(synth.MAX_PATTERN)
    assert np.all(np.abs(style.color_cast) <= synth.MAX_CAST)

    # the pattern has no mean and no energy in the causal band
    v1, v2, _ = spectral.mask_cutoffs(*SIZE, 0.005, 0.7, 1.0)
    coeffs = spectral.Spectrum.from_image(style.pattern).coeffs
    r = band_radius(SIZE)
    np.testing.assert_allclose(coeffs[(r > v1) & (r <= v2)], 0.0, atol=1e-10)
    np.testing.assert_allclose(coeffs[0, 0], 0.0, atol=1e-10)

    again = synth.make_style(SIZE, seed=4)
    np.testing.assert_array_equal(again.pattern, style.pattern)
    assert not np.allclose(synth.make_style(SIZE, seed=5).pattern, style.pattern)

    strong = synth.make_style(SIZE, seed=4, strength=2.5)
    np.testing.assert_allclose(strong.pattern, 2.5 * style.pattern, atol=1e-12)
    np.testing.assert_allclose(strong.color_cast, 2.5 * style.color_cast, atol=1e-12)


def test_synth_spec() -> None:
    spec = synth.SynthSpec(num_ids=3, num_styles=3, image_size=SIZE)
    assert len(spec.styles) == 3
    assert len(spec.source_styles) == 2
    assert spec.target_style is spec.styles[-1]

    with pytest.raises(MikecocoValidationError, match='two identities'):
        synth.SynthSpec(num_ids=1)
    with pytest.raises(MikecocoValidationError, match='two styles'):
        synth.SynthSpec(num_styles=1)
    with pytest.raises(MikecocoValidationError, match='must be positive'):
        synth.SynthSpec(num_cameras=0)
    with pytest.raises(MikecocoValidationError, match='style strength'):
        synth.SynthSpec(style_strength=0.0)

    strong = synth.SynthSpec(num_ids=3, image_size=SIZE, style_strength=2.0)
    np.testing.assert_allclose(
        strong.styles[0].pattern, 2.0 * spec.styles[0].pattern, atol=1e-12
    )


def test_render_content() -> None:
    spec = synth.SynthSpec(num_ids=3, image_size=SIZE)
    content = synth.render_content(spec, 1, 0, 0)
    assert content.shape == (*SIZE, 3)
    assert content.min() >= synth.CONTENT_RANGE[0]
    assert content.max() <= synth.CONTENT_RANGE[1]

    np.testing.assert_array_equal(content, synth.render_content(spec, 1, 0, 0))
    assert not np.array_equal(content, synth.render_content(spec, 2, 0, 0))


def test_render_image() -> None:
    spec = synth.SynthSpec(num_ids=2, num_styles=2, image_size=SIZE)
    source = synth.render_image(spec, 0, 1, 2, spec.styles[0])
    target = synth.render_image(spec, 0, 1, 2, spec.target_style)
    assert source.min() >= 0.0
    assert source.max() <= 1.0

    # styles differ only outside the causal band and at DC
    v1, v2, _ = spectral.mask_cutoffs(*SIZE, 0.005, 0.7, 1.0)
    diff = spectral.Spectrum.from_image(source - target).coeffs
    r = band_radius(SIZE)
    np.testing.assert_allclose(diff[(r > v1) & (r <= v2)], 0.0, atol=1e-9)
    assert np.abs(diff).max() > 1e-3


def test_synth_dataset() -> None:
    spec = synth.SynthSpec(num_ids=3, num_cameras=2, images_per_id_per_camera=3, image_size=SIZE)
    out_dir = Path(tempfile.mkdtemp())
    log = base.Logger(None, verbose=False, log_show_ms=False, print_log=False)
    manifests = synth.synth_dataset(spec, out_dir, log)
    assert set(manifests) == {'source', 'target_query', 'target_gallery'}

    counts = {key: len(file_io.read_jsonl(path)) for key, path in manifests.items()}
    assert counts == {'source': 18, 'target_query': 6, 'target_gallery': 12}

    source = data.load_manifest(manifests['source'])
    assert source.num_ids == 3
    assert source.num_cameras == 2
    assert all(r.path.is_file() for r in source.records)
    assert source.records[0].load().shape == (*SIZE, 3)

    query = data.load_manifest(manifests['target_query'])
    assert {r.split for r in query.records} == {'query'}

    # rendering is deterministic
    again = synth.synth_dataset(spec, Path(tempfile.mkdtemp()))
    np.testing.assert_array_equal(
        data.load_manifest(again['source']).records[5].load(),
        source.records[5].load(),
    )


def test_synth_dataset_without_gallery() -> None:
    spec = synth.SynthSpec(num_ids=2, num_cameras=1, images_per_id_per_camera=1, image_size=SIZE)
    log = base.Logger(None, verbose=False, log_show_ms=False, print_log=False)
    with pytest.warns(MikecocoWarning, match='target gallery is empty'):
        manifests = synth.synth_dataset(spec, Path(tempfile.mkdtemp()), log)
    assert file_io.read_jsonl(manifests['target_gallery']) == []


def test_synth_dataset_single_camera() -> None:
    spec = synth.SynthSpec(num_ids=2, num_cameras=1, images_per_id_per_camera=2, image_size=SIZE)
    log = base.Logger(None, verbose=False, log_show_ms=False, print_log=False)
    with pytest.warns(MikecocoWarning, match='discards all queries'):
        manifests = synth.synth_dataset(spec, Path(tempfile.mkdtemp()), log)
    assert len(file_io.read_jsonl(manifests['target_query'])) == 2
    assert len(file_io.read_jsonl(manifests['target_gallery'])) == 2
