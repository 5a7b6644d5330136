#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""Validation test of the parameters frozen in each training stage."""

from __future__ import annotations

import tempfile
from pathlib import Path

import torch

from mikecoco import base, data, file_io, synth, training
from mikecoco.tests.basic.test_model import TINY_ARCHITECTURE

CONFIG = {
    **TINY_ARCHITECTURE,
    'IdentitiesPerBatch': 2,
    'InstancesPerIdentity': 2,
    'Stage1Epochs': 2,
    'Stage2Epochs': 2,
    'StepsPerEpoch': 3,
    'CropPadding': 2,
}


def assert_same(first: dict, second: dict, names: tuple[str, ...]) -> None:
    for name in names:
        assert set(first[name]) == set(second[name])
        for key, tensor in first[name].items():
            assert torch.equal(tensor, second[name][key]), f'{name}.{key}'


def assert_changed(first: dict, second: dict, name: str) -> None:
    assert any(
        not torch.equal(tensor, second[name][key]) for key, tensor in first[name].items()
    )


def test_validation_freeze_contract() -> None:
    temp_dir = Path(tempfile.mkdtemp())
    spec = synth.SynthSpec(
        num_ids=4, num_cameras=2, images_per_id_per_camera=2, image_size=(16, 16)
    )
    manifests = synth.synth_dataset(spec, temp_dir / 'data')
    dataset = data.load_manifest(manifests['source'])
    config = training.TrainConfig(CONFIG)
    options = base.Options({'Seed': 7, 'Workers': 2})

    stage1 = training.train_stage1(config, dataset, temp_dir / 'run', options)
    stage2 = training.train_stage2(config, dataset, stage1, temp_dir / 'run', options)
    resumed = training.train_stage1(
        config, dataset, temp_dir / 'resumed', options, resume=stage1
    )

    first = file_io.load_checkpoint(stage1)['state']
    second = file_io.load_checkpoint(stage2)['state']
    again = file_io.load_checkpoint(resumed)['state']

    assert_same(first, second, ('text_encoder', 'prompts', 'meka'))
    assert_changed(first, second, 'image_encoder')
    assert_changed(first, second, 'classifier')
    assert_changed(first, second, 'moe')

    assert_same(first, again, ('image_encoder', 'text_encoder', 'classifier', 'moe'))
    assert_changed(first, again, 'meka')
    assert_changed(first, again, 'prompts')
