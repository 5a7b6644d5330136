#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""These are unit and integration tests on the training module of mikecoco."""

from __future__ import annotations

import json
import math
import tempfile
from pathlib import Path
from typing import Any

import numpy as np
import pytest
import torch
import torch.nn.functional as F  # noqa: N812

from mikecoco import base, data, file_io, training
from mikecoco.mikecoco_warnings import (
    FreezeContractError,
    MikecocoInvalidConfigError,
    MikecocoValidationError,
    NonFiniteLossError,
)
from mikecoco.model.network import NAMESPACES, MikecocoNetwork
from mikecoco.objectives import LossReport
from mikecoco.tests.basic.test_model import TINY_ARCHITECTURE
from mikecoco.tests.util import write_manifest_tree

# The tests maintain the order of definitions of the `training.py` file.

TINY_TRAINING = {
    **TINY_ARCHITECTURE,
    'IdentitiesPerBatch': 2,
    'InstancesPerIdentity': 2,
    'Stage1Epochs': 2,
    'Stage2Epochs': 2,
    'StepsPerEpoch': 2,
    'CropPadding': 2,
}


def tiny_config(**overrides: Any) -> training.TrainConfig:  # noqa: ANN401
    return training.TrainConfig({**TINY_TRAINING, **overrides})


def tiny_options(**overrides: Any) -> base.Options:  # noqa: ANN401
    return base.Options({'Seed': 0, 'Workers': 1, **overrides})


@pytest.fixture
def source() -> data.Dataset:
    root = Path(tempfile.mkdtemp())
    labels = [(i, c) for i in range(4) for c in range(2) for _ in range(2)]
    return data.load_manifest(write_manifest_tree(root, labels, size=(20, 20)))


def test_train_config() -> None:
    config = training.TrainConfig()
    assert config['Experts'] == 2
    assert config.epochs('stage1') == 3
    assert config.epochs('stage2') == 5
    assert 'Alpha1' in config
    assert 'Seed' not in config

    full = training.TrainConfig({'Scale': 'full', 'Stage2Epochs': 7})
    assert full.epochs('stage1') == 30
    assert full.epochs('stage2') == 7

    assert config.mask_params() == {
        'k1': 0.005,
        'k2': 0.7,
        'k3': 1.0,
        'c1': 0.95,
        'c2': 0.3,
        'm2': 0.01,
        'm4': 0.5,
    }

    copy = config.as_dict()
    copy['Experts'] = 9
    assert config['Experts'] == 2

    assert config.hash() == training.TrainConfig().hash()
    assert config.hash() != training.TrainConfig({'Experts': 3}).hash()


def test_train_config_errors() -> None:
    with pytest.raises(MikecocoInvalidConfigError, match='Additional properties'):
        training.TrainConfig({'Expert': 3})
    with pytest.raises(MikecocoInvalidConfigError, match='`Experts`'):
        training.TrainConfig({'Experts': 1})
    with pytest.raises(MikecocoInvalidConfigError, match='`Scale`'):
        training.TrainConfig({'Scale': 'huge'})
    with pytest.raises(MikecocoInvalidConfigError, match='divisible by PatchSize'):
        training.TrainConfig({'ImageSize': [60, 64]})
    with pytest.raises(MikecocoInvalidConfigError, match='divisible by Heads'):
        training.TrainConfig({'Width': 66})
    with pytest.raises(MikecocoInvalidConfigError, match='MaskK1 < MaskK2'):
        training.TrainConfig({'MaskK1': 0.9})
    with pytest.raises(MikecocoInvalidConfigError, match='cannot hold a prompt'):
        training.TrainConfig({'ContextLength': 10})


def test_train_config_from_file() -> None:
    path = Path(tempfile.mkdtemp()) / 'config.json'
    path.write_text(json.dumps({'Experts': 3, 'UseMoE': False}), encoding='utf-8')
    config = training.TrainConfig.from_file(path)
    assert config['Experts'] == 3
    assert config['UseMoE'] is False

    with pytest.raises(FileNotFoundError):
        training.TrainConfig.from_file(path.parent / 'missing.json')


def test_validate_config() -> None:
    training.validate_config({'Experts': 4})
    with pytest.raises(MikecocoInvalidConfigError, match='`WarmupFraction`'):
        training.validate_config({'WarmupFraction': 1.5})


def test_lr_schedule() -> None:
    config = training.TrainConfig()
    start, end, peak = 5e-7, 5e-6, 3.5e-4
    assert training.lr_schedule(0, 100, config) == start
    assert math.isclose(training.lr_schedule(5, 100, config), start + (end - start) / 2)
    assert math.isclose(training.lr_schedule(10, 100, config), peak)
    assert math.isclose(training.lr_schedule(55, 100, config), peak / 2)
    assert math.isclose(training.lr_schedule(100, 100, config), 0.0, abs_tol=1e-15)

    rates = [training.lr_schedule(s, 100, config) for s in range(10, 101)]
    assert all(a >= b for a, b in zip(rates, rates[1:], strict=False))

    assert training.lr_schedule(0, 0, config) == start

    with pytest.raises(MikecocoValidationError, match='outside the schedule'):
        training.lr_schedule(101, 100, config)
    with pytest.raises(MikecocoValidationError, match='outside the schedule'):
        training.lr_schedule(-1, 100, config)


def test_stage_transform(source: data.Dataset) -> None:
    config = tiny_config()
    record = source.records[3]

    raw = training.stage_transform(config, 'raw', 0, augment_images=False)
    np.testing.assert_allclose(raw(record, 0), data.resize(record.load(), (16, 16)))

    spi = training.stage_transform(config, 'spi', 0, augment_images=True)
    first = spi(record, 1)
    assert first.shape == (16, 16, 3)
    np.testing.assert_array_equal(first, spi(record, 1))
    assert not np.array_equal(first, spi(record, 2))

    dii = training.stage_transform(config, 'dii', 0, augment_images=False)
    np.testing.assert_array_equal(dii(record, 0), dii(record, 5))


def test_stage_loop_nonfinite(source: data.Dataset) -> None:
    config = tiny_config()
    options = tiny_options()
    network = MikecocoNetwork(config.as_dict(), source.num_ids, source.num_cameras)
    out_dir = Path(tempfile.mkdtemp())

    def compute_loss(batch: data.Batch) -> LossReport:  # noqa: ARG001
        return LossReport({'L_EC': torch.tensor(float('nan'))}, {'L_EC': 1.0}, 'stage1')

    loop = training.StageLoop(
        'stage1',
        config,
        options,
        source,
        network,
        training.STAGE1_TRAINABLE,
        out_dir,
        training.stage_transform(config, 'raw', 0, augment_images=False),
        compute_loss,
    )
    with pytest.raises(NonFiniteLossError) as excinfo:
        loop.run()
    assert excinfo.value.step == 0
    assert len(excinfo.value.indices) == 4
    dump = json.loads((out_dir / 'nonfinite_stage1_step0.json').read_text())
    assert dump['indices'] == excinfo.value.indices
    assert len(dump['paths']) == 4


def test_stage_loop_freeze_contract(source: data.Dataset) -> None:
    config = tiny_config()
    network = MikecocoNetwork(config.as_dict(), source.num_ids, source.num_cameras)

    def compute_loss(batch: data.Batch) -> LossReport:  # noqa: ARG001
        with torch.no_grad():
            network.classifier.head.bias.add_(1.0)
        loss = (network.meka.discriminator.weight**2).sum()
        return LossReport({'L_EC': loss}, {'L_EC': 1.0}, 'stage1')

    loop = training.StageLoop(
        'stage1',
        config,
        tiny_options(),
        source,
        network,
        training.STAGE1_TRAINABLE,
        Path(tempfile.mkdtemp()),
        training.stage_transform(config, 'raw', 0, augment_images=False),
        compute_loss,
    )
    assert loop.steps_per_epoch == 2
    assert loop.frozen == ('image_encoder', 'text_encoder', 'classifier', 'moe')
    with pytest.raises(FreezeContractError, match='`classifier`'):
        loop.run()


def test_run_seed() -> None:
    assert training.run_seed(base.Options({'Seed': 5})) == 5
    assert training.run_seed(base.Options({'Seed': None})) == 0


def test_train_stage1(source: data.Dataset) -> None:
    out_dir = Path(tempfile.mkdtemp())
    path = training.train_stage1(tiny_config(), source, out_dir, tiny_options())
    assert path == (out_dir / 'stage1.pt').resolve()

    payload = file_io.load_checkpoint(path, expected_stage='stage1')
    assert payload['num_ids'] == 4
    assert payload['num_cameras'] == 2
    assert set(payload['state']) == set(NAMESPACES)
    metrics = payload['metrics']
    assert metrics['steps'] == 4
    assert len(metrics['loss_trace']) == 4
    assert len(metrics['epoch_means']) == 2
    assert set(metrics['epoch_means'][0]) == {
        'L_EC',
        'L_CC',
        'L_RC',
        'L_AL',
        'L_v2t',
        'L_t2v',
        'total',
    }
    assert metrics['raw_ids'] == [0, 1, 2, 3]
    assert metrics['config_hash'] == tiny_config().hash()
    assert metrics['latent_distance_start'] >= 0.0

    # frozen collections are bit-identical, trainable ones moved
    network = MikecocoNetwork.from_checkpoint(payload)
    frozen = metrics['frozen_hashes']
    assert set(frozen) == {'image_encoder', 'text_encoder', 'classifier', 'moe'}
    assert network.hashes(tuple(frozen)) == frozen
    for name in training.STAGE1_TRAINABLE:
        assert metrics['trainable_hashes_start'][name] != metrics['trainable_hashes_end'][name]

    rows = [r for _, r in file_io.read_jsonl(out_dir / 'train_log.jsonl')]
    assert [r['step'] for r in rows] == [0, 1, 2, 3]
    assert {'epoch', 'stage', 'lr', 'total', 'wall_time', 'L_v2t'} <= set(rows[0])
    assert rows[0]['lr'] == 5e-7


def test_train_stage1_deterministic(source: data.Dataset) -> None:
    traces = []
    for _ in range(2):
        out_dir = Path(tempfile.mkdtemp())
        options = tiny_options(Deterministic=True)
        path = training.train_stage1(tiny_config(), source, out_dir, options)
        traces.append(file_io.load_checkpoint(path)['metrics']['loss_trace'])
    torch.use_deterministic_algorithms(mode=False)
    assert traces[0] == traces[1]


def test_train_stage1_camera_free() -> None:
    root = Path(tempfile.mkdtemp())
    manifest = write_manifest_tree(root, [(i, 0) for i in range(4) for _ in range(2)])
    rows = [{k: v for k, v in r.items() if k != 'camera'} for _, r in file_io.read_jsonl(manifest)]
    file_io.write_jsonl(rows, manifest)
    dataset = data.load_manifest(manifest, mode='target')

    with pytest.raises(MikecocoInvalidConfigError, match='no camera labels'):
        training.train_stage1(tiny_config(), dataset, root / 'out', tiny_options())

    path = training.train_stage1(
        tiny_config(UseCameraLoss=False), dataset, root / 'out', tiny_options()
    )
    metrics = file_io.load_checkpoint(path)['metrics']
    assert 'L_CC' not in metrics['epoch_means'][0]


def test_train_stage1_resume(source: data.Dataset) -> None:
    out_dir = Path(tempfile.mkdtemp())
    first = training.train_stage1(tiny_config(), source, out_dir / 'a', tiny_options())
    second = training.train_stage1(
        tiny_config(), source, out_dir / 'b', tiny_options(), resume=first
    )
    start = file_io.load_checkpoint(second)['metrics']['trainable_hashes_start']
    end = file_io.load_checkpoint(first)['metrics']['trainable_hashes_end']
    assert start == end

    with pytest.raises(MikecocoInvalidConfigError, match='Experts=2'):
        training.train_stage1(
            tiny_config(Experts=3), source, out_dir / 'c', tiny_options(), resume=first
        )


def test_train_stage1_prompts_match_own_identity(source: data.Dataset) -> None:
    config = tiny_config(
        IdentitiesPerBatch=4,
        InstancesPerIdentity=4,
        Stage1Epochs=60,
        StepsPerEpoch=None,
        BaseLR=1e-2,
        Lambda2=1.0,
        Stage1Input='raw',
    )
    path = training.train_stage1(config, source, Path(tempfile.mkdtemp()), tiny_options())
    network = MikecocoNetwork.from_checkpoint(file_io.load_checkpoint(path)).eval()

    transform = training.stage_transform(config, 'raw', 0, augment_images=False)
    images = data.to_tensor([transform(record, 0) for record in source.records])
    identities = torch.tensor([record.identity for record in source.records])
    with torch.no_grad():
        latents = F.normalize(network.meka.encode(network.encoder.encode_image(images)), dim=-1)
        text = F.normalize(network.encoder.encode_prompt_table(network.prompts), dim=-1)
    # mean over experts of the cosine between image n and prompt c
    scores = torch.einsum('nkd,ckd->nc', latents, text) / latents.shape[1]
    for identity in range(source.num_ids):
        mean_scores = scores[identities == identity].mean(dim=0)
        assert int(mean_scores.argmax()) == identity


def test_train_stage2(source: data.Dataset) -> None:
    out_dir = Path(tempfile.mkdtemp())
    config = tiny_config()
    stage1 = training.train_stage1(config, source, out_dir, tiny_options())
    stage2 = training.train_stage2(config, source, stage1, out_dir, tiny_options())
    assert stage2 == (out_dir / 'stage2.pt').resolve()

    first = file_io.load_checkpoint(stage1)
    second = file_io.load_checkpoint(stage2, expected_stage='stage2')
    metrics = second['metrics']
    assert metrics['steps'] == 4
    assert set(metrics['epoch_means'][0]) == {'L_ID', 'L_v2tce', 'L_moe', 'L_dis', 'total'}
    assert metrics['stage1_config_hash'] == first['metrics']['config_hash']
    assert metrics['held_in_id_loss_start'] > 0.0

    # the text side and the experts are carried over untouched
    net1 = MikecocoNetwork.from_checkpoint(first)
    net2 = MikecocoNetwork.from_checkpoint(second)
    for name in ('text_encoder', 'prompts', 'meka'):
        assert net1.hashes((name,)) == net2.hashes((name,))
    assert net1.hashes(('image_encoder',)) != net2.hashes(('image_encoder',))
    assert set(metrics['trainable_hashes_end']) == {'image_encoder', 'classifier', 'moe'}

    with pytest.raises(MikecocoValidationError, match='`stage1` checkpoint is required'):
        training.train_stage2(config, source, stage2, out_dir / 'again', tiny_options())


def test_train_stage2_ablations(source: data.Dataset) -> None:
    out_dir = Path(tempfile.mkdtemp())
    stage1 = training.train_stage1(tiny_config(), source, out_dir, tiny_options())

    no_kd = training.train_stage2(
        tiny_config(UseKD=False), source, stage1, out_dir / 'no_kd', tiny_options()
    )
    means = file_io.load_checkpoint(no_kd)['metrics']['epoch_means'][0]
    assert set(means) == {'L_ID', 'L_v2tce', 'L_moe', 'total'}

    no_moe = training.train_stage2(
        tiny_config(UseMoE=False), source, stage1, out_dir / 'no_moe', tiny_options()
    )
    metrics = file_io.load_checkpoint(no_moe)['metrics']
    assert set(metrics['epoch_means'][0]) == {'L_ID', 'L_v2tce', 'total'}
    assert 'moe' in metrics['frozen_hashes']

    other = data.load_manifest(
        write_manifest_tree(Path(tempfile.mkdtemp()), [(i, 0) for i in range(3) for _ in range(2)])
    )
    with pytest.raises(MikecocoValidationError, match='trained on 4 identities'):
        training.train_stage2(tiny_config(), other, stage1, out_dir / 'x', tiny_options())
