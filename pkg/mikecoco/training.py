#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""
Two-stage training.

Stage 1 learns the expert autoencoders and the prompt set on top of the
frozen dual encoder. Stage 2 loads the stage-1 checkpoint, freezes the
text side and the experts, and trains the image encoder, the identity
classifier and the mixture-of-experts teacher.

"""

from __future__ import annotations

import json
import math
import time
from pathlib import Path
from typing import TYPE_CHECKING, Any

import jsonschema
import numpy as np
import pandas as pd
import torch
from jsonschema import ValidationError

from mikecoco import base, data, file_io, spectral
from mikecoco.mikecoco_warnings import (
    FreezeContractError,
    MikecocoInvalidConfigError,
    MikecocoValidationError,
    NonFiniteLossError,
)
from mikecoco.model.encoders import ARCHITECTURE_KEYS
from mikecoco.model.meka import (
    loss_al,
    loss_cc,
    loss_ec,
    loss_meka,
    loss_rc,
    mean_pairwise_distance,
)
from mikecoco.model.moe import distill_loss
from mikecoco.model.network import NAMESPACES, MikecocoNetwork, snapshot_config
from mikecoco.objectives import (
    LossReport,
    loss_id,
    loss_t2v,
    loss_v2t,
    loss_v2tce,
    stage1_total,
    stage2_total,
)

if TYPE_CHECKING:
    from collections.abc import Callable

SCALE_EPOCHS = {'desk': (3, 5), 'full': (30, 60)}

STAGE1_TRAINABLE = ('meka', 'prompts')


class TrainConfig:
    """
    Validated training configuration.

    Values are read with item access, e.g. `config['Experts']`. The
    configuration is stored verbatim in every checkpoint.

    """

    __slots__ = ['_values']

    def __init__(self, user_config: dict[str, Any] | None = None) -> None:
        """
        Merge user settings over the defaults and validate them.

        Parameters
        ----------
        user_config: dict, optional
            Flat dictionary of training keys.

        Raises
        ------
        MikecocoInvalidConfigError
            If a key is unknown, a value violates the schema, or the
            settings are inconsistent.

        """
        user = dict(user_config or {})
        validate_config(user)
        values = base.merge_default_config(user, 'Training')
        validate_config(values)

        scale_epochs = SCALE_EPOCHS[values['Scale']]
        for key, default in zip(('Stage1Epochs', 'Stage2Epochs'), scale_epochs):
            if values[key] is None:
                values[key] = default
        values['ImageSize'] = [int(v) for v in values['ImageSize']]
        self._values = values
        self._check_consistency()

    def _check_consistency(self) -> None:
        v = self._values
        problems = []
        if not v['MaskK1'] < v['MaskK2'] <= v['MaskK3']:
            problems.append('the mask ratios must satisfy MaskK1 < MaskK2 <= MaskK3')
        if any(side % v['PatchSize'] for side in v['ImageSize']):
            problems.append(
                f'ImageSize {v["ImageSize"]} must be divisible by '
                f'PatchSize {v["PatchSize"]}'
            )
        for key in ('Heads', 'MoEHeads'):
            if v['Width'] % v[key]:
                problems.append(f'Width {v["Width"]} must be divisible by {key}')
        if v['ContextLength'] < v['PromptLength'] + 8:
            problems.append(
                f'ContextLength {v["ContextLength"]} cannot hold a prompt of '
                f'{v["PromptLength"]} slots'
            )
        if problems:
            msg = 'Inconsistent training configuration: ' + '; '.join(problems) + '.'
            raise MikecocoInvalidConfigError(msg)

    @classmethod
    def from_file(cls, filepath: str | Path) -> TrainConfig:
        """
        Load a configuration file.

        Returns
        -------
        TrainConfig
            The validated configuration.

        """
        return cls(file_io.load_config_file(filepath))

    def __getitem__(self, key: str) -> Any:  # noqa: ANN401
        return self._values[key]

    def __contains__(self, key: str) -> bool:
        return key in self._values

    def as_dict(self) -> dict[str, Any]:
        """Copy of the configuration values."""
        return json.loads(json.dumps(self._values))

    def hash(self) -> str:
        """Hex digest identifying the configuration."""
        return base.config_hash(self._values)

    def mask_params(self) -> dict[str, float]:
        """Band-pass mask settings in the keys of `spectral.build_mask`."""
        return {
            key.lower(): self._values[f'Mask{key}']
            for key in ('K1', 'K2', 'K3', 'C1', 'C2', 'M2', 'M4')
        }

    def epochs(self, stage: str) -> int:
        """Epoch count of `stage1` or `stage2`."""
        return self._values['Stage1Epochs' if stage == 'stage1' else 'Stage2Epochs']


def validate_config(config: dict[str, Any]) -> None:
    """
    Validate a flat configuration against the training schema.

    Raises
    ------
    MikecocoInvalidConfigError
        On the first schema violation.

    """
    schema_path = base.mikecoco_path / 'settings/config_schema.json'
    with schema_path.open(encoding='utf-8') as f:
        schema = json.load(f)
    try:
        jsonschema.validate(config, schema)
    except ValidationError as exc:
        location = '/'.join(str(p) for p in exc.absolute_path) or 'configuration'
        msg = f'Invalid training configuration at `{location}`: {exc.message}'
        raise MikecocoInvalidConfigError(msg) from exc


def lr_schedule(step: int, total_steps: int, config: TrainConfig | dict[str, Any]) -> float:
    """
    Learning rate at a step.

    A linear warmup from `WarmupLRStart` to `WarmupLREnd` over the first
    `WarmupFraction` of the steps is followed by a cosine decay from
    `BaseLR` to 0 at `total_steps`.

    Parameters
    ----------
    step: int
        Step index in [0, total_steps].
    total_steps: int
        Length of the schedule.
    config: TrainConfig
        Rate settings.

    Returns
    -------
    float
        The learning rate.

    Raises
    ------
    MikecocoValidationError
        If the step is outside the schedule.

    """
    if total_steps < 0 or not 0 <= step <= total_steps:
        msg = f'Step {step} is outside the schedule [0, {total_steps}].'
        raise MikecocoValidationError(msg)
    warmup = min(total_steps, math.ceil(config['WarmupFraction'] * total_steps))
    if step < warmup:
        start, end = config['WarmupLRStart'], config['WarmupLREnd']
        return start + (end - start) * step / warmup
    span = total_steps - warmup
    if span == 0:
        return 0.0 if total_steps else float(config['WarmupLRStart'])
    progress = (step - warmup) / span
    return 0.5 * config['BaseLR'] * (1.0 + math.cos(math.pi * progress))


def stage_transform(
    config: TrainConfig,
    mode: str,
    seed: int,
    *,
    augment_images: bool,
) -> Callable[[data.ImageRecord, int], np.ndarray]:
    """
    Build the per-image transform of a training stage.

    Images are resized (or augmented), then routed through the selected
    spectral input mode. Every random draw derives from (seed, epoch,
    record index), so the output does not depend on worker scheduling.

    Returns
    -------
    callable
        Maps (record, epoch) to an H x W x 3 grid.

    """
    height, width = config['ImageSize']
    mask = (
        spectral.build_mask(height, width, config.mask_params())
        if mode != 'raw'
        else None
    )
    raw_dii = config['RawDII']
    cfg = config.as_dict()

    def transform(record: data.ImageRecord, epoch: int) -> np.ndarray:
        image = record.load()
        if augment_images:
            image = data.augment(image, cfg, base.derive_seed(seed, epoch, record.index, 1))
        else:
            image = data.resize(image, (height, width))
        noise_seed = base.derive_seed(seed, epoch, record.index, 2)
        return spectral.transform_image(image, mode, mask, noise_seed, raw_dii=raw_dii)

    return transform


class StageLoop:
    """
    Optimization loop shared by both stages.

    Owns the sampler, the input pipeline, the optimizer and the
    per-step log. Collections that are not trainable in the stage are
    frozen before the first step and their hashes are checked after
    every epoch.

    """

    def __init__(
        self,
        stage: str,
        config: TrainConfig,
        options: base.Options,
        dataset: data.Dataset,
        network: MikecocoNetwork,
        trainable: tuple[str, ...],
        out_dir: Path,
        transform: Callable[[data.ImageRecord, int], np.ndarray],
        compute_loss: Callable[[data.Batch], LossReport],
    ) -> None:
        self.stage = stage
        self.config = config
        self.options = options
        self.log = options.log
        self.dataset = dataset
        self.network = network
        self.trainable = trainable
        self.frozen = tuple(n for n in NAMESPACES if n not in trainable)
        self.out_dir = out_dir
        self.compute_loss = compute_loss
        self.seed = run_seed(options)
        self.sampler = data.PKSampler(
            dataset,
            config['IdentitiesPerBatch'],
            config['InstancesPerIdentity'],
            self.seed,
        )
        self.pipeline = data.InputPipeline(
            dataset,
            self.sampler,
            transform,
            options.workers,
            options.queue_size,
            self.log,
        )
        steps = len(self.sampler)
        if config['StepsPerEpoch'] is not None:
            steps = min(steps, config['StepsPerEpoch'])
        self.steps_per_epoch = steps

    def apply_freeze_flags(self) -> None:
        collections = self.network.collections()
        for name in self.frozen:
            collections[name].freeze()
        for name in self.trainable:
            collections[name].unfreeze()

    def _optimizer(self) -> torch.optim.Optimizer:
        collections = self.network.collections()
        parameters = [
            p for name in self.trainable for p in collections[name].parameters()
        ]
        return torch.optim.AdamW(
            parameters,
            lr=self.config['WarmupLRStart'],
            weight_decay=self.config['WeightDecay'],
        )

    def _dump_nonfinite(self, step: int, batch: data.Batch, report: LossReport) -> Path:
        path = self.out_dir / f'nonfinite_{self.stage}_step{step}.json'
        file_io.save_report(
            {
                'stage': self.stage,
                'step': step,
                'epoch': batch.epoch,
                'indices': batch.indices,
                'paths': [str(self.dataset.records[i].path) for i in batch.indices],
                'components': {k: repr(v) for k, v in report.as_dict().items()},
            },
            path,
        )
        return path

    def _check_frozen(self, expected: dict[str, str]) -> None:
        current = self.network.hashes(self.frozen)
        for name, digest in expected.items():
            if current[name] != digest:
                raise FreezeContractError(name, self.stage)

    def run(self) -> dict[str, Any]:
        """
        Train for the configured number of epochs.

        Returns
        -------
        dict
            Loss trace, epoch means and parameter hashes.

        Raises
        ------
        NonFiniteLossError
            If a step produces a non-finite loss. A diagnostic file with
            the batch record indices is written first.
        FreezeContractError
            If a frozen collection changed.

        """
        epochs = self.config.epochs(self.stage)
        total_steps = epochs * self.steps_per_epoch
        device = torch.device(self.options.device)
        log_path = self.out_dir / 'train_log.jsonl'

        self.apply_freeze_flags()
        frozen_hashes = self.network.hashes(self.frozen)
        trainable_start = self.network.hashes(self.trainable)
        optimizer = self._optimizer()
        self.network.train()

        self.log.msg(
            f'Training {self.stage}',
            epochs=epochs,
            steps_per_epoch=self.steps_per_epoch,
            trainable=','.join(self.trainable),
        )
        started = time.perf_counter()
        trace: list[float] = []
        epoch_means: list[dict[str, float]] = []
        step = 0
        for epoch in range(epochs):
            rows = []
            for batch in self.pipeline.epoch(epoch, limit=self.steps_per_epoch):
                lr = lr_schedule(step, total_steps, self.config)
                for group in optimizer.param_groups:
                    group['lr'] = lr
                batch.images = base.ensure_value(batch.images).to(device)
                batch.identities = batch.identities.to(device)
                if batch.cameras is not None:
                    batch.cameras = batch.cameras.to(device)

                report = self.compute_loss(batch)
                if not report.is_finite():
                    dump = self._dump_nonfinite(step, batch, report)
                    self.log.msg(f'Wrote diagnostic dump {dump}', level='error')
                    raise NonFiniteLossError(self.stage, step, batch.indices)
                optimizer.zero_grad(set_to_none=True)
                report.total.backward()
                optimizer.step()

                row = {
                    'step': step,
                    'epoch': epoch,
                    'stage': self.stage,
                    'lr': lr,
                    **report.as_dict(),
                    'wall_time': time.perf_counter() - started,
                }
                file_io.write_jsonl([row], log_path, append=True)
                self.log.debug('step', **{k: row[k] for k in ('step', 'lr', 'total')})
                rows.append(row)
                trace.append(row['total'])
                step += 1

            self._check_frozen(frozen_hashes)
            means = (
                pd.DataFrame(rows)
                .drop(columns=['step', 'epoch', 'stage', 'lr', 'wall_time'])
                .mean()
            )
            epoch_means.append({k: float(v) for k, v in means.items()})
            self.log.msg(
                f'{self.stage} epoch {epoch + 1}/{epochs}',
                **{k: round(float(v), 6) for k, v in means.items()},
            )

        return {
            'loss_trace': trace,
            'epoch_means': epoch_means,
            'steps': step,
            'frozen_hashes': frozen_hashes,
            'trainable_hashes_start': trainable_start,
            'trainable_hashes_end': self.network.hashes(self.trainable),
        }


def run_seed(options: base.Options) -> int:
    """Master seed of a run; 0 when the options carry none."""
    return 0 if options.seed is None else int(options.seed)


def _fixed_batch(
    dataset: data.Dataset,
    config: TrainConfig,
    seed: int,
    transform: Callable[[data.ImageRecord, int], np.ndarray],
    device: torch.device,
) -> tuple[torch.Tensor, torch.Tensor]:
    batch = data.pk_sample(
        dataset, config['IdentitiesPerBatch'], config['InstancesPerIdentity'], seed
    )
    images = data.to_tensor([transform(dataset.records[i], 0) for i in batch.indices])
    return images.to(device), batch.identities.to(device)


def _save_stage(
    stage: str,
    out_dir: Path,
    config: TrainConfig,
    network: MikecocoNetwork,
    dataset: data.Dataset,
    metrics: dict[str, Any],
) -> Path:
    path = file_io.save_checkpoint(
        out_dir / f'{stage}.pt',
        stage=stage,
        config=snapshot_config(config.as_dict(), network),
        state=network.state(),
        num_ids=dataset.num_ids,
        num_cameras=dataset.num_cameras,
        metrics=metrics,
    )
    if network.log:
        network.log.msg(f'Saved {stage} checkpoint to {path}')
    return path


def train_stage1(
    config: TrainConfig,
    dataset: data.Dataset,
    out_dir: str | Path,
    options: base.Options,
    *,
    resume: str | Path | None = None,
    backbone: str | None = None,
) -> Path:
    """
    Train the expert autoencoders and the prompt set.

    The dual encoder is frozen. Inputs follow `Stage1Input` (DII by
    default) without augmentation. The objective is the MEKA loss plus
    the two visual-text contrastive losses.

    Parameters
    ----------
    config: TrainConfig
        Training configuration.
    dataset: Dataset
        Source-domain dataset.
    out_dir: str
        Output directory for the checkpoint and the step log.
    options: Options
        Runtime options: seed, device, workers, logger.
    resume: str, optional
        Stage-1 checkpoint to warm-start from.
    backbone: str, optional
        Overrides `config['Backbone']`.

    Returns
    -------
    Path
        Location of the stage-1 checkpoint.

    Raises
    ------
    MikecocoInvalidConfigError
        If the camera loss is enabled but the dataset has no cameras.

    """
    log = options.log
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    seed = run_seed(options)
    use_cc = config['UseCameraLoss'] and config['Lambda1'] > 0
    if use_cc and not dataset.has_cameras:
        msg = (
            'The camera loss is enabled, but the manifest has no camera '
            'labels. Set `UseCameraLoss` to false or `Lambda1` to 0.'
        )
        raise MikecocoInvalidConfigError(msg)

    base.seed_everything(base.derive_seed(seed, 1))
    network = MikecocoNetwork(
        config.as_dict(),
        dataset.num_ids,
        dataset.num_cameras,
        backbone=backbone,
        log=log,
    )
    if resume is not None:
        payload = file_io.load_checkpoint(resume, expected_stage='stage1')
        _check_compatible(payload, dataset, config)
        network.load_state(payload['state'])
        log.msg(f'Resuming from {resume}')
    device = torch.device(options.device)
    network.to(device)

    encoder = network.encoder
    lambdas = (config['Lambda1'], config['Lambda2'], config['Lambda3'])

    def compute_loss(batch: data.Batch) -> LossReport:
        with torch.no_grad():
            features = encoder.encode_image(base.ensure_value(batch.images))
        bundle = network.meka(features)
        text = encoder.encode_prompt_table(network.prompts)
        components = {
            'L_EC': loss_ec(bundle),
            'L_RC': loss_rc(bundle, features),
            'L_AL': loss_al(bundle),
        }
        if use_cc:
            components['L_CC'] = loss_cc(bundle, batch.cameras)
        _, meka_report = loss_meka(components, *lambdas)
        return stage1_total(
            meka_report,
            loss_v2t(bundle.latents, text, batch.identities, encoder.scale),
            loss_t2v(bundle.latents, text, batch.identities, encoder.scale),
        )

    transform = stage_transform(
        config, config['Stage1Input'], seed, augment_images=False
    )
    fixed_images, _ = _fixed_batch(dataset, config, seed, transform, device)

    def latent_distance() -> float:
        with torch.no_grad():
            features = encoder.encode_image(fixed_images)
            return mean_pairwise_distance(network.meka.encode(features))

    distance_start = latent_distance()
    loop = StageLoop(
        'stage1',
        config,
        options,
        dataset,
        network,
        STAGE1_TRAINABLE,
        out_path,
        transform,
        compute_loss,
    )
    metrics = loop.run()
    metrics.update(
        {
            'latent_distance_start': distance_start,
            'latent_distance_end': latent_distance(),
            'seed': seed,
            'config_hash': config.hash(),
            'raw_ids': list(dataset.id_map),
        }
    )
    log.msg(
        'Expert latent distance',
        start=round(metrics['latent_distance_start'], 6),
        end=round(metrics['latent_distance_end'], 6),
    )
    return _save_stage('stage1', out_path, config, network, dataset, metrics)


def _check_compatible(
    payload: dict[str, Any], dataset: data.Dataset, config: TrainConfig
) -> None:
    if payload['num_ids'] != dataset.num_ids:
        msg = (
            f'The checkpoint was trained on {payload["num_ids"]} identities, '
            f'the manifest has {dataset.num_ids}.'
        )
        raise MikecocoValidationError(msg)
    for key in ('Experts', 'PromptLength'):
        if payload['config'][key] != config[key]:
            msg = (
                f'The checkpoint uses {key}={payload["config"][key]}, the '
                f'configuration asks for {config[key]}.'
            )
            raise MikecocoInvalidConfigError(msg)


def train_stage2(
    config: TrainConfig,
    dataset: data.Dataset,
    stage1_checkpoint: str | Path,
    out_dir: str | Path,
    options: base.Options,
) -> Path:
    """
    Train the image encoder, the identity classifier and the teacher.

    The text encoder, the prompt set and the expert autoencoders come
    from the stage-1 checkpoint and stay frozen. Inputs are augmented
    and then follow `Stage2Input` (SPI by default, with fresh noise per
    epoch). The objective is alpha1 * L_ID + alpha2 * L_v2tce + L_dis;
    with `UseMoE` the teacher's own identity loss joins the alpha2
    group.

    Parameters
    ----------
    config: TrainConfig
        Training configuration.
    dataset: Dataset
        Source-domain dataset, the same one stage 1 used.
    stage1_checkpoint: str
        Location of the stage-1 checkpoint.
    out_dir: str
        Output directory for the checkpoint and the step log.
    options: Options
        Runtime options.

    Returns
    -------
    Path
        Location of the stage-2 checkpoint.

    Raises
    ------
    MikecocoValidationError
        If the checkpoint is not a stage-1 checkpoint or does not match
        the dataset.

    """
    log = options.log
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    seed = run_seed(options)
    payload = file_io.load_checkpoint(stage1_checkpoint, expected_stage='stage1')
    _check_compatible(payload, dataset, config)

    base.seed_everything(base.derive_seed(seed, 2))
    build_config = config.as_dict()
    build_config.update({k: payload['config'][k] for k in ARCHITECTURE_KEYS})
    network = MikecocoNetwork(
        build_config, payload['num_ids'], payload['num_cameras'], backbone='toy', log=log
    )
    network.load_state(
        payload['state'], ('image_encoder', 'text_encoder', 'prompts', 'meka')
    )
    device = torch.device(options.device)
    network.to(device)

    encoder = network.encoder
    with torch.no_grad():
        text_table = encoder.encode_prompt_table(network.prompts)
    smoothing = config['LabelSmoothing']
    use_moe = config['UseMoE']
    use_kd = use_moe and config['UseKD']

    def compute_loss(batch: data.Batch) -> LossReport:
        ids = batch.identities
        features = encoder.encode_image(base.ensure_value(batch.images))
        bundle = network.meka(features)
        z_s = network.classifier(features)
        teacher_loss = None
        distill = None
        if use_moe:
            teacher = network.moe(bundle.latents, text_table[ids])
            teacher_loss = loss_id(teacher.z_t, ids, smoothing)
            if use_kd:
                distill = distill_loss(z_s, teacher.z_t, reverse=config['ReverseKL'])
        return stage2_total(
            loss_id(z_s, ids, smoothing),
            loss_v2tce(bundle.latents, text_table, ids, encoder.scale, smoothing),
            distill,
            config['Alpha1'],
            config['Alpha2'],
            teacher_loss,
        )

    trainable: tuple[str, ...] = ('image_encoder', 'classifier')
    if use_moe:
        trainable = (*trainable, 'moe')
    transform = stage_transform(
        config, config['Stage2Input'], seed, augment_images=True
    )
    held_in = stage_transform(config, 'raw', seed, augment_images=False)
    fixed_images, fixed_ids = _fixed_batch(dataset, config, seed, held_in, device)

    def held_in_loss() -> float:
        network.eval()
        with torch.no_grad():
            logits = network.classifier(encoder.encode_image(fixed_images))
            value = loss_id(logits, fixed_ids, 0.0)
        network.train()
        return float(value)

    loop = StageLoop(
        'stage2',
        config,
        options,
        dataset,
        network,
        trainable,
        out_path,
        transform,
        compute_loss,
    )
    loop.apply_freeze_flags()
    id_loss_start = held_in_loss()
    metrics = loop.run()
    metrics.update(
        {
            'held_in_id_loss_start': id_loss_start,
            'held_in_id_loss_end': held_in_loss(),
            'seed': seed,
            'config_hash': config.hash(),
            'raw_ids': list(dataset.id_map),
            'stage1_config_hash': payload['metrics'].get('config_hash'),
        }
    )
    log.msg(
        'Held-in identity loss',
        start=round(metrics['held_in_id_loss_start'], 6),
        end=round(metrics['held_in_id_loss_end'], 6),
    )
    return _save_stage('stage2', out_path, config, network, dataset, metrics)
