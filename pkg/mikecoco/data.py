#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""Manifests, identity-balanced batch sampling, and the input pipeline."""

from __future__ import annotations

import re
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
import pandas as pd
import torch
from PIL import Image

from mikecoco import base, file_io
from mikecoco.mikecoco_warnings import MikecocoValidationError

if TYPE_CHECKING:
    from collections.abc import Callable, Iterator


class ImageRecord:
    """
    One labeled image of a manifest.

    Attributes
    ----------
    path: Path
        Resolved image location.
    identity: int
        Dense identity label in [0, N_id), or -1 when absent.
    raw_id: Any
        Identity as written in the manifest.
    camera: int or None
        Dense camera label, None when absent.
    domain: str
        `source` or `target`.
    split: str or None
        Split tag copied from the manifest.
    index: int
        Position of the record in its dataset.

    """

    __slots__ = ['camera', 'domain', 'identity', 'index', 'path', 'raw_id', 'split']

    def __init__(
        self,
        path: Path,
        identity: int,
        raw_id: Any,  # noqa: ANN401
        camera: int | None,
        domain: str,
        split: str | None,
        index: int,
    ) -> None:
        self.path = path
        self.identity = identity
        self.raw_id = raw_id
        self.camera = camera
        self.domain = domain
        self.split = split
        self.index = index

    def load(self) -> np.ndarray:
        """
        Load the pixels of the record.

        Returns
        -------
        numpy.ndarray
            H x W x 3 float grid in [0, 1].

        """
        return file_io.load_image(self.path)


class Dataset:
    """
    An immutable collection of image records with dense labels.

    Attributes
    ----------
    records: list of ImageRecord
        The records in manifest order.
    id_map: dict
        Raw identity -> dense identity.
    camera_map: dict
        Raw camera -> dense camera.
    domain: str
        `source` or `target`.
    name: str
        Label used in log messages.

    """

    __slots__ = ['_by_identity', 'camera_map', 'domain', 'id_map', 'name', 'records']

    def __init__(
        self,
        records: list[ImageRecord],
        id_map: dict[Any, int],
        camera_map: dict[Any, int],
        domain: str,
        name: str = 'dataset',
    ) -> None:
        self.records = records
        self.id_map = id_map
        self.camera_map = camera_map
        self.domain = domain
        self.name = name
        by_identity: dict[int, list[int]] = {}
        for record in records:
            by_identity.setdefault(record.identity, []).append(record.index)
        self._by_identity = by_identity

    def __len__(self) -> int:
        return len(self.records)

    @property
    def num_ids(self) -> int:
        """Number of distinct identities."""
        return len(self.id_map)

    @property
    def num_cameras(self) -> int:
        """Number of distinct cameras."""
        return len(self.camera_map)

    @property
    def has_cameras(self) -> bool:
        """True when every record carries a camera label."""
        return all(r.camera is not None for r in self.records) and bool(self.records)

    @property
    def identities(self) -> np.ndarray:
        """Dense identity label per record."""
        return np.array([r.identity for r in self.records], dtype=np.int64)

    @property
    def cameras(self) -> np.ndarray | None:
        """Dense camera label per record, None if any record lacks one."""
        if not self.has_cameras:
            return None
        return np.array([r.camera for r in self.records], dtype=np.int64)

    def indices_of(self, identity: int) -> list[int]:
        """Record indices of an identity."""
        return list(self._by_identity.get(identity, []))

    def summary(self) -> pd.Series:
        """
        Summarize the dataset.

        Returns
        -------
        pandas.Series
            Record, identity and camera counts.

        """
        return pd.Series(
            {
                'records': len(self.records),
                'identities': self.num_ids,
                'cameras': self.num_cameras,
                'domain': self.domain,
            },
            name=self.name,
        )

    def subset(self, indices: list[int], name: str | None = None) -> Dataset:
        """
        Build a dataset from a selection of records.

        Labels keep their dense values so that features of the subset
        remain comparable with the parent.

        Returns
        -------
        Dataset
            The new dataset with re-numbered record indices.

        """
        records = []
        for new_index, old_index in enumerate(indices):
            r = self.records[old_index]
            records.append(
                ImageRecord(
                    r.path, r.identity, r.raw_id, r.camera, r.domain, r.split, new_index
                )
            )
        return Dataset(
            records, self.id_map, self.camera_map, self.domain, name or self.name
        )


def _sort_key(value: Any) -> tuple[int, Any]:  # noqa: ANN401
    # ints before strings, each in natural order
    if isinstance(value, (int, np.integer)):
        return (0, int(value))
    return (1, str(value))


def load_manifest(
    path: str | Path,
    mode: str = 'source',
    split: str | None = None,
    log: base.Logger | None = None,
) -> Dataset:
    """
    Load a JSON-lines manifest.

    Each line holds an object with `path`, `id`, `camera` and `split`
    fields. Identity and camera labels are re-indexed densely in the
    sorted order of their raw values.

    Parameters
    ----------
    path: str
        Manifest location. Relative image paths resolve against its
        directory.
    mode: str
        `source` requires identity and camera on every record;
        `target` allows either to be missing.
    split: str, optional
        If given, only records with this split tag are kept.
    log: Logger, optional
        Receives a summary message.

    Returns
    -------
    Dataset
        The loaded dataset.

    Raises
    ------
    MikecocoValidationError
        On an empty manifest, a record lacking required fields,
        or a duplicate path.

    """
    if mode not in {'source', 'target'}:
        msg = f'Unknown manifest mode `{mode}`. Use `source` or `target`.'
        raise MikecocoValidationError(msg)

    manifest_path = Path(path).resolve()
    rows = file_io.read_jsonl(manifest_path)
    root = manifest_path.parent

    parsed = []
    seen: dict[Path, int] = {}
    for line_no, row in rows:
        if split is not None and row.get('split') != split:
            continue
        if 'path' not in row or not isinstance(row['path'], str):
            msg = f'{manifest_path}:{line_no}: record has no `path` field.'
            raise MikecocoValidationError(msg)
        image_path = Path(row['path'])
        if not image_path.is_absolute():
            image_path = root / image_path
        image_path = image_path.resolve()
        if image_path in seen:
            msg = (
                f'{manifest_path}:{line_no}: duplicate path {row["path"]} '
                f'(first listed on line {seen[image_path]}).'
            )
            raise MikecocoValidationError(msg)
        seen[image_path] = line_no
        raw_id = row.get('id')
        raw_camera = row.get('camera')
        if mode == 'source':
            for field, value in (('id', raw_id), ('camera', raw_camera)):
                if value is None:
                    msg = (
                        f'{manifest_path}:{line_no}: source record is missing '
                        f'the `{field}` field.'
                    )
                    raise MikecocoValidationError(msg)
        parsed.append((image_path, raw_id, raw_camera, row.get('split')))

    if not parsed:
        msg = f'{manifest_path}: no records.'
        raise MikecocoValidationError(msg)

    raw_ids = sorted({p[1] for p in parsed if p[1] is not None}, key=_sort_key)
    raw_cameras = sorted({p[2] for p in parsed if p[2] is not None}, key=_sort_key)
    id_map = {raw: dense for dense, raw in enumerate(raw_ids)}
    camera_map = {raw: dense for dense, raw in enumerate(raw_cameras)}

    records = [
        ImageRecord(
            image_path,
            -1 if raw_id is None else id_map[raw_id],
            raw_id,
            None if raw_camera is None else camera_map[raw_camera],
            mode,
            record_split,
            index,
        )
        for index, (image_path, raw_id, raw_camera, record_split) in enumerate(parsed)
    ]
    dataset = Dataset(records, id_map, camera_map, mode, manifest_path.stem)

    if log:
        log.msg(
            f'Loaded manifest {manifest_path.name}',
            records=len(dataset),
            identities=dataset.num_ids,
            cameras=dataset.num_cameras,
        )
    return dataset


def align_labels(*datasets: Dataset) -> list[Dataset]:
    """
    Re-index several datasets with one joint label map.

    Query and gallery manifests are loaded separately, so their dense
    labels only agree after a shared re-indexing of the raw values.

    Returns
    -------
    list of Dataset
        Datasets with comparable identity and camera labels.

    """
    raw_ids = sorted(
        {r.raw_id for d in datasets for r in d.records if r.raw_id is not None},
        key=_sort_key,
    )
    id_map = {raw: dense for dense, raw in enumerate(raw_ids)}
    raw_cameras = sorted({raw for d in datasets for raw in d.camera_map}, key=_sort_key)
    camera_map = {raw: dense for dense, raw in enumerate(raw_cameras)}

    aligned = []
    for dataset in datasets:
        inverse_camera = {dense: raw for raw, dense in dataset.camera_map.items()}
        records = [
            ImageRecord(
                r.path,
                -1 if r.raw_id is None else id_map[r.raw_id],
                r.raw_id,
                None if r.camera is None else camera_map[inverse_camera[r.camera]],
                r.domain,
                r.split,
                r.index,
            )
            for r in dataset.records
        ]
        aligned.append(
            Dataset(records, id_map, camera_map, dataset.domain, dataset.name)
        )
    return aligned


_FILENAME_PATTERN = re.compile(r'^(?P<camera>[^_]+)_(?P<seq>[^.]+)$')


def make_manifest(
    root: str | Path, split: str = 'train'
) -> tuple[list[dict[str, Any]], list[Path]]:
    """
    Build manifest records from a `<root>/<id>/<camera>_<seq>.<ext>` tree.

    Parameters
    ----------
    root: str
        Root of the tree.
    split: str
        Split tag written on every record.

    Returns
    -------
    tuple
        records: list of dict
            Manifest entries with paths relative to `root`.
        skipped: list of Path
            Files whose names do not follow the pattern.

    Raises
    ------
    MikecocoValidationError
        If the root is not a directory.

    """
    root_path = Path(root).resolve()
    if not root_path.is_dir():
        msg = f'{root_path} is not a directory.'
        raise MikecocoValidationError(msg)

    records = []
    skipped = []
    for file in sorted(p for p in root_path.rglob('*') if p.is_file()):
        relative = file.relative_to(root_path)
        match = _FILENAME_PATTERN.match(file.stem)
        if (
            len(relative.parts) != 2  # noqa: PLR2004
            or file.suffix.lower() not in file_io.IMAGE_EXTENSIONS
            or match is None
        ):
            skipped.append(file)
            continue
        identity: Any = relative.parts[0]
        camera: Any = match['camera']
        if identity.isdigit():
            identity = int(identity)
        if camera.isdigit():
            camera = int(camera)
        records.append(
            {
                'path': relative.as_posix(),
                'id': identity,
                'camera': camera,
                'split': split,
            }
        )
    return records, skipped


class Batch:
    """
    A training mini-batch.

    Attributes
    ----------
    images: torch.Tensor or None
        B x C x H x W pixels, None until the pipeline loads them.
    identities: torch.Tensor
        B dense identity labels.
    cameras: torch.Tensor or None
        B dense camera labels.
    epoch: int
        Epoch the batch belongs to.
    indices: list of int
        Record indices in dataset order.

    """

    __slots__ = ['cameras', 'epoch', 'identities', 'images', 'indices']

    def __init__(
        self,
        indices: list[int],
        identities: torch.Tensor,
        cameras: torch.Tensor | None,
        epoch: int,
        images: torch.Tensor | None = None,
    ) -> None:
        self.indices = indices
        self.identities = identities
        self.cameras = cameras
        self.epoch = epoch
        self.images = images

    def __len__(self) -> int:
        return len(self.indices)


class PKSampler:
    """
    Identity-balanced sampler drawing P identities with M images each.

    One epoch walks through a seeded permutation of the identities in
    groups of P, so every identity appears once before any repeats.
    Identities with fewer than M images are sampled with replacement.

    """

    __slots__ = ['_identity_indices', 'identities_per_batch', 'instances', 'seed']

    def __init__(
        self, dataset: Dataset, P: int, M: int, seed: int = 0  # noqa: N803
    ) -> None:
        """
        Instantiate a sampler.

        Raises
        ------
        MikecocoValidationError
            If P or M is not positive, or P exceeds the identity count.

        """
        if P < 1 or M < 1:
            msg = f'P and M must be positive, received P={P}, M={M}.'
            raise MikecocoValidationError(msg)
        if dataset.num_ids < P:
            msg = (
                f'P={P} identities per batch requested, but the dataset '
                f'only has {dataset.num_ids} identities.'
            )
            raise MikecocoValidationError(msg)
        self.identities_per_batch = P
        self.instances = M
        self.seed = seed
        self._identity_indices = {
            identity: np.array(dataset.indices_of(identity))
            for identity in range(dataset.num_ids)
        }

    def __len__(self) -> int:
        return len(self._identity_indices) // self.identities_per_batch

    def epoch_batches(self, epoch: int) -> list[list[int]]:
        """
        Record indices of every batch of an epoch.

        Returns
        -------
        list
            One list of P * M record indices per batch.

        """
        rng = np.random.default_rng(base.derive_seed(self.seed, epoch))
        order = rng.permutation(len(self._identity_indices))
        batches = []
        for start in range(0, len(self) * self.identities_per_batch, self.identities_per_batch):
            indices: list[int] = []
            for identity in order[start : start + self.identities_per_batch]:
                pool = self._identity_indices[int(identity)]
                replace = len(pool) < self.instances
                indices.extend(
                    int(i) for i in rng.choice(pool, self.instances, replace=replace)
                )
            batches.append(indices)
        return batches


def make_batch(dataset: Dataset, indices: list[int], epoch: int) -> Batch:
    """
    Wrap record indices into a batch with label tensors.

    Returns
    -------
    Batch
        The batch without images.

    """
    records = [dataset.records[i] for i in indices]
    identities = torch.tensor([r.identity for r in records], dtype=torch.long)
    cameras = None
    if all(r.camera is not None for r in records):
        cameras = torch.tensor([r.camera for r in records], dtype=torch.long)
    return Batch(list(indices), identities, cameras, epoch)


def pk_sample(
    dataset: Dataset,
    P: int,  # noqa: N803
    M: int,  # noqa: N803
    seed: int,
    epoch: int = 0,
    batch_index: int = 0,
) -> Batch:
    """
    Draw one P x M batch.

    Returns
    -------
    Batch
        Batch `batch_index` of epoch `epoch` of a sampler seeded with
        `seed`.

    """
    sampler = PKSampler(dataset, P, M, seed)
    return make_batch(dataset, sampler.epoch_batches(epoch)[batch_index], epoch)


def _to_pil_channels(image: np.ndarray) -> list[Image.Image]:
    return [
        Image.fromarray(image[:, :, c].astype(np.float32), mode='F')
        for c in range(image.shape[2])
    ]


def _from_pil_channels(channels: list[Image.Image]) -> np.ndarray:
    return np.stack([np.asarray(c, dtype=np.float64) for c in channels], axis=2)


def resize(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """
    Bilinear resize to (height, width).

    Returns
    -------
    numpy.ndarray
        The resized grid. Returned unchanged when the size matches.

    """
    height, width = size
    if image.shape[:2] == (height, width):
        return image
    channels = [
        c.resize((width, height), Image.Resampling.BILINEAR)
        for c in _to_pil_channels(image)
    ]
    return _from_pil_channels(channels)


def augment(
    image: np.ndarray,
    config: dict[str, Any],
    seed: int | None = None,
    *,
    flip: bool | None = None,
    angle: float | None = None,
    crop_offset: tuple[int, int] | None = None,
) -> np.ndarray:
    """
    Resize, pad-and-crop, flip and rotate an image.

    The random choices derive from `seed`; each can be forced with the
    keyword arguments.

    Parameters
    ----------
    image: numpy.ndarray
        H x W x C grid in [0, 1].
    config: dict
        `ImageSize`, `CropPadding`, `FlipProbability` and
        `RotationDegrees` settings.
    seed: int, optional
        Seed of the random choices.
    flip: bool, optional
        Force the horizontal flip on or off.
    angle: float, optional
        Force the rotation angle in degrees.
    crop_offset: tuple, optional
        Force the (row, column) shift of the crop window relative to
        the unpadded image; (0, 0) leaves the content in place.

    Returns
    -------
    numpy.ndarray
        Grid of the configured size, clipped to [0, 1].

    """
    rng = np.random.default_rng(seed)
    height, width = config['ImageSize']
    pad = int(config['CropPadding'])

    out = resize(np.asarray(image, dtype=np.float64), (height, width))

    dy, dx = (
        crop_offset
        if crop_offset is not None
        else tuple(int(v) for v in rng.integers(-pad, pad + 1, size=2))
    )
    if pad > 0 or (dy, dx) != (0, 0):
        margin = max(pad, abs(dy), abs(dx))
        padded = np.pad(out, ((margin, margin), (margin, margin), (0, 0)))
        top, left = margin + dy, margin + dx
        out = padded[top : top + height, left : left + width]

    do_flip = rng.random() < config['FlipProbability'] if flip is None else flip
    if do_flip:
        out = out[:, ::-1]

    limit = float(config['RotationDegrees'])
    theta = rng.uniform(-limit, limit) if angle is None else angle
    if theta != 0:
        channels = [
            c.rotate(theta, resample=Image.Resampling.BILINEAR)
            for c in _to_pil_channels(np.ascontiguousarray(out))
        ]
        out = _from_pil_channels(channels)

    return np.clip(np.ascontiguousarray(out), 0.0, 1.0)


def to_tensor(images: list[np.ndarray]) -> torch.Tensor:
    """
    Stack H x W x C grids into a B x C x H x W float32 tensor.

    Returns
    -------
    torch.Tensor
        The stacked images.

    """
    array = np.stack(images).transpose(0, 3, 1, 2)
    return torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32))


class InputPipeline:
    """
    Producer pool that materializes batches ahead of the training loop.

    Batches are loaded by a thread pool and handed out in sampler order.
    At most `queue_size` batches are in flight at any time.

    """

    __slots__ = ['dataset', 'log', 'queue_size', 'sampler', 'transform', 'workers']

    def __init__(
        self,
        dataset: Dataset,
        sampler: PKSampler,
        transform: Callable[[ImageRecord, int], np.ndarray],
        workers: int = 1,
        queue_size: int = 4,
        log: base.Logger | None = None,
    ) -> None:
        """
        Instantiate a pipeline.

        Parameters
        ----------
        dataset: Dataset
            Source records.
        sampler: PKSampler
            Batch index generator.
        transform: callable
            Maps (record, epoch) to an H x W x C grid.
        workers: int
            Number of producer threads.
        queue_size: int
            Maximum number of batches prepared ahead.
        log: Logger, optional
            Receives debug messages.

        """
        self.dataset = dataset
        self.sampler = sampler
        self.transform = transform
        self.workers = max(1, int(workers))
        self.queue_size = max(1, int(queue_size))
        self.log = log

    def _load(self, indices: list[int], epoch: int) -> Batch:
        batch = make_batch(self.dataset, indices, epoch)
        images = [self.transform(self.dataset.records[i], epoch) for i in indices]
        batch.images = to_tensor(images)
        return batch

    def epoch(self, epoch: int, limit: int | None = None) -> Iterator[Batch]:
        """
        Yield the batches of an epoch in sampler order.

        Parameters
        ----------
        epoch: int
            Epoch index, used for the sampler permutation and the
            per-image random draws.
        limit: int, optional
            Maximum number of batches.

        Yields
        ------
        Batch
            Batches with images.

        """
        plan = self.sampler.epoch_batches(epoch)
        if limit is not None:
            plan = plan[:limit]
        if self.log:
            self.log.debug('Starting input pipeline', epoch=epoch, batches=len(plan))

        if self.workers == 1:
            for indices in plan:
                yield self._load(indices, epoch)
            return

        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            pending: deque[Future[Batch]] = deque()
            for indices in plan:
                pending.append(pool.submit(self._load, indices, epoch))
                if len(pending) >= self.queue_size:
                    yield pending.popleft().result()
            while pending:
                yield pending.popleft().result()
