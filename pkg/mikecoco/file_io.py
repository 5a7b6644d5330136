#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""Classes and methods that handle file input and output."""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
import pandas as pd
import torch
from PIL import Image

from mikecoco import base
from mikecoco.mikecoco_warnings import MikecocoValidationError

if TYPE_CHECKING:
    from collections.abc import Iterable

CHECKPOINT_FORMAT = 'mikecoco-checkpoint'
CHECKPOINT_VERSION = 1

FEATURE_MAGIC = b'MKCF'
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct('<4sIQQ')

IMAGE_EXTENSIONS = {'.png', '.jpg', '.jpeg', '.bmp', '.webp'}


def _require_file(filepath: str | Path, what: str = 'file') -> Path:
    path = Path(filepath).resolve()
    if not path.is_file():
        msg = f'The {what} path provided does not point to an existing file: {path}'
        raise FileNotFoundError(msg)
    return path


def read_jsonl(filepath: str | Path) -> list[tuple[int, dict[str, Any]]]:
    """
    Read a JSON-lines file.

    Blank lines are skipped.

    Parameters
    ----------
    filepath: str
        Location of the file.

    Returns
    -------
    list
        (line number, record) pairs with one-based line numbers.

    Raises
    ------
    MikecocoValidationError
        If a line is not a JSON object.

    """
    path = _require_file(filepath, 'manifest')
    records = []
    with path.open(encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                msg = f'{path}:{line_no}: malformed JSON ({exc.msg}).'
                raise MikecocoValidationError(msg) from exc
            if not isinstance(record, dict):
                msg = f'{path}:{line_no}: expected a JSON object.'
                raise MikecocoValidationError(msg)
            records.append((line_no, record))
    return records


def write_jsonl(
    records: Iterable[dict[str, Any]], filepath: str | Path, *, append: bool = False
) -> None:
    """Write records as JSON lines."""
    path = Path(filepath)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('a' if append else 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record, default=str) + '\n')


def load_image(filepath: str | Path) -> np.ndarray:
    """
    Load an image as an H x W x 3 float array in [0, 1].

    Returns
    -------
    numpy.ndarray
        The pixel grid.

    Raises
    ------
    OSError
        If the file cannot be read as an image.

    """
    with Image.open(filepath) as img:
        rgb = img.convert('RGB')
        return np.asarray(rgb, dtype=np.float64) / 255.0


def save_image(image: np.ndarray, filepath: str | Path) -> None:
    """Save an H x W x C float image in [0, 1] to a lossless raster file."""
    path = Path(filepath)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    if array.ndim == 3 and array.shape[2] == 1:  # noqa: PLR2004
        array = array[:, :, 0]
    Image.fromarray(array).save(path)


def save_features(
    filepath: str | Path,
    features: np.ndarray,
    identities: np.ndarray,
    cameras: np.ndarray | None = None,
) -> None:
    """
    Write a feature file.

    The layout is a fixed header (magic, version, count, dim), the
    row-major float32 features, then int64 identity and camera arrays.
    Missing cameras are stored as -1.

    Parameters
    ----------
    filepath: str
        Output location.
    features: numpy.ndarray
        count x dim matrix.
    identities: numpy.ndarray
        count identity labels.
    cameras: numpy.ndarray, optional
        count camera labels.

    Raises
    ------
    MikecocoValidationError
        If the label arrays do not match the feature count.

    """
    features = np.ascontiguousarray(features, dtype='<f4')
    count, dim = features.shape
    identities = np.asarray(identities, dtype='<i8')
    cameras = (
        np.full(count, -1, dtype='<i8')
        if cameras is None
        else np.asarray(cameras, dtype='<i8')
    )
    if identities.shape != (count,) or cameras.shape != (count,):
        msg = 'Label arrays must have one entry per feature row.'
        raise MikecocoValidationError(msg)
    path = Path(filepath)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('wb') as f:
        f.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, count, dim))
        f.write(features.tobytes())
        f.write(identities.tobytes())
        f.write(cameras.tobytes())


def load_features(filepath: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Read a feature file written by `save_features`.

    Returns
    -------
    tuple
        features (count x dim float32), identities, cameras.

    Raises
    ------
    MikecocoValidationError
        If the header is not recognized or the file is truncated.

    """
    data = _require_file(filepath, 'feature file').read_bytes()
    if len(data) < _FEATURE_HEADER.size:
        msg = f'Feature file {filepath} is truncated.'
        raise MikecocoValidationError(msg)
    magic, version, count, dim = _FEATURE_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC or version != FEATURE_VERSION:
        msg = f'{filepath} is not a version {FEATURE_VERSION} feature file.'
        raise MikecocoValidationError(msg)
    offset = _FEATURE_HEADER.size
    expected = offset + count * dim * 4 + count * 16
    if len(data) != expected:
        msg = f'Feature file {filepath} is truncated.'
        raise MikecocoValidationError(msg)
    features = np.frombuffer(data, '<f4', count * dim, offset).reshape(count, dim)
    offset += count * dim * 4
    identities = np.frombuffer(data, '<i8', count, offset)
    offset += count * 8
    cameras = np.frombuffer(data, '<i8', count, offset)
    return features.copy(), identities.copy(), cameras.copy()


def _atomic_replace(write: Any, filepath: Path, suffix: str) -> None:  # noqa: ANN401
    filepath.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(
        prefix=f'.{filepath.name}.', suffix=suffix, dir=filepath.parent
    )
    os.close(fd)
    try:
        write(tmp_name)
        Path(tmp_name).replace(filepath)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise


def save_checkpoint(
    filepath: str | Path,
    *,
    stage: str,
    config: dict[str, Any],
    state: dict[str, dict[str, torch.Tensor]],
    num_ids: int,
    num_cameras: int,
    metrics: dict[str, Any] | None = None,
) -> Path:
    """
    Write a checkpoint atomically.

    The archive is first written to a temporary file in the target
    directory and then renamed into place.

    Parameters
    ----------
    filepath: str
        Output location.
    stage: str
        `stage1` or `stage2`.
    config: dict
        Training configuration snapshot.
    state: dict
        Named tensors grouped by namespace.
    num_ids: int
        Number of source identities.
    num_cameras: int
        Number of source cameras.
    metrics: dict, optional
        Run statistics stored alongside the parameters.

    Returns
    -------
    Path
        The resolved checkpoint path.

    """
    payload = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'stage': stage,
        'config': dict(config),
        'num_ids': int(num_ids),
        'num_cameras': int(num_cameras),
        'state': {
            namespace: {k: v.detach().cpu().clone() for k, v in tensors.items()}
            for namespace, tensors in state.items()
        },
        'metrics': dict(metrics or {}),
    }
    path = Path(filepath).resolve()
    _atomic_replace(lambda tmp: torch.save(payload, tmp), path, '.tmp')
    return path


def load_checkpoint(
    filepath: str | Path, expected_stage: str | None = None
) -> dict[str, Any]:
    """
    Read and validate a checkpoint.

    Parameters
    ----------
    filepath: str
        Checkpoint location.
    expected_stage: str, optional
        If given, the stored stage tag must match it.

    Returns
    -------
    dict
        The checkpoint payload.

    Raises
    ------
    MikecocoValidationError
        If the header is not recognized or the stage tag does not match.

    """
    path = _require_file(filepath, 'checkpoint')
    try:
        payload = torch.load(path, map_location='cpu', weights_only=False)
    except Exception as exc:
        msg = f'Could not read checkpoint {path}: {exc}'
        raise MikecocoValidationError(msg) from exc
    if not isinstance(payload, dict) or payload.get('format') != CHECKPOINT_FORMAT:
        msg = f'{path} is not a mikecoco checkpoint.'
        raise MikecocoValidationError(msg)
    if payload.get('version', 0) > CHECKPOINT_VERSION:
        msg = (
            f'{path} was written by a newer version of mikecoco '
            f'(checkpoint version {payload["version"]}).'
        )
        raise MikecocoValidationError(msg)
    if expected_stage is not None and payload['stage'] != expected_stage:
        msg = (
            f'{path} holds a `{payload["stage"]}` checkpoint, '
            f'but a `{expected_stage}` checkpoint is required.'
        )
        raise MikecocoValidationError(msg)
    return payload


def save_report(report: dict[str, Any], filepath: str | Path) -> None:
    """Write a JSON report atomically."""
    path = Path(filepath).resolve()
    text = json.dumps(report, indent=2, default=float)
    _atomic_replace(
        lambda tmp: Path(tmp).write_text(text + '\n', encoding='utf-8'), path, '.json'
    )


def load_config_file(filepath: str | Path) -> dict[str, Any]:
    """
    Load a flat JSON configuration file.

    Returns
    -------
    dict
        The parsed key-value pairs.

    Raises
    ------
    MikecocoValidationError
        If the file is not a JSON object or has duplicate keys.

    """
    path = _require_file(filepath, 'configuration file')
    try:
        with path.open(encoding='utf-8') as f:
            config = json.load(f, object_pairs_hook=base.dict_raise_on_duplicates)
    except json.JSONDecodeError as exc:
        msg = f'{path}: malformed JSON ({exc.msg}).'
        raise MikecocoValidationError(msg) from exc
    if not isinstance(config, dict):
        msg = f'{path}: the configuration must be a JSON object.'
        raise MikecocoValidationError(msg)
    return config


def save_to_csv(
    data: pd.DataFrame, filepath: str | Path, log: base.Logger | None = None
) -> None:
    """
    Save a table to a CSV file.

    Raises
    ------
    ValueError
        If the file name does not have a `.csv` extension.

    """
    path = Path(filepath)
    if path.suffix != '.csv':
        msg = f'Please use the `.csv` file extension. Received file name is {path}'
        raise ValueError(msg)
    path.parent.mkdir(parents=True, exist_ok=True)
    data.to_csv(path, index=False)
    if log:
        log.msg(f'Saved {len(data)} rows to {path}', prepend_timestamp=False)
