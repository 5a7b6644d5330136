#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""
Retrieval evaluation.

Features are extracted from original images with the trained image
encoder only. Every query is ranked independently against the gallery
by cosine similarity, and the rankings are reduced to mAP and CMC.

"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import TYPE_CHECKING, Any

import numpy as np
import pandas as pd
import torch

from mikecoco import base, data, file_io, spectral
from mikecoco.mikecoco_warnings import MikecocoValidationError
from mikecoco.model.network import MikecocoNetwork
from mikecoco.training import TrainConfig

if TYPE_CHECKING:
    from pathlib import Path


class FeatureSet:
    """
    Unit-norm features of a dataset with their labels.

    Attributes
    ----------
    features: numpy.ndarray
        count x d float32 rows of unit norm.
    identities: numpy.ndarray
        count dense identity labels.
    cameras: numpy.ndarray or None
        count dense camera labels, None when the manifest has none.
    paths: list of str
        Image location of each row.
    num_unreadable: int
        Records skipped because their image could not be read.

    """

    __slots__ = ['cameras', 'features', 'identities', 'num_unreadable', 'paths']

    def __init__(
        self,
        features: np.ndarray,
        identities: np.ndarray,
        cameras: np.ndarray | None,
        paths: list[str] | None = None,
        num_unreadable: int = 0,
    ) -> None:
        self.features = np.asarray(features, dtype=np.float32)
        self.identities = np.asarray(identities, dtype=np.int64)
        self.cameras = None if cameras is None else np.asarray(cameras, dtype=np.int64)
        self.paths = list(paths) if paths is not None else [''] * len(self.identities)
        self.num_unreadable = num_unreadable

    def __len__(self) -> int:
        return len(self.identities)

    def subset(self, indices: np.ndarray | list[int]) -> FeatureSet:
        """Rows selected by index."""
        idx = np.asarray(indices, dtype=np.int64)
        return FeatureSet(
            self.features[idx],
            self.identities[idx],
            None if self.cameras is None else self.cameras[idx],
            [self.paths[i] for i in idx],
        )

    def save(self, filepath: str | Path) -> None:
        """Write the features to a feature file."""
        file_io.save_features(filepath, self.features, self.identities, self.cameras)

    @classmethod
    def load(cls, filepath: str | Path) -> FeatureSet:
        """
        Read a feature file.

        Returns
        -------
        FeatureSet
            Features with cameras set to None when all are missing.

        """
        features, identities, cameras = file_io.load_features(filepath)
        return cls(features, identities, None if (cameras < 0).all() else cameras)


class RankingResult:
    """
    Ranked gallery of one query.

    Attributes
    ----------
    query_index: int
        Row of the query.
    ordered_gallery: numpy.ndarray
        Admissible gallery rows by descending similarity.
    similarities: numpy.ndarray
        Similarity of each entry of `ordered_gallery`.
    ap: float
        Average precision, 0 for queries without positives.
    first_match_rank: int or None
        One-based rank of the first positive.

    """

    __slots__ = ['ap', 'first_match_rank', 'ordered_gallery', 'query_index', 'similarities']

    def __init__(
        self,
        query_index: int,
        ordered_gallery: np.ndarray,
        similarities: np.ndarray,
        ap: float,
        first_match_rank: int | None,
    ) -> None:
        self.query_index = query_index
        self.ordered_gallery = ordered_gallery
        self.similarities = similarities
        self.ap = ap
        self.first_match_rank = first_match_rank

    @property
    def valid(self) -> bool:
        """True when the gallery holds at least one positive."""
        return self.first_match_rank is not None


class EvalReport:
    """
    Aggregate retrieval metrics.

    Attributes
    ----------
    map: float
        Mean average precision over valid queries.
    cmc: numpy.ndarray
        Match rate at ranks 1..R.
    num_queries: int
        All queries, valid or not.
    num_valid_queries: int
        Queries with at least one positive.
    protocol: str
        Name of the evaluation protocol.
    extra: dict
        Protocol-specific values merged into the JSON report.

    """

    __slots__ = ['cmc', 'extra', 'map', 'num_queries', 'num_valid_queries', 'protocol']

    def __init__(
        self,
        map_value: float,
        cmc: np.ndarray,
        num_queries: int,
        num_valid_queries: int,
        protocol: str = 'single-query',
        extra: dict[str, Any] | None = None,
    ) -> None:
        self.map = float(map_value)
        self.cmc = np.asarray(cmc, dtype=np.float64)
        self.num_queries = num_queries
        self.num_valid_queries = num_valid_queries
        self.protocol = protocol
        self.extra = dict(extra or {})

    @property
    def rank1(self) -> float:
        """CMC value at rank 1."""
        return float(self.cmc[0])

    def to_dict(self) -> dict[str, Any]:
        """
        JSON-ready view of the report.

        Returns
        -------
        dict
            Metrics and counts.

        """
        return {
            'protocol': self.protocol,
            'map': self.map,
            'cmc': [float(v) for v in self.cmc],
            'rank1': self.rank1,
            'num_queries': self.num_queries,
            'num_valid_queries': self.num_valid_queries,
            'num_dropped_queries': self.num_queries - self.num_valid_queries,
            **self.extra,
        }


def extract_features(
    checkpoint: str | Path | dict[str, Any],
    dataset: data.Dataset,
    options: base.Options,
    batch_size: int = 64,
) -> FeatureSet:
    """
    Encode every image of a dataset with a trained image encoder.

    No spectral preprocessing is applied unless the checkpoint's
    configuration selects `TestInput: dii`.

    Parameters
    ----------
    checkpoint: str or dict
        Checkpoint location, or an already loaded payload.
    dataset: Dataset
        Images to encode.
    options: Options
        Runtime options; `workers` threads load images.
    batch_size: int
        Images per forward pass.

    Returns
    -------
    FeatureSet
        Unit-norm features of the readable images.

    """
    log = options.log
    payload = (
        checkpoint if isinstance(checkpoint, dict) else file_io.load_checkpoint(checkpoint)
    )
    if payload['stage'] != 'stage2':
        log.warning(
            f'Evaluating a {payload["stage"]} checkpoint. Its image encoder '
            f'has not been trained for retrieval.'
        )
    config = payload['config']
    network = MikecocoNetwork.from_checkpoint(payload, log)
    device = torch.device(options.device)
    network.to(device).eval()
    encoder = network.encoder

    height, width = config['ImageSize']
    mode = config.get('TestInput', 'raw')
    mask = None
    if mode != 'raw':
        mask = spectral.build_mask(height, width, TrainConfig(config).mask_params())

    def load(record: data.ImageRecord) -> np.ndarray | None:
        try:
            image = data.resize(record.load(), (height, width))
        except OSError as exc:
            log.add_warning(f'Skipping unreadable image {record.path}: {exc}')
            return None
        return spectral.transform_image(image, mode, mask, raw_dii=config.get('RawDII', False))

    with ThreadPoolExecutor(max_workers=max(1, options.workers)) as pool:
        images = list(pool.map(load, dataset.records))
    log.emit_warnings()

    keep = [i for i, image in enumerate(images) if image is not None]
    num_unreadable = len(images) - len(keep)
    rows = []
    with torch.no_grad():
        for start in range(0, len(keep), batch_size):
            chunk = keep[start : start + batch_size]
            batch = data.to_tensor([images[i] for i in chunk]).to(device)
            rows.append(encoder.encode_image(batch, normalize=True).cpu())
    dim = encoder.width
    features = torch.cat(rows).numpy() if rows else np.zeros((0, dim), np.float32)
    cameras = dataset.cameras
    log.msg(
        f'Extracted features of {dataset.name}',
        images=len(keep),
        unreadable=num_unreadable,
    )
    return FeatureSet(
        features,
        dataset.identities[keep],
        None if cameras is None else cameras[keep],
        [str(dataset.records[i].path) for i in keep],
        num_unreadable,
    )


def rank_query(
    query_feature: np.ndarray,
    gallery_features: np.ndarray,
    query_labels: tuple[int, int | None],
    gallery_labels: tuple[np.ndarray, np.ndarray | None],
    query_index: int = 0,
) -> RankingResult:
    """
    Rank the gallery for one query.

    Gallery entries sharing both identity and camera with the query
    are excluded when both sides carry cameras. Ties keep gallery order.

    Parameters
    ----------
    query_feature: numpy.ndarray
        d-vector.
    gallery_features: numpy.ndarray
        n x d matrix.
    query_labels: tuple
        (identity, camera or None).
    gallery_labels: tuple
        (identities, cameras or None).
    query_index: int
        Row of the query, stored in the result.

    Returns
    -------
    RankingResult
        The ranking with AP and first match rank. Queries without a
        positive get AP 0 and no first match rank.

    """
    q = np.asarray(query_feature, dtype=np.float64)
    g = np.asarray(gallery_features, dtype=np.float64)
    sims = g @ q / (np.linalg.norm(g, axis=1) * np.linalg.norm(q) + 1e-12)
    return rank_similarities(sims, query_labels, gallery_labels, query_index)


def rank_similarities(
    similarities: np.ndarray,
    query_labels: tuple[int, int | None],
    gallery_labels: tuple[np.ndarray, np.ndarray | None],
    query_index: int = 0,
) -> RankingResult:
    """
    Rank the gallery for one query from precomputed similarities.

    Only the order of the similarities matters: any strictly increasing
    transform of them gives the same ranking, AP and first match rank.

    Returns
    -------
    RankingResult
        Same as `rank_query`.

    """
    q_id, q_cam = query_labels
    g_ids, g_cams = gallery_labels
    sims = np.asarray(similarities, dtype=np.float64)

    admissible = np.ones(len(g_ids), dtype=bool)
    if q_cam is not None and g_cams is not None:
        admissible = ~((g_ids == q_id) & (g_cams == q_cam))
    candidates = np.flatnonzero(admissible)
    order = candidates[np.argsort(-sims[candidates], kind='stable')]

    matches = g_ids[order] == q_id
    if not matches.any():
        return RankingResult(query_index, order, sims[order], 0.0, None)
    hit_ranks = np.flatnonzero(matches)
    precision = np.arange(1, len(hit_ranks) + 1) / (hit_ranks + 1)
    return RankingResult(
        query_index, order, sims[order], float(precision.mean()), int(hit_ranks[0]) + 1
    )


def compute_report(
    rankings: list[RankingResult],
    max_rank: int = 20,
    protocol: str = 'single-query',
) -> EvalReport:
    """
    Reduce rankings to mAP and CMC.

    Returns
    -------
    EvalReport
        mAP over valid queries and the CMC curve at ranks 1..max_rank.

    Raises
    ------
    MikecocoValidationError
        If no query has a positive in the gallery.

    """
    valid = [r for r in rankings if r.valid]
    if not valid:
        msg = f'None of the {len(rankings)} queries has a match in the gallery.'
        raise MikecocoValidationError(msg)
    first = np.array([r.first_match_rank for r in valid])
    cmc = np.array([(first <= rank).mean() for rank in range(1, max_rank + 1)])
    return EvalReport(
        np.mean([r.ap for r in valid]), cmc, len(rankings), len(valid), protocol
    )


def rank_all(query: FeatureSet, gallery: FeatureSet) -> list[RankingResult]:
    """Rank the gallery for every query."""
    use_cameras = query.cameras is not None and gallery.cameras is not None
    gallery_labels = (gallery.identities, gallery.cameras if use_cameras else None)
    return [
        rank_query(
            query.features[i],
            gallery.features,
            (
                int(query.identities[i]),
                int(query.cameras[i]) if use_cameras and query.cameras is not None else None,
            ),
            gallery_labels,
            query_index=i,
        )
        for i in range(len(query))
    ]


def evaluate(
    query: FeatureSet, gallery: FeatureSet, max_rank: int = 20
) -> tuple[EvalReport, list[RankingResult]]:
    """
    Single-query evaluation of a query set against a gallery.

    Returns
    -------
    tuple
        The report and the per-query rankings.

    """
    rankings = rank_all(query, gallery)
    report = compute_report(rankings, max_rank)
    report.extra.update(
        {
            'num_gallery': len(gallery),
            'num_unreadable': query.num_unreadable + gallery.num_unreadable,
        }
    )
    return report, rankings


def vehicleid_split(
    features: FeatureSet, gallery_size: int, rng: np.random.Generator
) -> tuple[FeatureSet, FeatureSet]:
    """
    Draw one gallery/query split of the trial protocol.

    `gallery_size` identities are sampled; one image of each goes into
    the gallery and the remaining images of those identities become the
    queries.

    Returns
    -------
    tuple
        Query and gallery feature sets, without cameras.

    Raises
    ------
    MikecocoValidationError
        If fewer identities than `gallery_size` are available.

    """
    identities = np.unique(features.identities)
    if gallery_size > len(identities):
        msg = (
            f'A gallery of {gallery_size} identities was requested, the '
            f'manifest has {len(identities)}.'
        )
        raise MikecocoValidationError(msg)
    chosen = rng.choice(identities, gallery_size, replace=False)
    gallery_rows, query_rows = [], []
    for identity in np.sort(chosen):
        rows = np.flatnonzero(features.identities == identity)
        pick = int(rng.choice(rows))
        gallery_rows.append(pick)
        query_rows.extend(int(r) for r in rows if r != pick)
    query = features.subset(query_rows)
    gallery = features.subset(gallery_rows)
    query.cameras = None
    gallery.cameras = None
    return query, gallery


def evaluate_vehicleid(
    features: FeatureSet,
    gallery_size: int,
    trials: int = 10,
    seed: int = 0,
    max_rank: int = 20,
) -> EvalReport:
    """
    Averaged evaluation over random gallery draws.

    Returns
    -------
    EvalReport
        Mean metrics over the trials, with `map_std`, `rank1_std` and
        `trials` in `extra`.

    """
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(trials):
        query, gallery = vehicleid_split(features, gallery_size, rng)
        reports.append(compute_report(rank_all(query, gallery), max_rank))
    maps = np.array([r.map for r in reports])
    rank1 = np.array([r.rank1 for r in reports])
    return EvalReport(
        maps.mean(),
        np.mean([r.cmc for r in reports], axis=0),
        int(np.mean([r.num_queries for r in reports])),
        int(np.mean([r.num_valid_queries for r in reports])),
        protocol=f'vehicleid-{gallery_size}',
        extra={
            'trials': trials,
            'map_std': float(maps.std()),
            'rank1_std': float(rank1.std()),
            'num_gallery': gallery_size,
            'num_unreadable': features.num_unreadable,
        },
    )


def retrieval_listing(
    query: FeatureSet,
    gallery: FeatureSet,
    rankings: list[RankingResult],
    top_k: int = 5,
) -> pd.DataFrame:
    """
    Top-k retrieval table.

    Returns
    -------
    pandas.DataFrame
        One row per (query, rank) with the gallery path, similarity and
        whether the identities match.

    """
    rows = []
    for ranking in rankings:
        q = ranking.query_index
        for rank, (g, sim) in enumerate(
            zip(ranking.ordered_gallery[:top_k], ranking.similarities[:top_k]), start=1
        ):
            rows.append(
                {
                    'query': query.paths[q],
                    'query_id': int(query.identities[q]),
                    'rank': rank,
                    'gallery': gallery.paths[int(g)],
                    'gallery_id': int(gallery.identities[int(g)]),
                    'similarity': float(sim),
                    'correct': bool(gallery.identities[int(g)] == query.identities[q]),
                }
            )
    columns = ['query', 'query_id', 'rank', 'gallery', 'gallery_id', 'similarity', 'correct']
    return pd.DataFrame(rows, columns=columns)
