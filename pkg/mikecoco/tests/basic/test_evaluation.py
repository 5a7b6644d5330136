#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""These are unit tests on the evaluation module of mikecoco."""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
import pytest
import torch

from mikecoco import base, data, evaluation, file_io
from mikecoco.mikecoco_warnings import MikecocoValidationError
from mikecoco.model.network import MikecocoNetwork, snapshot_config
from mikecoco.tests.basic.test_model import TINY_ARCHITECTURE
from mikecoco.tests.util import brute_force_ap, brute_force_cmc, write_manifest_tree

# The tests maintain the order of definitions of the `evaluation.py` file.


def one_hot_features(identities: list[int], dim: int = 8) -> evaluation.FeatureSet:
    features = np.eye(dim, dtype=np.float32)[identities]
    return evaluation.FeatureSet(features, np.array(identities), None)


def test_feature_set() -> None:
    features = evaluation.FeatureSet(
        np.eye(3), np.array([0, 1, 1]), np.array([0, 0, 1]), ['a', 'b', 'c']
    )
    assert len(features) == 3
    assert features.features.dtype == np.float32
    assert features.num_unreadable == 0

    sub = features.subset([2, 0])
    np.testing.assert_array_equal(sub.identities, [1, 0])
    np.testing.assert_array_equal(sub.cameras, [1, 0])
    assert sub.paths == ['c', 'a']

    assert evaluation.FeatureSet(np.eye(2), np.array([0, 1]), None).paths == ['', '']


def test_feature_set_save_load() -> None:
    temp_dir = Path(tempfile.mkdtemp())
    with_cams = evaluation.FeatureSet(np.eye(3), np.array([0, 1, 1]), np.array([0, 0, 1]))
    with_cams.save(temp_dir / 'a.mkcf')
    loaded = evaluation.FeatureSet.load(temp_dir / 'a.mkcf')
    np.testing.assert_array_equal(loaded.features, with_cams.features)
    np.testing.assert_array_equal(loaded.cameras, [0, 0, 1])

    no_cams = evaluation.FeatureSet(np.eye(2), np.array([0, 1]), None)
    no_cams.save(temp_dir / 'b.mkcf')
    assert evaluation.FeatureSet.load(temp_dir / 'b.mkcf').cameras is None


def test_ranking_result() -> None:
    empty = evaluation.RankingResult(0, np.array([1]), np.array([0.5]), 0.0, None)
    assert not empty.valid
    assert evaluation.RankingResult(0, np.array([1]), np.array([0.5]), 1.0, 1).valid


def test_eval_report() -> None:
    report = evaluation.EvalReport(0.5, [0.25, 0.75], 4, 3, extra={'trials': 2})
    assert report.rank1 == 0.25
    assert report.to_dict() == {
        'protocol': 'single-query',
        'map': 0.5,
        'cmc': [0.25, 0.75],
        'rank1': 0.25,
        'num_queries': 4,
        'num_valid_queries': 3,
        'num_dropped_queries': 1,
        'trials': 2,
    }


@pytest.fixture
def network_checkpoint() -> Path:
    torch.manual_seed(0)
    config = base.merge_default_config(dict(TINY_ARCHITECTURE), section='Training')
    network = MikecocoNetwork(config, num_ids=3, num_cameras=2)
    return file_io.save_checkpoint(
        Path(tempfile.mkdtemp()) / 'stage2.pt',
        stage='stage2',
        config=snapshot_config(config, network),
        state=network.state(),
        num_ids=3,
        num_cameras=2,
    )


def test_extract_features(network_checkpoint: Path) -> None:
    root = Path(tempfile.mkdtemp())
    labels = [(i, c) for i in range(3) for c in range(2)]
    dataset = data.load_manifest(write_manifest_tree(root, labels, size=(24, 20)))
    options = base.Options({'Workers': 2})

    features = evaluation.extract_features(network_checkpoint, dataset, options, batch_size=4)
    assert features.features.shape == (6, 16)
    np.testing.assert_allclose(np.linalg.norm(features.features, axis=1), 1.0, atol=1e-5)
    np.testing.assert_array_equal(features.identities, dataset.identities)
    np.testing.assert_array_equal(features.cameras, dataset.cameras)
    assert features.paths == [str(r.path) for r in dataset.records]

    # the same payload gives the same features
    payload = file_io.load_checkpoint(network_checkpoint)
    again = evaluation.extract_features(payload, dataset, options)
    np.testing.assert_allclose(again.features, features.features, atol=1e-6)

    # unreadable images are skipped and counted
    dataset.records[1].path.write_bytes(b'not an image')
    partial = evaluation.extract_features(payload, dataset, options)
    assert partial.num_unreadable == 1
    assert len(partial) == 5
    np.testing.assert_array_equal(partial.identities, dataset.identities[[0, 2, 3, 4, 5]])


def test_rank_query_excludes_same_camera() -> None:
    gallery = np.array([[1.0, 0.0], [0.9, 0.1], [0.8, 0.2], [0.0, 1.0]])
    ids = np.array([0, 1, 0, 0])
    cams = np.array([0, 1, 1, 0])
    result = evaluation.rank_query(np.array([1.0, 0.0]), gallery, (0, 0), (ids, cams), 7)
    assert result.query_index == 7
    np.testing.assert_array_equal(result.ordered_gallery, [1, 2])
    assert result.first_match_rank == 2
    assert result.ap == pytest.approx(0.5)

    # without cameras every entry is admissible
    result = evaluation.rank_query(np.array([1.0, 0.0]), gallery, (0, None), (ids, cams))
    np.testing.assert_array_equal(result.ordered_gallery, [0, 1, 2, 3])
    assert result.first_match_rank == 1
    assert result.ap == pytest.approx((1 + 2 / 3 + 3 / 4) / 3)


def test_rank_query_against_brute_force() -> None:
    rng = np.random.default_rng(11)
    for _ in range(50):
        gallery = rng.normal(size=(30, 6))
        query = rng.normal(size=6)
        ids = rng.integers(0, 4, 30)
        result = evaluation.rank_query(query, gallery, (1, None), (ids, None))
        sims = gallery @ query / np.linalg.norm(gallery, axis=1) / np.linalg.norm(query)
        assert result.ap == pytest.approx(brute_force_ap(sims, ids == 1), abs=1e-9)
        assert np.all(np.diff(result.similarities) <= 1e-12)


def test_rank_query_edge_cases() -> None:
    gallery = np.ones((3, 2))
    ids = np.array([2, 0, 2])
    tied = evaluation.rank_query(np.ones(2), gallery, (2, None), (ids, None))
    np.testing.assert_array_equal(tied.ordered_gallery, [0, 1, 2])
    assert tied.ap == pytest.approx(5 / 6, abs=1e-12)

    missing = evaluation.rank_query(np.ones(2), gallery, (5, None), (ids, None))
    assert not missing.valid
    assert missing.ap == 0.0


def test_rank_similarities() -> None:
    rng = np.random.default_rng(12)
    for _ in range(20):
        sims = rng.normal(size=25)
        ids = rng.integers(0, 4, 25)
        cams = rng.integers(0, 3, 25)
        result = evaluation.rank_similarities(sims, (2, 1), (ids, cams))

        # only the order of the similarities matters
        for transform in (np.exp, np.arctan, lambda s: 3.0 * s - 7.0):
            moved = evaluation.rank_similarities(transform(sims), (2, 1), (ids, cams))
            np.testing.assert_array_equal(moved.ordered_gallery, result.ordered_gallery)
            assert moved.ap == pytest.approx(result.ap, abs=1e-12)
            assert moved.first_match_rank == result.first_match_rank

        # a permuted gallery gives the same ranking up to relabeling
        order = rng.permutation(25)
        shuffled = evaluation.rank_similarities(sims[order], (2, 1), (ids[order], cams[order]))
        np.testing.assert_array_equal(order[shuffled.ordered_gallery], result.ordered_gallery)
        assert shuffled.ap == pytest.approx(result.ap, abs=1e-12)
        assert shuffled.first_match_rank == result.first_match_rank


def test_compute_report() -> None:
    rankings = [
        evaluation.RankingResult(0, np.arange(3), np.zeros(3), 1.0, 1),
        evaluation.RankingResult(1, np.arange(3), np.zeros(3), 0.5, 3),
        evaluation.RankingResult(2, np.arange(3), np.zeros(3), 0.0, None),
    ]
    report = evaluation.compute_report(rankings, max_rank=4)
    assert report.map == pytest.approx(0.75)
    np.testing.assert_allclose(report.cmc, [0.5, 0.5, 1.0, 1.0])
    assert report.num_queries == 3
    assert report.num_valid_queries == 2
    assert np.all(np.diff(report.cmc) >= 0)

    with pytest.raises(MikecocoValidationError, match='None of the 1 queries'):
        evaluation.compute_report(rankings[2:])


def test_compute_report_against_brute_force_cmc() -> None:
    rng = np.random.default_rng(13)
    for _ in range(50):
        gallery = rng.normal(size=(20, 5))
        ids = rng.integers(0, 4, 20)
        queries = rng.normal(size=(6, 5))
        query_ids = rng.integers(0, 5, 6)
        query_ids[0] = ids[0]
        rankings = [
            evaluation.rank_query(q, gallery, (int(y), None), (ids, None), query_index=i)
            for i, (q, y) in enumerate(zip(queries, query_ids))
        ]
        report = evaluation.compute_report(rankings, max_rank=10)

        curves, aps = [], []
        for q, y in zip(queries, query_ids):
            if not (ids == y).any():
                continue
            sims = gallery @ q / np.linalg.norm(gallery, axis=1) / np.linalg.norm(q)
            curves.append(brute_force_cmc(sims, ids == y, 10))
            aps.append(brute_force_ap(sims, ids == y))
        np.testing.assert_allclose(report.cmc, np.mean(curves, axis=0), atol=1e-12)
        assert report.map == pytest.approx(np.mean(aps), abs=1e-9)
        assert report.num_valid_queries == len(curves)


def test_evaluate() -> None:
    query = one_hot_features([0, 1, 2])
    gallery = one_hot_features([0, 1, 2, 0, 4])
    query.num_unreadable = 2
    report, rankings = evaluation.evaluate(query, gallery, max_rank=5)
    assert len(rankings) == 3
    assert report.map == pytest.approx(1.0)
    assert report.rank1 == pytest.approx(1.0)
    assert report.extra == {'num_gallery': 5, 'num_unreadable': 2}


def test_evaluate_gallery_permutation() -> None:
    rng = np.random.default_rng(14)
    query = evaluation.FeatureSet(
        rng.normal(size=(8, 6)), rng.integers(0, 4, 8), rng.integers(0, 2, 8)
    )
    features = rng.normal(size=(30, 6))
    ids = rng.integers(0, 4, 30)
    cams = rng.integers(0, 2, 30)
    report, _ = evaluation.evaluate(query, evaluation.FeatureSet(features, ids, cams))
    order = rng.permutation(30)
    shuffled, _ = evaluation.evaluate(
        query, evaluation.FeatureSet(features[order], ids[order], cams[order])
    )
    assert shuffled.map == pytest.approx(report.map, abs=1e-6)
    np.testing.assert_allclose(shuffled.cmc, report.cmc)


def test_vehicleid_split() -> None:
    features = one_hot_features([i for i in range(5) for _ in range(3)])
    features.cameras = np.zeros(15, dtype=np.int64)
    query, gallery = evaluation.vehicleid_split(features, 3, np.random.default_rng(0))
    assert len(gallery) == 3
    assert len(np.unique(gallery.identities)) == 3
    assert len(query) == 6
    assert set(query.identities) == set(gallery.identities)
    assert query.cameras is None
    assert gallery.cameras is None

    with pytest.raises(MikecocoValidationError, match='gallery of 6 identities'):
        evaluation.vehicleid_split(features, 6, np.random.default_rng(0))


def test_evaluate_vehicleid() -> None:
    features = one_hot_features([i for i in range(6) for _ in range(2)])
    report = evaluation.evaluate_vehicleid(features, 4, trials=3, seed=1, max_rank=3)
    assert report.protocol == 'vehicleid-4'
    assert report.map == pytest.approx(1.0)
    assert report.rank1 == pytest.approx(1.0)
    assert report.num_queries == 4
    assert report.extra['trials'] == 3
    assert report.extra['map_std'] == 0.0
    assert report.extra['num_gallery'] == 4

    first = evaluation.evaluate_vehicleid(features, 4, trials=2, seed=5)
    second = evaluation.evaluate_vehicleid(features, 4, trials=2, seed=5)
    assert first.to_dict() == second.to_dict()


def test_retrieval_listing() -> None:
    query = one_hot_features([0, 1])
    query.paths = ['q0', 'q1']
    gallery = one_hot_features([1, 0, 2])
    gallery.paths = ['g0', 'g1', 'g2']
    report, rankings = evaluation.evaluate(query, gallery)
    assert report.rank1 == 1.0

    listing = evaluation.retrieval_listing(query, gallery, rankings, top_k=2)
    assert list(listing.columns) == [
        'query',
        'query_id',
        'rank',
        'gallery',
        'gallery_id',
        'similarity',
        'correct',
    ]
    assert len(listing) == 4
    top = listing[listing['rank'] == 1]
    assert top['gallery'].tolist() == ['g1', 'g0']
    assert top['correct'].all()

    empty = evaluation.retrieval_listing(query, gallery, [])
    assert empty.empty
