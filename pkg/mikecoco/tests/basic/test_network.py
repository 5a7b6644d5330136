#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""These are unit tests on the network module of mikecoco."""

from __future__ import annotations

from typing import Any

import pytest
import torch

from mikecoco import base
from mikecoco.mikecoco_warnings import MikecocoValidationError
from mikecoco.model.network import NAMESPACES, MikecocoNetwork, snapshot_config
from mikecoco.tests.basic.test_model import TestModelModule

# The tests maintain the order of definitions of the `network.py` file.


class TestMikecocoNetwork(TestModelModule):
    @pytest.fixture
    def network(self, config: dict[str, Any], log: base.Logger) -> MikecocoNetwork:
        return MikecocoNetwork(config, num_ids=5, num_cameras=3, log=log)

    def test_init(self, network: MikecocoNetwork) -> None:
        assert network.num_ids == 5
        assert network.num_cameras == 3
        assert network.prompts.num_ids == 5
        assert network.classifier.head.out_features == 5
        assert network.architecture['Width'] == 16
        assert tuple(network.collections()) == NAMESPACES

    def test_state(self, network: MikecocoNetwork, config: dict[str, Any]) -> None:
        state = network.state()
        assert tuple(state) == NAMESPACES

        other = MikecocoNetwork(config, num_ids=5, num_cameras=3)
        assert other.hashes() != network.hashes()
        other.load_state(state, ('meka', 'prompts'))
        assert other.hashes(('meka', 'prompts')) == network.hashes(('meka', 'prompts'))
        assert other.hashes(('moe',)) != network.hashes(('moe',))

        with pytest.raises(MikecocoValidationError, match='no `moe` entry'):
            other.load_state({'meka': state['meka']}, ('moe',))

        mismatched = MikecocoNetwork(config, num_ids=4, num_cameras=3)
        with pytest.raises(MikecocoValidationError, match='`classifier` parameters'):
            mismatched.load_state(state, ('classifier',))

    def test_hashes(self, network: MikecocoNetwork) -> None:
        hashes = network.hashes()
        assert set(hashes) == set(NAMESPACES)
        with torch.no_grad():
            network.classifier.head.bias.add_(1.0)
        changed = network.hashes()
        assert changed['classifier'] != hashes['classifier']
        assert changed['meka'] == hashes['meka']

    def test_from_checkpoint(self, network: MikecocoNetwork, config: dict[str, Any]) -> None:
        payload = {
            'config': snapshot_config(config, network),
            'num_ids': 5,
            'num_cameras': 3,
            'state': network.state(),
        }
        rebuilt = MikecocoNetwork.from_checkpoint(payload)
        assert rebuilt.hashes() == network.hashes()

        images = torch.rand(2, 3, 16, 16)
        network.eval()
        rebuilt.eval()
        with torch.no_grad():
            torch.testing.assert_close(
                rebuilt.encoder.encode_image(images), network.encoder.encode_image(images)
            )


def test_snapshot_config() -> None:
    from mikecoco.tests.basic.test_model import TINY_ARCHITECTURE  # noqa: PLC0415

    config = base.merge_default_config(dict(TINY_ARCHITECTURE), section='Training')
    network = MikecocoNetwork(config, num_ids=2, num_cameras=0)
    snapshot = snapshot_config({**config, 'Width': 999}, network)
    assert snapshot['Width'] == 16
    assert snapshot['Experts'] == config['Experts']
