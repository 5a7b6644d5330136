#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""This file defines a class used by the model unit tests."""

from __future__ import annotations

from typing import Any

import pytest
import torch

from mikecoco import base

TINY_ARCHITECTURE = {
    'ImageSize': [16, 16],
    'PatchSize': 8,
    'Width': 16,
    'ImageLayers': 1,
    'TextLayers': 1,
    'Heads': 2,
    'ContextLength': 16,
    'MoEHeads': 2,
}


class TestModelModule:
    @pytest.fixture
    def config(self) -> dict[str, Any]:
        torch.manual_seed(0)
        return base.merge_default_config(dict(TINY_ARCHITECTURE), section='Training')

    @pytest.fixture(params=[True, False])
    def log(self, request: pytest.FixtureRequest) -> base.Logger:
        return base.Logger(
            None, verbose=request.param, log_show_ms=False, print_log=False
        )
