#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""mikecoco models."""

from __future__ import annotations

from mikecoco.model.encoders import (
    DualEncoder,
    ImageEncoder,
    PromptSet,
    TextEncoder,
    build_dual_encoder,
)
from mikecoco.model.meka import ExpertBundle, Meka
from mikecoco.model.mikecoco_model import MikecocoModel
from mikecoco.model.moe import IdClassifier, MoE, TeacherOutput
from mikecoco.model.network import MikecocoNetwork
