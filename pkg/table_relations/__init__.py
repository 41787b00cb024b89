# Copyright (C) DATADVANCE, 2010-2023
#
# Permission is hereby granted, free of charge, to any person obtaining
# a copy of this software and associated documentation files (the
# "Software"), to deal in the Software without restriction, including
# without limitation the rights to use, copy, modify, merge, publish,
# distribute, sublicense, and/or sell copies of the Software, and to
# permit persons to whom the Software is furnished to do so, subject to
# the following conditions:
#
# The above copyright notice and this permission notice shall be
# included in all copies or substantial portions of the Software.
#
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND,
# EXPRESS OR IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF
# MERCHANTABILITY, FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT.
# IN NO EVENT SHALL THE AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY
# CLAIM, DAMAGES OR OTHER LIABILITY, WHETHER IN AN ACTION OF CONTRACT,
# TORT OR OTHERWISE, ARISING FROM, OUT OF OR IN CONNECTION WITH THE
# SOFTWARE OR THE USE OR OTHER DEALINGS IN THE SOFTWARE.

"""Table structure recognition from relations between cells.

Cells of a table image are paired with their nearest neighbors, a
neural network classifies every pair as vertically related,
horizontally related or unrelated, and rows and columns are recovered
from the resulting relation graph.
"""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .error import ConfigError, TableRelationsError
from .metrics import ConfusionMatrix, MetricsReport
from .model import ModelConfig, RelationModel, Variant, build_model
from .pairing import generate_pairs
from .recovery import RelationGraph, StructureResult, recover_structure
from .synthgen import GenParams, generate
from .table import BBox, BBoxMode, Cell, RelationLabel, Table, derive_relations
from .training import TrainConfig, evaluate, predict_relations, train
