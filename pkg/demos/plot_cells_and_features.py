"""
Cells, validation and hand-made features
========================================

A cell is a small DAG: one input node, one output node and up to five
operations in between.
"""

import numpy as np

from nasgnn import canonical_hash, depth_width_features, one_hot_encode, validate_graph
from nasgnn.graph import CycleDetected

# a diamond: two parallel branches joined at the output
g = validate_graph(
    ["input", "conv3x3", "maxpool3x3", "output"],
    [(0, 1), (0, 2), (1, 3), (2, 3)],
)
print(g)

# depth, width and op counts, as used by the simplest baseline
print(dict(zip(["nodes", "edges", "depth", "width", "conv3x3", "conv1x1", "maxpool"], depth_width_features(g).astype(int).tolist())))

# the fixed-length vector the one-hot baseline sees
x = one_hot_encode(g)
print(x.shape, int(x.sum()))

###############################################################################
# Relabeling the nodes does not change the hash

h = g.permuted([3, 0, 2, 1])
print(canonical_hash(g) == canonical_hash(h))

###############################################################################
# Invalid cells are rejected with a specific error

try:
    validate_graph(["input", "conv1x1", "conv3x3", "output"], [(0, 1), (1, 2), (2, 1), (2, 3)])
except CycleDetected as exc:
    print("rejected:", exc)

print(np.round(x[:10], 1))
