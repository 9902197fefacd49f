"""
What the encoder computes
=========================

Node states start from a per-type embedding, exchange messages along and
against the edges for a few rounds, then collapse into one gated sum.
"""

import numpy as np

from nasgnn import EncoderConfig, GraphBatch, aggregate, init_params, propagate_round, validate_graph
from nasgnn.encoder import initial_states

cfg = EncoderConfig(d_n=4, d_g=3, rounds=2)
params = init_params(cfg, seed=0)

g = validate_graph(["input", "conv3x3", "conv1x1", "output"], [(0, 1), (1, 2), (0, 3), (2, 3)])
batch = GraphBatch.from_graphs([g])

h = initial_states(params, batch)
print("embedding rows\n", np.round(h.value, 3))

for t in range(cfg.rounds):
    h = propagate_round(params, t, batch, h)
    print(f"after round {t}\n", np.round(h.value, 3))

###############################################################################
# The gated sum treats nodes as a set, so the order of rows is irrelevant

hg = aggregate(params, h)
print("graph embedding", hg.value)
shuffled = aggregate(params, h.value[::-1])
print("same after reversing the rows:", np.allclose(hg.value, shuffled.value))
