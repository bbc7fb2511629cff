"""
Graphs, splits and receptive fields
===================================

A stochastic block model stands in for a real benchmark. We split its
edges 80/10/10, look at the GCN propagation matrix, and check that
toggling one edge only moves the embeddings of nodes near it.
"""

import numpy as np

from edgecal.data import generate_sbm
from edgecal.encoders import EncoderConfig, init_encoder, encode
from edgecal.graph import normalized_adjacency, receptive_field, split_edges, toggle_edge

g, x = generate_sbm(blocks=2, nodes_per_block=200, p_in=0.1, p_out=0.01, feature_dim=16, seed=0)
print(f"{g.n} nodes, {g.num_edges} edges, mean degree {g.degrees.mean():.1f}")

split = split_edges(g, seed=0)
for name in ("train_pos", "val_pos", "val_neg", "test_pos", "test_neg"):
    print(f"{name:>9}: {len(getattr(split, name))}")

# %%
# The propagation matrix is symmetric with self-loops folded in.

a = normalized_adjacency(g)
print("symmetric:", abs(a - a.T).max() == 0, " nnz:", a.nnz)

# %%
# Toggling an edge
# ----------------
# With two layers only nodes within two hops of either endpoint can change.
# A sparser graph makes the locality visible.

g, x = generate_sbm(2, 200, 0.015, 0.002, 16, seed=1)
cfg = EncoderConfig("gcn", in_dim=16, layers=2, hidden=32, out=16)
params = init_encoder(cfg, seed=1)
h = encode(cfg, params, g, x).data
u, v = 3, 250
h_plus = encode(cfg, params, toggle_edge(g, u, v), x).data
moved = set(np.flatnonzero(np.abs(h_plus - h).max(axis=1) > 0).tolist())
field = receptive_field(g, u, v, layers=2)
print(f"toggling ({u}, {v}) moved {len(moved)} rows; receptive field has {len(field)} nodes")
print("all moved rows inside the field:", moved <= field)
