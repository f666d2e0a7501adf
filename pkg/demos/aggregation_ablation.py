"""How the aggregation schema changes accuracy, and how often it touches the graph.

Mirrors the hop / depth / fixed-weight grid of ``kernode ablate`` on a
synthetic graph, then counts sparse products per forward pass.
"""

import numpy as np

from kernode import TrainConfig, build_feature_map, make_split, train
from kernode.data import planted_partition_graph
from kernode.graph import counting_spmm
from kernode.model import FeatureMapConfig

ds = planted_partition_graph(n_nodes=1500, n_classes=5, n_features=500,
                             p_in=0.006, p_out=0.0004, seed=2, name="synthetic")
split = make_split(ds, "jk", seed=0, persist=False)

grid = [("default (2-hop, 2-layer, learned omega)", {}),
        ("1-hop", {"H": 1}), ("3-hop", {"H": 3}),
        ("1-layer", {"n_layers": 1}), ("3-layer", {"n_layers": 3}),
        ("c = 0.25", {"fixed_c": 0.25}), ("c = 1.00", {"fixed_c": 1.0})]

for label, override in grid:
    accs = [train(ds, split, TrainConfig(variant="K3", seed=s, epochs=100, **override)).test_acc
            for s in range(3)]
    print(f"{label:42s} {100 * np.mean(accs):6.2f} ± {100 * np.std(accs):.2f}")

# Aggregation happens once: the hop-weighted map multiplies by the graph once
# per forward pass (or once per hop without the combined operator), whatever
# the MLP depth. A GCN stack multiplies once per layer.
x = ds.features
for depth in (1, 2, 3):
    dims = (16,) * (depth - 1) + (ds.n_classes,)
    counts = []
    for cfg in (FeatureMapConfig(H=2, layer_dims=dims),
                FeatureMapConfig(H=2, layer_dims=dims, combine_hops=False),
                FeatureMapConfig(kind="gcn", layer_dims=dims)):
        model = build_feature_map(ds.adjacency, ds.n_features, cfg, np.random.default_rng(0))
        with counting_spmm() as c:
            model.forward(x)
        counts.append(c.calls)
    print(f"depth {depth}: combined {counts[0]}, per-hop {counts[1]}, gcn {counts[2]}")
