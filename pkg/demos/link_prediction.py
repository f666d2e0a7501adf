"""Hold out 15% of the edges and score them with learned embeddings.

The encoder sees only the training graph; held-out edges and an equal
number of non-edges are ranked by ``sigmoid(<z_u, z_v>)``.
"""

from kernode import TrainConfig, train_linkpred
from kernode.data import planted_partition_graph
from kernode.training import make_edge_split

ds = planted_partition_graph(n_nodes=1000, n_classes=4, n_features=300,
                             p_in=0.02, p_out=0.001, seed=5, name="synthetic")
edges = make_edge_split(ds, seed=0)
print(f"train/val/test edges: {len(edges.train_edges)}/{len(edges.val_edges)}/"
      f"{len(edges.test_edges)}")

res = train_linkpred(ds, edges, TrainConfig(variant="linkpred", seed=0))
print(f"best epoch {res.best_epoch}: val AUC {100 * res.val_auc:.2f}, "
      f"test AUC {100 * res.test_auc:.2f}, test AP {100 * res.test_ap:.2f}")
