"""Citation-graph datasets: container I/O, split regimes, synthetic graphs.

A dataset container is a directory holding::

    meta.json        {"name", "n_nodes", "n_classes", "n_features"}
    edges.tsv        u<TAB>v           one undirected edge per line, 0-based
    features.tsv     node<TAB>feat<TAB>value   sparse triplets
    labels.tsv       node<TAB>class
    split.<regime>.json  (optional) {"train": [...], "val": [...], "test": [...]}
"""

from __future__ import annotations

import json
import pickle
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import CsrMatrix, canonical, check_simple_graph

REGIMES = ("fastgcn", "jk")

# (train, val, test) per regime
SPLIT_SIZES = {
    "cora": {"fastgcn": (1208, 500, 1000), "jk": (1624, 542, 542)},
    "citeseer": {"fastgcn": (1827, 500, 1000), "jk": (1997, 665, 665)},
    "pubmed": {"fastgcn": (18217, 500, 1000)},
}


class DatasetError(ValueError):
    pass


@dataclass
class GraphDataset:
    name: str
    features: np.ndarray
    labels: np.ndarray
    adjacency: CsrMatrix
    path: Path | None = None
    n_edge_records: int | None = None

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.adjacency = canonical(self.adjacency)
        n = self.features.shape[0]
        if self.labels.shape != (n,) or self.adjacency.shape != (n, n):
            raise DatasetError("features, labels and adjacency disagree on the node count")
        if n and (self.labels.min() < 0):
            raise DatasetError("negative class label")
        counts = np.bincount(self.labels) if n else np.zeros(0)
        if np.any(counts == 0):
            raise DatasetError(f"classes without nodes: {np.flatnonzero(counts == 0).tolist()}")
        try:
            check_simple_graph(self.adjacency)
        except ValueError as exc:
            raise DatasetError(str(exc)) from exc

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def n_edges(self) -> int:
        return self.adjacency.nnz // 2

    def edge_list(self) -> np.ndarray:
        """Undirected edges as an ``(m, 2)`` array with ``u < v``."""
        upper = sp.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return np.stack([upper.row[order], upper.col[order]], axis=1).astype(np.int64)


@dataclass
class SplitSpec:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    regime: str = "custom"
    source: str = "fixed"  # fixed | random
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.val_idx = np.asarray(self.val_idx, dtype=np.int64)
        self.test_idx = np.asarray(self.test_idx, dtype=np.int64)
        parts = (self.train_idx, self.val_idx, self.test_idx)
        if any(p.size == 0 for p in parts):
            raise DatasetError("train, val and test must all be nonempty")
        joined = np.concatenate(parts)
        if np.unique(joined).size != joined.size:
            raise DatasetError("train, val and test overlap")

    def check(self, n_nodes: int) -> None:
        joined = np.concatenate([self.train_idx, self.val_idx, self.test_idx])
        if joined.min() < 0 or joined.max() >= n_nodes:
            raise DatasetError("split index out of range")

    def to_json(self) -> dict:
        return {"train": self.train_idx.tolist(), "val": self.val_idx.tolist(),
                "test": self.test_idx.tolist()}


def _read_table(path: Path, ncols: int, dtype) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(f"missing container file {path}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # empty files
        try:
            arr = np.loadtxt(path, delimiter="\t", dtype=dtype, ndmin=2)
        except ValueError as exc:
            raise DatasetError(f"{path.name}: {exc}") from exc
    if arr.size == 0:
        return np.zeros((0, ncols), dtype=dtype)
    if arr.shape[1] != ncols:
        raise DatasetError(f"{path.name}: expected {ncols} columns, got {arr.shape[1]}")
    return arr


def _adjacency_from_edges(edges: np.ndarray, n: int) -> tuple[CsrMatrix, int]:
    """Symmetric 0/1 adjacency; returns the number of self-loops dropped."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    loops = edges[:, 0] == edges[:, 1]
    edges = edges[~loops]
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sp.csr_array((np.ones(rows.size), (rows, cols)), shape=(n, n))
    adj = canonical(adj)
    adj.data[:] = 1.0
    return adj, int(loops.sum())


def load_dataset(directory) -> GraphDataset:
    """Read a dataset container; duplicate and reversed edges collapse, self-loops drop."""
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"missing container file {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
        n, n_classes, n_feat = int(meta["n_nodes"]), int(meta["n_classes"]), int(meta["n_features"])
        meta["name"]
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetError(f"bad meta.json in {directory}: {exc!r}") from exc

    edges = _read_table(directory / "edges.tsv", 2, np.int64)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise DatasetError("edge endpoint out of range")
    adj, loops = _adjacency_from_edges(edges, n)
    if loops:
        warnings.warn(f"{meta['name']}: dropped {loops} self-loops", stacklevel=2)

    feats = _read_table(directory / "features.tsv", 3, np.float64)
    rows, cols = feats[:, 0].astype(np.int64), feats[:, 1].astype(np.int64)
    if feats.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= n_feat):
        raise DatasetError("feature triplet index out of range")
    x = np.zeros((n, n_feat))
    np.add.at(x, (rows, cols), feats[:, 2])

    lab = _read_table(directory / "labels.tsv", 2, np.int64)
    if lab.size and (lab[:, 0].min() < 0 or lab[:, 0].max() >= n):
        raise DatasetError("label row index out of range")
    if lab.size and (lab[:, 1].min() < 0 or lab[:, 1].max() >= n_classes):
        raise DatasetError("class id out of range")
    labels = np.full(n, -1, dtype=np.int64)
    labels[lab[:, 0]] = lab[:, 1]
    if np.any(labels < 0):
        raise DatasetError(f"{int(np.sum(labels < 0))} nodes have no label")

    ds = GraphDataset(meta["name"], x, labels, adj, path=directory, n_edge_records=len(edges))
    if ds.n_classes != n_classes:
        raise DatasetError(f"meta says {n_classes} classes, labels use {ds.n_classes}")
    return ds


def save_dataset(ds: GraphDataset, directory, splits: dict[str, SplitSpec] | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"name": ds.name, "n_nodes": ds.n_nodes, "n_classes": ds.n_classes,
            "n_features": ds.n_features}
    (directory / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    with open(directory / "edges.tsv", "w") as fh:
        for u, v in ds.edge_list():
            fh.write(f"{u}\t{v}\n")
    r, c = np.nonzero(ds.features)
    with open(directory / "features.tsv", "w") as fh:
        for i, j, v in zip(r.tolist(), c.tolist(), ds.features[r, c].tolist()):
            fh.write(f"{i}\t{j}\t{v!r}\n")
    with open(directory / "labels.tsv", "w") as fh:
        for i, y in enumerate(ds.labels.tolist()):
            fh.write(f"{i}\t{y}\n")
    for regime, split in (splits or {}).items():
        (directory / f"split.{regime}.json").write_text(json.dumps(split.to_json()))
    return directory


def split_sizes(ds: GraphDataset, regime: str) -> tuple[int, int, int]:
    if regime not in REGIMES:
        raise DatasetError(f"unknown split regime {regime!r}")
    known = SPLIT_SIZES.get(ds.name.lower())
    if known is not None:
        if regime not in known:
            raise DatasetError(f"no {regime} split is defined for {ds.name}")
        return known[regime]
    n = ds.n_nodes
    if regime == "fastgcn":
        return n - 1500, 500, 1000
    r = int(round(0.2 * n))
    return n - 2 * r, r, r


def make_split(ds: GraphDataset, regime: str = "fastgcn", seed: int = 0,
               persist: bool = True) -> SplitSpec:
    """Fixed split from ``split.<regime>.json`` if shipped, else a seeded random one.

    Random splits use the standard sizes for the named datasets and are
    written next to the container as ``split.<regime>.seed<k>.json`` when the
    directory is writable.
    """
    if ds.path is not None:
        fixed = Path(ds.path) / f"split.{regime}.json"
        if fixed.exists():
            doc = json.loads(fixed.read_text())
            split = SplitSpec(doc["train"], doc["val"], doc["test"], regime, "fixed")
            split.check(ds.n_nodes)
            return split
    n_train, n_val, n_test = split_sizes(ds, regime)
    if min(n_train, n_val, n_test) < 1 or n_train + n_val + n_test > ds.n_nodes:
        raise DatasetError(f"{regime} split sizes {(n_train, n_val, n_test)} do not fit "
                           f"{ds.n_nodes} nodes")
    perm = np.random.default_rng(seed).permutation(ds.n_nodes)
    split = SplitSpec(np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
                      np.sort(perm[n_train + n_val:n_train + n_val + n_test]),
                      regime, "random", seed)
    if persist and ds.path is not None:
        target = Path(ds.path) / f"split.{regime}.seed{seed}.json"
        try:
            target.write_text(json.dumps(split.to_json()))
        except OSError:
            pass
    return split


def row_normalize(x: np.ndarray) -> np.ndarray:
    """Scale rows to sum to one; all-zero rows stay zero."""
    s = x.sum(axis=1, keepdims=True)
    return np.divide(x, s, out=np.zeros_like(x, dtype=np.float64), where=s != 0)


def convert_planetoid(raw_dir, name: str, out_dir) -> GraphDataset:
    """Convert the public Planetoid release (``ind.<name>.*``) into a container.

    Follows the usual loading recipe: test rows are reordered by
    ``test.index``; for citeseer the gaps in the test index range become
    featureless nodes with label 0. Also writes ``split.fastgcn.json``: the
    500 labelled nodes just before the test block form the validation set,
    the Planetoid test nodes the test set, and every other node trains.
    """
    raw_dir = Path(raw_dir)
    objs = {}
    for key in ("x", "y", "tx", "ty", "allx", "ally", "graph"):
        with open(raw_dir / f"ind.{name}.{key}", "rb") as fh:
            objs[key] = pickle.load(fh, encoding="latin1")
    test_index = np.loadtxt(raw_dir / f"ind.{name}.test.index", dtype=np.int64)
    test_sorted = np.sort(test_index)
    allx, ally = sp.csr_array(objs["allx"]), np.asarray(objs["ally"])
    tx, ty = sp.csr_array(objs["tx"]), np.asarray(objs["ty"])
    lo, hi = test_sorted[0], test_sorted[-1]
    if hi - lo + 1 != tx.shape[0]:
        full = hi - lo + 1
        tx_ext = sp.lil_array((full, tx.shape[1]))
        tx_ext[test_sorted - lo, :] = tx
        tx = sp.csr_array(tx_ext)
        ty_ext = np.zeros((full, ty.shape[1]))
        ty_ext[test_sorted - lo, :] = ty
        ty = ty_ext
    features = sp.vstack([allx, tx]).tolil()
    features[test_index, :] = features[test_sorted, :]
    labels = np.vstack([ally, ty])
    labels[test_index, :] = labels[test_sorted, :]
    n = features.shape[0]
    edges = [(u, v) for u, nbrs in objs["graph"].items() for v in nbrs if u < n and v < n]
    adj, _ = _adjacency_from_edges(np.array(edges, dtype=np.int64), n)
    ds = GraphDataset(name, features.toarray(), labels.argmax(axis=1), adj)
    n_ally = ally.shape[0]
    val = np.arange(n_ally - 500, n_ally)
    test = np.sort(test_index)
    train = np.setdiff1d(np.arange(n), np.concatenate([val, test]))
    split = SplitSpec(train, val, test, "fastgcn", "fixed")
    save_dataset(ds, out_dir, {"fastgcn": split})
    return load_dataset(out_dir)


def planted_partition_graph(n_nodes: int = 300, n_classes: int = 3, p_in: float = 0.05,
                            p_out: float = 0.005, n_features: int = 100,
                            words_per_node: int = 8, topic_strength: float = 0.5,
                            seed: int = 0, name: str = "planted") -> GraphDataset:
    """Citation-like synthetic graph with class-correlated bag-of-words features.

    Each class owns a block of "topic" words. A node draws ``words_per_node``
    words, each from its class block with probability ``topic_strength`` and
    uniformly from the whole vocabulary otherwise.
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(n_nodes) % n_classes
    rng.shuffle(labels)
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    upper = np.triu(rng.random((n_nodes, n_nodes)) < prob, k=1)
    adj = sp.csr_array((upper | upper.T).astype(np.float64))
    block = n_features // n_classes
    x = np.zeros((n_nodes, n_features))
    for i in range(n_nodes):
        topical = rng.random(words_per_node) < topic_strength
        words = np.where(topical,
                         labels[i] * block + rng.integers(0, block, words_per_node),
                         rng.integers(0, n_features, words_per_node))
        np.add.at(x[i], words, 1.0)
    return GraphDataset(name, x, labels, adj)


def toy_graph() -> GraphDataset:
    """Fixed 10-node, 3-class graph used for gradient checks."""
    edges = np.array([(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6),
                      (6, 7), (7, 8), (8, 9), (6, 9), (1, 8)])
    adj, _ = _adjacency_from_edges(edges, 10)
    labels = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2, 2])
    x = np.random.default_rng(1234).random((10, 6))
    return GraphDataset("toy10", x, labels, adj)
