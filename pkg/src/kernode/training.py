"""Variant registry, triplet sampling and the training loops."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import scipy.sparse as sp

from .data import GraphDataset, SplitSpec, row_normalize
from .evaluation import accuracy, average_precision, nearest_centroid_predict, roc_auc, softmax_predict
from .kernels import BaseKernel, median_heuristic_gamma
from .layers import row_l2_normalize
from .losses import Triplets, combined_loss, kernel_loss, linkpred_loss, sigmoid, softmax_loss
from .model import FeatureMap, FeatureMapConfig, build_feature_map
from .optim import Adam, GradCheckReport, finite_diff_check

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Variant:
    feature_map: str  # gtheta | gcn
    kernel: str | None  # dot | rbf | None
    loss: str  # kernel | softmax | kernel+softmax | bce
    classifier: str  # centroid | softmax | link
    width: str  # wide: (512, 128); narrow: (16, C); link: (32, 16)


VARIANTS = {
    "K1": Variant("gtheta", "dot", "kernel", "centroid", "wide"),
    "K2": Variant("gtheta", "rbf", "kernel", "centroid", "wide"),
    "K3": Variant("gtheta", "dot", "kernel+softmax", "softmax", "narrow"),
    "N1": Variant("gtheta", None, "softmax", "softmax", "narrow"),
    "K1star": Variant("gcn", "dot", "kernel", "centroid", "narrow"),
    "linkpred": Variant("gtheta", "dot", "bce", "link", "link"),
}

_WIDTHS = {"wide": (512, 128), "link": (32, 16)}


def canonical_variant(name: str) -> str:
    aliases = {k.lower(): k for k in VARIANTS}
    aliases.update({"k1*": "K1star", "k1_star": "K1star"})
    try:
        return aliases[name.lower()]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None


@dataclass
class TrainConfig:
    variant: str = "K3"
    H: int = 2
    layer_dims: tuple[int, ...] | None = None
    n_layers: int | None = None
    mask_mode: str = "cumulative"
    alpha: float = 0.1
    lr: float = 0.01
    epochs: int | None = None
    triplets_per_epoch: int = 10000
    triplet_batch_size: int | None = None
    seed: int = 0
    loss_weight_lambda: float = 1.0
    fixed_c: float | None = None
    rbf_gamma: float | None = None
    normalize_rbf: bool = False
    normalize_features: bool = True
    weight_decay: float = 0.0
    dropout: float = 0.0
    gcn_bias: bool = False
    combine_hops: bool = True
    regime: str = "fastgcn"

    def __post_init__(self) -> None:
        self.variant = canonical_variant(self.variant)
        if self.layer_dims is not None:
            self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.epochs is not None and self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.triplets_per_epoch < 1:
            raise ValueError("triplets_per_epoch must be >= 1")
        if self.triplet_batch_size is not None and self.triplet_batch_size < 1:
            raise ValueError("triplet_batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.n_layers is not None and self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if self.fixed_c is not None and not 0.0 < self.fixed_c <= 1.0:
            raise ValueError("fixed c must lie in (0, 1]")

    @property
    def spec(self) -> Variant:
        return VARIANTS[self.variant]

    def resolve(self, n_classes: int, dataset_name: str = "") -> "TrainConfig":
        """Fill variant- and dataset-dependent defaults."""
        spec = self.spec
        dims = self.layer_dims
        if dims is None:
            hidden, out = _WIDTHS.get(spec.width, (16, n_classes))
            depth = self.n_layers or 2
            dims = (hidden,) * (depth - 1) + (out,)
        epochs = self.epochs
        if epochs is None:
            if spec.width == "wide":
                epochs = 100 if dataset_name.lower() == "pubmed" else 10
            else:
                epochs = 200
        batch = self.triplet_batch_size
        if batch is None and spec.width == "wide":
            batch = 1000
        return replace(self, layer_dims=tuple(dims), epochs=epochs, triplet_batch_size=batch)

    def feature_map_config(self) -> FeatureMapConfig:
        if self.layer_dims is None:
            raise ValueError("resolve() the config first")
        gcn = self.spec.feature_map == "gcn"
        return FeatureMapConfig(kind=self.spec.feature_map, H=self.H, layer_dims=self.layer_dims,
                                mask_mode=self.mask_mode, fixed_c=self.fixed_c,
                                bias=self.gcn_bias if gcn else True, dropout=self.dropout,
                                combine_hops=self.combine_hops)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        if d["layer_dims"] is not None:
            d["layer_dims"] = list(d["layer_dims"])
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


class TripletSampler:
    """Uniform triplets over training nodes.

    Anchors are uniform over training nodes whose class has at least two
    training members, positives uniform over the other members of the anchor's
    class, negatives uniform over training nodes of other classes.
    """

    def __init__(self, labels: np.ndarray, train_idx: np.ndarray):
        train_idx = np.asarray(train_idx, dtype=np.int64)
        y = np.asarray(labels)[train_idx]
        order = np.argsort(y, kind="stable")
        self.nodes = train_idx[order]
        classes, starts, sizes = np.unique(y[order], return_index=True, return_counts=True)
        if len(classes) < 2:
            raise ValueError("triplets need at least two classes in the training set")
        self.class_of = np.repeat(np.arange(len(classes)), sizes)
        self.starts, self.sizes = starts, sizes
        self.eligible = np.flatnonzero(sizes[self.class_of] >= 2)
        if self.eligible.size == 0:
            raise ValueError("no class has two training nodes")

    def sample(self, n: int, rng: np.random.Generator) -> Triplets:
        a = self.eligible[rng.integers(0, self.eligible.size, n)]
        c = self.class_of[a]
        start, size = self.starts[c], self.sizes[c]
        r = rng.integers(0, size - 1)
        p = start + r + (r >= a - start)
        r = rng.integers(0, len(self.nodes) - size)
        neg = np.where(r < start, r, r + size)
        return Triplets(self.nodes[a], self.nodes[p], self.nodes[neg])


def sample_triplets(labels: np.ndarray, train_idx: np.ndarray, n: int,
                    rng: np.random.Generator) -> Triplets:
    return TripletSampler(labels, train_idx).sample(n, rng)


def prepare_inputs(ds: GraphDataset, cfg: TrainConfig):
    """Feature matrix as fed to the model; sparse when mostly zeros."""
    x = row_normalize(ds.features) if cfg.normalize_features else ds.features
    if x.size and np.count_nonzero(x) < 0.1 * x.size:
        return sp.csr_array(x)
    return x


@dataclass
class TrainResult:
    model: FeatureMap
    config: TrainConfig
    history: list[dict[str, float]]
    best_epoch: int
    val_acc: float
    test_acc: float
    gamma: float | None = None
    meta: dict[str, Any] = field(default_factory=dict)


def _objective(cfg: TrainConfig, z: np.ndarray, labels: np.ndarray, train_idx: np.ndarray,
               triplets: Triplets | None, kernel: BaseKernel
               ) -> tuple[float, np.ndarray, dict[str, float]]:
    spec = cfg.spec
    if spec.loss == "softmax":
        ly, g = softmax_loss(z, labels, train_idx)
        return ly, g, {"L_Y": ly}
    if spec.loss == "kernel+softmax":
        return combined_loss(z, labels, train_idx, triplets, cfg.alpha, cfg.loss_weight_lambda)
    normalize = kernel.kind == "dot" or cfg.normalize_rbf
    lk, g = kernel_loss(z, triplets, kernel, cfg.alpha, normalize=normalize)
    return lk, g, {"L_K": lk}


def classify(cfg: TrainConfig, z: np.ndarray, labels: np.ndarray, train_idx: np.ndarray,
             query_idx: np.ndarray, kernel: BaseKernel, n_classes: int) -> np.ndarray:
    """Predicted labels for ``query_idx`` under the variant's classifier."""
    if cfg.spec.classifier == "softmax":
        return softmax_predict(z[query_idx])
    normalize = kernel.kind == "dot" or cfg.normalize_rbf
    return nearest_centroid_predict(z[train_idx], labels[train_idx], z[query_idx], kernel,
                                    normalize=normalize, n_classes=n_classes)


def _rbf_gamma(cfg: TrainConfig, z: np.ndarray, train_idx: np.ndarray,
               rng: np.random.Generator) -> float:
    zt = z[train_idx]
    if cfg.normalize_rbf:
        zt = row_l2_normalize(zt)[0]
    return median_heuristic_gamma(zt, rng=rng)


def train(ds: GraphDataset, split: SplitSpec, cfg: TrainConfig,
          metrics_path=None) -> TrainResult:
    """Full-batch Adam training; returns the parameters with the best val accuracy."""
    cfg = cfg.resolve(ds.n_classes, ds.name)
    spec = cfg.spec
    if spec.classifier == "link":
        raise ValueError("use train_linkpred for the link prediction variant")
    split.check(ds.n_nodes)
    rng = np.random.default_rng(cfg.seed)
    x = prepare_inputs(ds, cfg)
    model = build_feature_map(ds.adjacency, ds.n_features, cfg.feature_map_config(), rng)
    opt = Adam(model.params(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    labels = ds.labels
    train_idx = split.train_idx
    eval_idx = np.concatenate([split.val_idx, split.test_idx])
    n_val = len(split.val_idx)
    uses_triplets = "kernel" in spec.loss
    sampler = TripletSampler(labels, train_idx) if uses_triplets else None
    kernel = BaseKernel(spec.kernel or "dot", cfg.rbf_gamma)
    z_eval = None
    if kernel.kind == "rbf" and cfg.rbf_gamma is None:
        z_eval = model.forward(x)

    out = open(metrics_path, "a") if metrics_path is not None else None
    history: list[dict[str, float]] = []
    best_val, best_epoch, best_state, best_gamma, best_test = -1.0, 0, None, None, 0.0
    try:
        for epoch in range(1, cfg.epochs + 1):
            if kernel.kind == "rbf" and cfg.rbf_gamma is None:
                kernel = kernel.with_gamma(_rbf_gamma(cfg, z_eval, train_idx, rng))
            triplets = sampler.sample(cfg.triplets_per_epoch, rng) if uses_triplets else None
            batches = [triplets]
            if triplets is not None and cfg.triplet_batch_size:
                b = cfg.triplet_batch_size
                batches = [triplets[i:i + b] for i in range(0, len(triplets), b)]
            sums: dict[str, float] = {}
            for batch in batches:
                z = model.forward(x, training=True)
                loss, dz, parts = _objective(cfg, z, labels, train_idx, batch, kernel)
                if not np.isfinite(loss) or not np.all(np.isfinite(dz)):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}: {parts}")
                model.backward(dz)
                opt.step()
                for k, v in parts.items():
                    sums[k] = sums.get(k, 0.0) + v / len(batches)
            z_eval = model.forward(x)
            pred = classify(cfg, z_eval, labels, train_idx, eval_idx, kernel, ds.n_classes)
            val_acc = accuracy(pred[:n_val], labels[split.val_idx])
            test_acc = accuracy(pred[n_val:], labels[split.test_idx])
            rec = {"epoch": epoch, "L_K": sums.get("L_K"), "L_Y": sums.get("L_Y"),
                   "val_acc": val_acc, "test_acc": test_acc}
            history.append(rec)
            if out is not None:
                out.write(json.dumps(rec) + "\n")
                out.flush()
            log.debug("epoch %d %s", epoch, rec)
            if val_acc > best_val:
                best_val, best_epoch, best_test = val_acc, epoch, test_acc
                best_state = model.state_dict()
                best_gamma = kernel.gamma
    finally:
        if out is not None:
            out.close()
    model.load_state_dict(best_state)
    return TrainResult(model, cfg, history, best_epoch, best_val, best_test, best_gamma)


def embed(result: TrainResult, ds: GraphDataset) -> np.ndarray:
    return result.model.forward(prepare_inputs(ds, result.config))


# link prediction


@dataclass
class EdgeSplit:
    """Held-out positive edges with equally many sampled non-edges."""

    n_nodes: int
    train_edges: np.ndarray
    val_edges: np.ndarray
    test_edges: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray

    def train_adjacency(self) -> sp.csr_array:
        e = self.train_edges
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        adj = sp.csr_array((np.ones(rows.size), (rows, cols)), shape=(self.n_nodes, self.n_nodes))
        adj.sum_duplicates()
        adj.data[:] = 1.0
        return adj


def _pair_codes(pairs: np.ndarray, n: int) -> np.ndarray:
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    return lo * n + hi


def sample_non_edges(n: int, count: int, exclude_codes: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
    """``count`` distinct unordered pairs ``u < v`` whose codes are not excluded."""
    taken = set(exclude_codes.tolist())
    out: list[tuple[int, int]] = []
    while len(out) < count:
        need = count - len(out)
        cand = rng.integers(0, n, size=(2 * need + 16, 2))
        for u, v in cand:
            if u == v:
                continue
            u, v = (u, v) if u < v else (v, u)
            code = int(u) * n + int(v)
            if code in taken:
                continue
            taken.add(code)
            out.append((int(u), int(v)))
            if len(out) == count:
                break
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def make_edge_split(ds: GraphDataset, val_frac: float = 0.05, test_frac: float = 0.10,
                    seed: int = 0) -> EdgeSplit:
    edges = ds.edge_list()
    m = len(edges)
    n_val, n_test = int(np.floor(val_frac * m)), int(np.floor(test_frac * m))
    if n_val < 1 or n_test < 1 or n_val + n_test >= m:
        raise ValueError(f"cannot split {m} edges into {val_frac}/{test_frac} fractions")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(m)
    test = edges[np.sort(perm[:n_test])]
    val = edges[np.sort(perm[n_test:n_test + n_val])]
    train = edges[np.sort(perm[n_test + n_val:])]
    neg = sample_non_edges(ds.n_nodes, n_val + n_test, _pair_codes(edges, ds.n_nodes), rng)
    return EdgeSplit(ds.n_nodes, train, val, test, neg[:n_val], neg[n_val:])


def link_scores(z: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    return sigmoid(np.einsum("ij,ij->i", z[pairs[:, 0]], z[pairs[:, 1]]))


def link_metrics(z: np.ndarray, pos: np.ndarray, neg: np.ndarray) -> tuple[float, float]:
    scores = np.concatenate([link_scores(z, pos), link_scores(z, neg)])
    truth = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return roc_auc(scores, truth), average_precision(scores, truth)


@dataclass
class LinkPredResult:
    model: FeatureMap
    config: TrainConfig
    history: list[dict[str, float]]
    best_epoch: int
    val_auc: float
    val_ap: float
    test_auc: float
    test_ap: float


def train_linkpred(ds: GraphDataset, edges: EdgeSplit, cfg: TrainConfig,
                   metrics_path=None) -> LinkPredResult:
    """Fit embeddings on the training graph; select by validation AUC."""
    cfg = cfg.resolve(ds.n_classes, ds.name)
    if cfg.spec.classifier != "link":
        cfg = replace(cfg, variant="linkpred")
    rng = np.random.default_rng(cfg.seed)
    x = prepare_inputs(ds, cfg)
    model = build_feature_map(edges.train_adjacency(), ds.n_features,
                              cfg.feature_map_config(), rng)
    opt = Adam(model.params(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    train_codes = _pair_codes(edges.train_edges, ds.n_nodes)
    out = open(metrics_path, "a") if metrics_path is not None else None
    history = []
    best = (-1.0, 0, None, 0.0, 0.0, 0.0)
    try:
        for epoch in range(1, cfg.epochs + 1):
            neg = sample_non_edges(ds.n_nodes, len(edges.train_edges), train_codes, rng)
            z = model.forward(x, training=True)
            loss, dz = linkpred_loss(z, edges.train_edges, neg)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            model.backward(dz)
            opt.step()
            z = model.forward(x)
            val_auc, val_ap = link_metrics(z, edges.val_edges, edges.val_neg)
            test_auc, test_ap = link_metrics(z, edges.test_edges, edges.test_neg)
            rec = {"epoch": epoch, "L_K": loss, "val_auc": val_auc, "val_ap": val_ap,
                   "test_auc": test_auc, "test_ap": test_ap}
            history.append(rec)
            if out is not None:
                out.write(json.dumps(rec) + "\n")
            if val_auc > best[0]:
                best = (val_auc, epoch, model.state_dict(), val_ap, test_auc, test_ap)
    finally:
        if out is not None:
            out.close()
    val_auc, epoch, state, val_ap, test_auc, test_ap = best
    model.load_state_dict(state)
    return LinkPredResult(model, cfg, history, epoch, val_auc, val_ap, test_auc, test_ap)


# gradient checks


def variant_gradcheck(variant: str, ds: GraphDataset | None = None, seed: int = 0,
                      step: float = 1e-5, tolerance: float = 1e-4,
                      corrupt: bool = False, **overrides) -> GradCheckReport:
    """Finite-difference check of a variant's full loss on a small graph.

    Triplets, negatives and the RBF bandwidth are drawn once and then held
    fixed so the loss is a deterministic function of the parameters.
    """
    from .data import toy_graph

    ds = ds if ds is not None else toy_graph()
    cfg = TrainConfig(variant=variant, seed=seed, epochs=1, **overrides)
    if cfg.layer_dims is None:
        cfg = replace(cfg, layer_dims=(5, 4) if cfg.spec.width != "narrow" else (5, ds.n_classes))
    cfg = cfg.resolve(ds.n_classes, ds.name)
    rng = np.random.default_rng(seed)
    x = ds.features
    spec = cfg.spec
    if spec.classifier == "link":
        edges = ds.edge_list()
        adj = ds.adjacency
        neg = sample_non_edges(ds.n_nodes, len(edges), _pair_codes(edges, ds.n_nodes), rng)
    else:
        adj = ds.adjacency
    model = build_feature_map(adj, ds.n_features, cfg.feature_map_config(), rng)
    # move off the ones-initialization so every hop weight gets a distinct value
    for p in model.params():
        if p.name == "omega" and p.trainable:
            p.value[:] = rng.uniform(0.5, 1.5, p.shape)
    train_idx = np.arange(ds.n_nodes)
    triplets = sample_triplets(ds.labels, train_idx, 30, rng) if "kernel" in spec.loss else None
    kernel = BaseKernel(spec.kernel or "dot", cfg.rbf_gamma)
    if kernel.kind == "rbf" and kernel.gamma is None:
        kernel = kernel.with_gamma(_rbf_gamma(cfg, model.forward(x), train_idx, rng))
    params = [p for p in model.params() if p.trainable]

    def loss_and_grad():
        model.zero_grad()
        z = model.forward(x)
        if spec.classifier == "link":
            loss, dz = linkpred_loss(z, edges, neg)
        else:
            loss, dz, _ = _objective(cfg, z, ds.labels, train_idx, triplets, kernel)
        model.backward(dz)
        scale = 2.0 if corrupt else 1.0
        return loss, {p.name: scale * p.grad.copy() for p in params}

    return finite_diff_check(loss_and_grad, params, step=step, tolerance=tolerance, seed=seed)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")
