"""Feature maps: hop-weighted aggregation of an MLP, and a GCN stack.

``GThetaMap`` computes ``(sum_h w_h * (Abar^h ⊙ M^(h))) @ MLP(X)`` with the
masked powers precomputed once, so each forward pass aggregates exactly once
no matter how deep the MLP is. ``GCNMap`` interleaves ``Abar @`` with every
layer instead.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import graph
from .graph import HopOperators, spmm_dense
from .layers import Affine, Dropout, Param, ReLU

CHECKPOINT_FORMAT = "kernode-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class FeatureMapConfig:
    kind: str = "gtheta"  # gtheta | gcn
    H: int = 2
    layer_dims: tuple[int, ...] = (16,)
    mask_mode: str = "cumulative"
    fixed_c: float | None = None
    bias: bool = True
    dropout: float = 0.0
    combine_hops: bool = True

    def __post_init__(self) -> None:
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if self.kind not in ("gtheta", "gcn"):
            raise ValueError(f"unknown feature map {self.kind!r}")
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if not self.layer_dims or min(self.layer_dims) < 1:
            raise ValueError("layer_dims must be a nonempty list of positive ints")
        if self.mask_mode not in graph.MASK_MODES:
            raise ValueError(f"unknown mask mode {self.mask_mode!r}")
        if self.fixed_c is not None and not 0.0 < self.fixed_c <= 1.0:
            raise ValueError("fixed c must lie in (0, 1]")


def build_hop_operators(abar, H: int, mask_mode: str = "cumulative") -> HopOperators:
    """Masked powers ``Abar^h ⊙ M^(h)``, ``h = 1..H``.

    The graph used for hop distances is the off-diagonal pattern of ``abar``.
    """
    adj = graph.pattern(abar)
    adj.setdiag(0.0)
    adj = graph.canonical(adj)
    masks = graph.hop_masks(adj, H, mask_mode)
    powers = []
    power = graph.canonical(abar)
    for h in range(1, H + 1):
        if h > 1:
            power = graph.canonical(power @ abar)
        powers.append(graph.hadamard_mask(power, masks[h - 1]))
    return HopOperators(H, powers, mask_mode)


class MLP:
    """Affine layers with ReLU between them and a linear output."""

    def __init__(self, in_dim: int, layer_dims, rng: np.random.Generator,
                 bias: bool = True, dropout: float = 0.0, prefix: str = "mlp"):
        self.layers: list = []
        dims = [in_dim, *layer_dims]
        for i in range(len(layer_dims)):
            if i > 0:
                self.layers.append(ReLU())
                if dropout:
                    self.layers.append(Dropout(dropout, rng))
            self.layers.append(Affine.init(f"{prefix}.{i}", dims[i], dims[i + 1], rng,
                                           bias=bias, input_grad=i > 0))

    @property
    def depth(self) -> int:
        return sum(isinstance(layer, Affine) for layer in self.layers)

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x, training: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, training) if isinstance(layer, Dropout) else layer.forward(x)
        return x

    def backward(self, upstream: np.ndarray) -> None:
        for layer in reversed(self.layers):
            upstream = layer.backward(upstream)


class FeatureMap:
    """Shared parameter plumbing for the two feature maps."""

    def params(self) -> list[Param]:
        raise NotImplementedError

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.params()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = {p.name: p for p in self.params()}
        if set(own) != set(state):
            raise ValueError(f"parameter names differ: {sorted(set(own) ^ set(state))}")
        for name, value in state.items():
            value = np.asarray(value, dtype=np.float64)
            if value.shape != own[name].shape:
                raise ValueError(f"{name}: shape {value.shape} != {own[name].shape}")
            own[name].value[...] = value

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()


class GThetaMap(FeatureMap):
    def __init__(self, ops: HopOperators, in_dim: int, cfg: FeatureMapConfig,
                 rng: np.random.Generator):
        self.ops = ops
        self.cfg = cfg
        self.mlp = MLP(in_dim, cfg.layer_dims, rng, bias=cfg.bias, dropout=cfg.dropout)
        hops = np.arange(1, ops.H + 1)
        if cfg.fixed_c is None:
            self.omega = Param("omega", np.ones(ops.H))
        else:
            self.omega = Param("omega", cfg.fixed_c ** hops, trainable=False)
        self._powers_t = [p.T.tocsr() for p in ops.masked_powers]
        self._y = None
        self._s = None

    @property
    def out_dim(self) -> int:
        return self.cfg.layer_dims[-1]

    def params(self) -> list[Param]:
        return [self.omega, *self.mlp.params()]

    def forward(self, x, training: bool = False) -> np.ndarray:
        y = self.mlp.forward(x, training)
        self._y = y
        if self.cfg.combine_hops:
            self._s = self.ops.combined(self.omega.value)
            return spmm_dense(self._s, y)
        z = np.zeros((self.ops.shape[0], y.shape[1]))
        for w, p in zip(self.omega.value, self.ops.masked_powers):
            z += w * spmm_dense(p, y)
        return z

    def backward(self, dz: np.ndarray) -> None:
        if self._y is None:
            raise RuntimeError("backward called before forward")
        y = self._y
        if self.omega.trainable:
            for h, pt in enumerate(self._powers_t):
                self.omega.grad[h] += np.sum(spmm_dense(pt, dz) * y)
        if self.cfg.combine_hops:
            dy = spmm_dense(self._s.T.tocsr(), dz)
        else:
            dy = np.zeros_like(y)
            for w, pt in zip(self.omega.value, self._powers_t):
                dy += w * spmm_dense(pt, dz)
        self.mlp.backward(dy)


class GCNMap(FeatureMap):
    """``H_{l+1} = relu(Abar H_l W_l)`` with a linear last layer."""

    def __init__(self, abar, in_dim: int, cfg: FeatureMapConfig, rng: np.random.Generator):
        self.abar = graph.canonical(abar)
        self._abar_t = self.abar.T.tocsr()
        self.cfg = cfg
        dims = [in_dim, *cfg.layer_dims]
        self.layers = [Affine.init(f"gcn.{i}", dims[i], dims[i + 1], rng, bias=cfg.bias,
                                   input_grad=i > 0) for i in range(len(cfg.layer_dims))]
        self.acts = [ReLU() for _ in self.layers[:-1]]
        self.drops = [Dropout(cfg.dropout, rng) for _ in self.layers[:-1]]

    @property
    def out_dim(self) -> int:
        return self.cfg.layer_dims[-1]

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x, training: bool = False) -> np.ndarray:
        h = x
        for i, layer in enumerate(self.layers):
            if i > 0:
                h = self.drops[i - 1].forward(h, training)
            h = spmm_dense(self.abar, layer.forward(h))
            if i < len(self.acts):
                h = self.acts[i].forward(h)
        return h

    def backward(self, dz: np.ndarray) -> None:
        g = dz
        for i in reversed(range(len(self.layers))):
            if i < len(self.acts):
                g = self.acts[i].backward(g)
            g = self.layers[i].backward(spmm_dense(self._abar_t, g))
            if i > 0:
                g = self.drops[i - 1].backward(g)


def build_feature_map(adj, in_dim: int, cfg: FeatureMapConfig,
                      rng: np.random.Generator) -> FeatureMap:
    abar = graph.renormalized_adjacency(adj)
    if cfg.kind == "gcn":
        return GCNMap(abar, in_dim, cfg, rng)
    return GThetaMap(build_hop_operators(abar, cfg.H, cfg.mask_mode), in_dim, cfg, rng)


def save_checkpoint(path, model: FeatureMap, meta: dict[str, Any]) -> None:
    """Write all parameters and ``meta`` as JSON (floats round-trip exactly)."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta,
        "params": [{"name": p.name, "shape": list(p.shape),
                    "values": p.value.ravel().tolist()} for p in model.params()],
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a kernode checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    state = {p["name"]: np.asarray(p["values"], dtype=np.float64).reshape(p["shape"])
             for p in doc["params"]}
    return doc["meta"], state


def feature_map_config_dict(cfg: FeatureMapConfig) -> dict[str, Any]:
    d = asdict(cfg)
    d["layer_dims"] = list(cfg.layer_dims)
    return d
