"""GIN message passing, readout, and the projection / classification heads."""
from __future__ import annotations

import numpy as np

from .graph import DataError, GraphBatch
from .tensor import ModelParams, Tensor, as_tensor, matmul, neighbor_sum, relu, segment_mean, segment_sum


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def bias_init(rng: np.random.Generator, fan_in: int, width: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(1, width))


class Linear:
    def __init__(self, params: ModelParams, name: str, fan_in: int, fan_out: int, rng):
        self.w = params.add(f"{name}.w", glorot(rng, fan_in, fan_out))
        self.b = params.add(f"{name}.b", bias_init(rng, fan_in, fan_out))
        self.fan_in, self.fan_out = fan_in, fan_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.fan_in:
            raise ValueError(f"linear layer expects width {self.fan_in}, got input of shape {x.shape}")
        return matmul(x, self.w) + self.b


class MLP:
    """Linear -> ReLU -> Linear."""

    def __init__(self, params: ModelParams, name: str, dims: tuple[int, int, int], rng):
        self.l1 = Linear(params, f"{name}.l1", dims[0], dims[1], rng)
        self.l2 = Linear(params, f"{name}.l2", dims[1], dims[2], rng)

    @property
    def in_dim(self) -> int:
        return self.l1.fan_in

    def __call__(self, x: Tensor) -> Tensor:
        return self.l2(relu(self.l1(x)))


def gin_layer(h: Tensor, edge_index: np.ndarray, eps, mlp) -> Tensor:
    """``mlp((1 + eps) * h + sum of neighbor rows)``."""
    h = as_tensor(h)
    if hasattr(mlp, "in_dim") and h.shape[1] != mlp.in_dim:
        raise ValueError(f"GIN layer input width {h.shape[1]} does not match MLP width {mlp.in_dim}")
    agg = neighbor_sum(h, edge_index[0], edge_index[1])
    return mlp((1.0 + eps) * h + agg)


class GINStack:
    """``layers`` GIN layers; ReLU between layers, and after the last one unless
    ``final_activation`` is off (the generator emits raw logits)."""

    def __init__(self, params: ModelParams, prefix: str, in_dim: int, hidden: int, layers: int,
                 rng, out_dim: int | None = None, final_activation: bool = True):
        if layers < 1:
            raise ValueError("a GIN stack needs at least one layer")
        out_dim = hidden if out_dim is None else out_dim
        self.in_dim = in_dim
        self.final_activation = final_activation
        self.mlps, self.eps = [], []
        d = in_dim
        for k in range(layers):
            last = k == layers - 1
            self.mlps.append(MLP(params, f"{prefix}.layer{k}.mlp", (d, hidden, out_dim if last else hidden), rng))
            self.eps.append(params.add(f"{prefix}.layer{k}.eps", np.zeros((1, 1))))
            d = hidden

    def __call__(self, x, edge_index) -> Tensor:
        h = as_tensor(x)
        if h.shape[1] != self.in_dim:
            raise ValueError(f"feature width {h.shape[1]} does not match layer-0 input width {self.in_dim}")
        n = len(self.mlps)
        for k, (mlp, eps) in enumerate(zip(self.mlps, self.eps)):
            h = gin_layer(h, edge_index, eps, mlp)
            if k < n - 1 or self.final_activation:
                h = relu(h)
        return h


def readout(node_embs: Tensor, batch: GraphBatch, kind: str = "sum") -> Tensor:
    if kind == "sum":
        return segment_sum(node_embs, batch.batch, batch.num_graphs)
    if kind == "mean":
        return segment_mean(node_embs, batch.batch, batch.num_graphs)
    raise ValueError(f"unknown readout {kind!r}")


class GINEncoder:
    """Shared graph encoder with a projection head (contrastive) and a linear classifier."""

    def __init__(self, in_dim: int, hidden: int, layers: int, num_classes: int, rng,
                 readout: str = "sum", prefix: str = "encoder"):
        self.params = ModelParams()
        self.body = ModelParams()
        self.gin = GINStack(self.body, prefix, in_dim, hidden, layers, rng)
        self.head = ModelParams()
        self.proj = MLP(self.head, "proj", (hidden, hidden, hidden), rng)
        self.cls_params = ModelParams()
        self.classifier = Linear(self.cls_params, "cls", hidden, num_classes, rng)
        for group in (self.body, self.head, self.cls_params):
            self.params.update(group)
        self.readout_kind = readout
        self.in_dim, self.hidden, self.num_classes = in_dim, hidden, num_classes

    def encode(self, batch: GraphBatch) -> tuple[Tensor, Tensor]:
        if batch.num_graphs == 0:
            raise DataError("cannot encode an empty batch")
        nodes = self.gin(batch.x, batch.edge_index)
        return nodes, readout(nodes, batch, self.readout_kind)

    def project(self, graph_embs: Tensor) -> Tensor:
        return self.proj(graph_embs)

    def classify(self, graph_embs: Tensor) -> Tensor:
        return self.classifier(graph_embs)
