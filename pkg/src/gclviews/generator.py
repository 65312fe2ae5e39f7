"""Learnable node-wise view generator.

A GIN stack maps each node to three logits (drop, keep, mask). A hard
choice is drawn with the Gumbel-softmax trick; the forward pass sees the
one-hot choice while gradients flow through the relaxed sample.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .gin import GINStack
from .graph import GraphBatch
from .tensor import ModelParams, Tensor, as_tensor, no_grad, softmax_rows

DROP, KEEP, MASK = 0, 1, 2
CHOICES = ("drop", "keep", "mask")


@dataclass
class AugChoiceMatrix:
    probs: Tensor  # softmax(logits), differentiable
    soft: Tensor  # relaxed Gumbel-softmax sample
    hard: np.ndarray  # one-hot rows, column order (drop, keep, mask)
    straight: Tensor  # forward == hard, backward through ``soft``

    @property
    def num_nodes(self) -> int:
        return self.hard.shape[0]

    def labels(self) -> np.ndarray:
        return self.hard.argmax(axis=1)

    def counts(self) -> dict[str, int]:
        c = self.hard.sum(axis=0).astype(int)
        return dict(zip(CHOICES, c.tolist()))


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Value of ``hard`` exactly, gradient of ``soft``."""
    return Tensor._make(np.array(hard, dtype=np.float64), (soft,), lambda g: (g,), "straight_through")


def gumbel_softmax(logits: Tensor, tau_g: float, rng: np.random.Generator | None = None,
                   noise: np.ndarray | None = None) -> AugChoiceMatrix:
    """Sample one-hot rows from ``softmax(logits)``.

    Pass ``noise`` to freeze the Gumbel perturbation (gradient checks).
    """
    if not tau_g > 0:
        raise ValueError(f"Gumbel temperature must be positive, got {tau_g}")
    logits = as_tensor(logits)
    if noise is None:
        if rng is None:
            raise ValueError("gumbel_softmax needs an rng or explicit noise")
        noise = rng.gumbel(size=logits.shape)
    soft = softmax_rows((logits + noise) * (1.0 / tau_g))
    hard = np.zeros(logits.shape)
    hard[np.arange(logits.shape[0]), soft.data.argmax(axis=1)] = 1.0
    return AugChoiceMatrix(softmax_rows(logits), soft, hard, straight_through(hard, soft))


def apply_augmentation(batch: GraphBatch, choices: AugChoiceMatrix) -> GraphBatch:
    """Scale features by the keep indicator and cut arcs touching dropped nodes.

    Dropped nodes stay in place as isolated zero rows so shapes and the
    node-to-graph vector are unchanged.
    """
    if choices.num_nodes != batch.num_nodes:
        raise ValueError(f"choice matrix has {choices.num_nodes} rows, batch has {batch.num_nodes} nodes")
    keep = choices.straight[:, KEEP : KEEP + 1]
    x = as_tensor(batch.x) * keep
    dropped = choices.hard[:, DROP] > 0
    src, dst = batch.edge_index
    mask = kernels.keep_arcs(src, dst, dropped)
    return batch.replace(x=x, edge_index=batch.edge_index[:, mask])


class ViewGenerator:
    def __init__(self, in_dim: int, hidden: int, layers: int, rng, prefix: str = "gen"):
        self.params = ModelParams()
        self.gin = GINStack(self.params, prefix, in_dim, hidden, layers, rng, out_dim=len(CHOICES),
                            final_activation=False)
        self.prefix = prefix

    def node_aug_logits(self, batch: GraphBatch) -> Tensor:
        return self.gin(batch.x, batch.edge_index)

    def generate_view(self, batch: GraphBatch, tau_g: float, rng, frozen: bool = False):
        """Returns ``(view, choices)``; with ``frozen`` no tape is recorded for the generator."""
        if frozen:
            with no_grad():
                choices = gumbel_softmax(self.node_aug_logits(batch), tau_g, rng)
        else:
            choices = gumbel_softmax(self.node_aug_logits(batch), tau_g, rng)
        return apply_augmentation(batch, choices), choices

    def make_neutral(self) -> None:
        """Zero the logit layer so every node starts from a uniform choice distribution."""
        last = self.gin.mlps[-1].l2
        last.w.data = np.zeros_like(last.w.data)
        last.b.data = np.zeros_like(last.b.data)

    def make_identity(self, margin: float = 50.0) -> None:
        """Zero the final layer and bias it toward KEEP so every node is kept."""
        last = self.gin.mlps[-1].l2
        last.w.data = np.zeros_like(last.w.data)
        b = np.full_like(last.b.data, -margin)
        b[0, KEEP] = margin
        last.b.data = b


def generate_view(batch: GraphBatch, generator: ViewGenerator, tau_g: float, rng):
    return generator.generate_view(batch, tau_g, rng)
