"""Contrastive, view-similarity and classification objectives."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .generator import AugChoiceMatrix
from .tensor import Tensor, concat, cosine_rows, cross_entropy, index_rows, log_softmax, matmul, normalize_rows, pick


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.5
    lam: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"contrastive temperature must be positive, got {self.tau}")
        if self.lam < 0:
            raise ValueError(f"similarity weight must be non-negative, got {self.lam}")


def nt_xent(z: Tensor, tau: float = 0.5) -> Tensor:
    """NT-Xent over 2N rows where rows (2k, 2k+1) form the positive pairs.

    Every other row in the batch is a negative; only the anchor itself is
    left out of the normalizer.
    """
    n2 = z.shape[0]
    if n2 % 2 or n2 == 0:
        raise ValueError(f"nt_xent needs an even, non-zero number of rows, got {n2}")
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    zn = normalize_rows(z)
    sim = matmul(zn, zn.T) * (1.0 / tau)
    logp = log_softmax(sim, exclude=np.eye(n2, dtype=bool))
    partner = np.arange(n2) ^ 1
    return -pick(logp, partner).mean()


def interleave(z1: Tensor, z2: Tensor) -> Tensor:
    """Rows z1[0], z2[0], z1[1], z2[1], ..."""
    if z1.shape != z2.shape:
        raise ValueError(f"views have different shapes {z1.shape} and {z2.shape}")
    n = z1.shape[0]
    order = np.empty(2 * n, dtype=np.int64)
    order[0::2] = np.arange(n)
    order[1::2] = np.arange(n) + n
    return index_rows(concat([z1, z2]), order)


def contrastive_loss(z1: Tensor, z2: Tensor, tau: float = 0.5) -> Tensor:
    return nt_xent(interleave(z1, z2), tau)


def similarity_loss(a1: AugChoiceMatrix, a2: AugChoiceMatrix) -> Tensor:
    """Cosine similarity of the two flattened soft choice matrices."""
    p1, p2 = a1.probs, a2.probs
    if p1.shape != p2.shape:
        raise ValueError(f"choice matrices differ in shape: {p1.shape} vs {p2.shape}")
    return cosine_rows(p1.reshape(1, -1), p2.reshape(1, -1)).sum()


def classification_loss(logits_x: Tensor, logits_x1: Tensor, logits_x2: Tensor, labels) -> Tensor:
    if not (logits_x.shape[0] == logits_x1.shape[0] == logits_x2.shape[0] == len(labels)):
        raise ValueError("classification_loss: inconsistent batch sizes")
    return cross_entropy(logits_x, labels) + cross_entropy(logits_x1, labels) + cross_entropy(logits_x2, labels)
