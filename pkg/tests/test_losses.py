import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gclviews.generator import gumbel_softmax
from gclviews.losses import LossConfig, classification_loss, contrastive_loss, interleave, nt_xent, similarity_loss
from gclviews.tensor import Parameter, Tensor, backward, cross_entropy


def ntxent_oracle(z, tau):
    """Direct double loop over anchors and candidates."""
    n2 = len(z)
    zn = [[v / math.sqrt(sum(u * u for u in r)) for v in r] for r in z]

    def sim(i, j):
        return sum(a * b for a, b in zip(zn[i], zn[j]))

    total = 0.0
    for i in range(n2):
        j = i + 1 if i % 2 == 0 else i - 1
        denom = sum(math.exp(sim(i, k) / tau) for k in range(n2) if k != i)
        total += -math.log(math.exp(sim(i, j) / tau) / denom)
    return total / n2


def choice(probs):
    """AugChoiceMatrix whose probs are exactly ``probs`` (log-probs as logits)."""
    with np.errstate(divide="ignore"):
        logits = np.log(np.asarray(probs, dtype=float))
    logits = np.where(np.isfinite(logits), logits, -1e3)
    return gumbel_softmax(Tensor(logits), 1.0, noise=np.zeros(logits.shape))


def test_single_pair_is_zero():
    z = Tensor(np.random.default_rng(0).normal(size=(2, 5)))
    assert nt_xent(z, 0.5).item() == 0.0


def test_two_pairs_one_hot_value():
    z = Tensor([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    expected = math.log(2 * math.exp(-1) + 1)
    assert nt_xent(z, 1.0).item() == pytest.approx(expected, abs=1e-12)
    assert nt_xent(z, 1.0).item() == pytest.approx(ntxent_oracle(z.data.tolist(), 1.0), abs=1e-12)


@given(st.integers(0, 2**31), st.integers(1, 16), st.floats(0.1, 2.0))
def test_matches_double_loop(seed, n, tau):
    z = np.random.default_rng(seed).normal(size=(2 * n, 6))
    assert abs(nt_xent(Tensor(z), tau).item() - ntxent_oracle(z.tolist(), tau)) < 1e-9


def test_errors():
    with pytest.raises(ValueError):
        nt_xent(Tensor(np.ones((3, 2))), 0.5)
    with pytest.raises(ValueError):
        nt_xent(Tensor(np.ones((2, 2))), 0.0)
    with pytest.raises(ValueError, match="zero-norm"):
        nt_xent(Tensor([[1.0, 0.0], [0.0, 0.0]]), 0.5)
    with pytest.raises(ValueError):
        LossConfig(tau=0)
    with pytest.raises(ValueError):
        LossConfig(lam=-1)


@given(st.integers(0, 2**31), st.integers(1, 8))
def test_swap_within_pair_invariant(seed, n):
    r = np.random.default_rng(seed)
    z = r.normal(size=(2 * n, 4))
    k = int(r.integers(0, n))
    z2 = z.copy()
    z2[[2 * k, 2 * k + 1]] = z2[[2 * k + 1, 2 * k]]
    assert nt_xent(Tensor(z), 0.5).item() == pytest.approx(nt_xent(Tensor(z2), 0.5).item(), abs=1e-12)


def test_monotone_in_positive_similarity():
    neg = [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    losses = []
    for angle in (1.2, 0.8, 0.4, 0.1):
        z = [[1.0, 0.0, 0.0], [math.cos(angle), math.sin(angle) * 0.5, math.sin(angle) * 0.5]] + neg
        losses.append(nt_xent(Tensor(z), 0.5).item())
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_interleave_order():
    z1, z2 = Tensor([[1.0], [2.0]]), Tensor([[10.0], [20.0]])
    assert interleave(z1, z2).data.ravel().tolist() == [1, 10, 2, 20]
    assert contrastive_loss(Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]])).item() == 0.0
    with pytest.raises(ValueError):
        interleave(z1, Tensor([[1.0]]))


def test_similarity_examples():
    same = choice([[0.2, 0.5, 0.3], [0.6, 0.2, 0.2]])
    assert similarity_loss(same, same).item() == pytest.approx(1.0, abs=1e-10)
    a = choice([[1, 0, 0]] * 4)
    b = choice([[0, 1, 0]] * 4)
    assert similarity_loss(a, b).item() == pytest.approx(0.0, abs=1e-9)
    u = choice([[1 / 3] * 3] * 5)
    assert similarity_loss(u, u).item() == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ValueError):
        similarity_loss(u, choice([[1 / 3] * 3] * 4))


@given(st.integers(0, 2**31), st.integers(1, 10))
def test_similarity_bounded_symmetric(seed, n):
    r = np.random.default_rng(seed)
    a = gumbel_softmax(Tensor(r.normal(size=(n, 3))), 1.0, r)
    b = gumbel_softmax(Tensor(r.normal(size=(n, 3))), 1.0, r)
    s = similarity_loss(a, b).item()
    assert 0.0 <= s <= 1.0 + 1e-12
    assert s == pytest.approx(similarity_loss(b, a).item(), abs=1e-12)


def test_classification_examples():
    u = Tensor(np.zeros((4, 2)))
    y = [0, 1, 1, 0]
    assert classification_loss(u, u, u, y).item() == pytest.approx(3 * math.log(2), abs=1e-12)
    big = Tensor(np.array([[50.0, -50.0], [-50.0, 50.0]]))
    assert classification_loss(big, big, big, [0, 1]).item() < 1e-30
    with pytest.raises(ValueError):
        classification_loss(u, u, Tensor(np.zeros((3, 2))), y)
    with pytest.raises(ValueError):
        classification_loss(u, u, u, [0, 1, 2, 0])


def test_classification_is_three_cross_entropies(rng):
    a, b, c = (Tensor(rng.normal(size=(6, 3))) for _ in range(3))
    y = rng.integers(0, 3, size=6)
    ref = cross_entropy(a, y).item() + cross_entropy(b, y).item() + cross_entropy(c, y).item()
    assert abs(classification_loss(a, b, c, y).item() - ref) < 1e-12


def test_losses_give_finite_gradients(rng):
    z = Parameter(rng.normal(size=(8, 4)))
    l1, l2 = Parameter(rng.normal(size=(5, 3))), Parameter(rng.normal(size=(5, 3)))
    lg = Parameter(rng.normal(size=(5, 2)))
    loss = nt_xent(z, 0.5) + similarity_loss(gumbel_softmax(l1, 1.0, rng), gumbel_softmax(l2, 1.0, rng)) \
        + classification_loss(lg, lg, lg, rng.integers(0, 2, size=5))
    backward(loss)
    for p in (z, l1, l2, lg):
        assert np.all(np.isfinite(p.grad)) and np.any(p.grad != 0)
