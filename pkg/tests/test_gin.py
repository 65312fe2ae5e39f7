import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gclviews.gin import GINEncoder, GINStack, Linear, MLP, gin_layer, readout
from gclviews.graph import DataError, Graph, batch_graphs, canonical_edges
from gclviews.losses import nt_xent
from gclviews.tensor import ModelParams, Parameter, Tensor, backward, gradcheck, no_grad

from conftest import random_graph


class Identity:
    def __call__(self, x):
        return x


def permute_graph(g: Graph, perm: np.ndarray) -> Graph:
    """Relabel node v as perm[v]."""
    inv = np.argsort(perm)
    return Graph(g.x[inv], perm[g.edge_index], g.y)


def test_isolated_node_identity_mlp():
    h = Tensor([[1.5, -2.0]])
    assert gin_layer(h, np.zeros((2, 0), np.int64), 0.0, Identity()).data.tolist() == [[1.5, -2.0]]


def test_two_nodes_hand_sum():
    out = gin_layer(Tensor([[1.0], [2.0]]), np.array([[0, 1], [1, 0]]), 0.0, Identity())
    assert out.data.tolist() == [[3.0], [3.0]]


def test_width_mismatch(rng):
    params = ModelParams()
    mlp = MLP(params, "m", (3, 4, 4), rng)
    with pytest.raises(ValueError, match="width"):
        gin_layer(Tensor(np.ones((2, 5))), np.zeros((2, 0), np.int64), 0.0, mlp)
    lin = Linear(params, "l", 3, 2, rng)
    with pytest.raises(ValueError):
        lin(Tensor(np.ones((1, 4))))


def test_gin_layer_equivariance(rng):
    g = random_graph(rng, 8, feat=3)
    params = ModelParams()
    mlp = MLP(params, "m", (3, 5, 5), rng)
    perm = rng.permutation(8)
    pg = permute_graph(g, perm)
    out = gin_layer(Tensor(g.x), g.edge_index, 0.3, mlp).data
    pout = gin_layer(Tensor(pg.x), pg.edge_index, 0.3, mlp).data
    assert np.allclose(pout[perm], out, atol=1e-12)


@given(st.integers(0, 2**31))
def test_encoder_permutation_invariance(seed):
    r = np.random.default_rng(seed)
    enc = GINEncoder(4, 8, 3, 2, r)
    g = random_graph(r, int(r.integers(2, 12)), feat=4)
    base = enc.encode(batch_graphs([g]))[1].data
    for _ in range(5):
        pg = permute_graph(g, r.permutation(g.num_nodes))
        assert np.allclose(enc.encode(batch_graphs([pg]))[1].data, base, rtol=0, atol=1e-9)


def test_identical_graphs_identical_rows(rng):
    enc = GINEncoder(4, 8, 2, 2, rng)
    g = random_graph(rng, 6, feat=4)
    emb = enc.encode(batch_graphs([g, g, g]))[1].data
    assert np.array_equal(emb[0], emb[1]) and np.array_equal(emb[1], emb[2])


def test_zero_features_zero_bias_gives_zero(rng):
    enc = GINEncoder(4, 8, 3, 2, rng)
    for p in enc.body:
        if p.name.endswith(".b"):
            p.data = np.zeros_like(p.data)
    g = Graph(np.zeros((5, 4)), canonical_edges([[0, 1, 2], [1, 2, 3]], 5))
    assert np.all(enc.encode(batch_graphs([g]))[1].data == 0.0)


def test_readout_additivity(rng):
    enc = GINEncoder(3, 6, 3, 2, rng)
    a, b = random_graph(rng, 4, feat=3), random_graph(rng, 5, feat=3)
    union = batch_graphs([a, b])
    merged = Graph(union.x, union.edge_index)
    ea = enc.encode(batch_graphs([a]))[1].data
    eb = enc.encode(batch_graphs([b]))[1].data
    assert np.allclose(enc.encode(batch_graphs([merged]))[1].data, ea + eb, atol=1e-10)


def test_mean_readout(rng):
    x = Tensor(rng.normal(size=(5, 2)))
    b = batch_graphs([random_graph(rng, 2, feat=1), random_graph(rng, 3, feat=1)])
    m = readout(x, b, "mean").data
    assert np.allclose(m[0], x.data[:2].mean(axis=0)) and np.allclose(m[1], x.data[2:].mean(axis=0))
    with pytest.raises(ValueError):
        readout(x, b, "max")


def test_heads_shapes_and_zero(rng):
    enc = GINEncoder(4, 8, 2, 3, rng)
    b = batch_graphs([random_graph(rng, 4, feat=4) for _ in range(5)])
    _, g = enc.encode(b)
    assert enc.classify(g).shape == (5, 3)
    assert enc.project(g).shape == (5, 8)
    for p in list(enc.head) + list(enc.cls_params):
        p.data = np.zeros_like(p.data)
    assert np.all(enc.classify(g).data == 0) and np.all(enc.project(g).data == 0)


def test_empty_batch_error(rng):
    enc = GINEncoder(4, 8, 2, 3, rng)
    b = batch_graphs([random_graph(rng, 2, feat=4)]).replace(sizes=np.zeros(0, np.int64))
    with pytest.raises(DataError):
        enc.encode(b)


def test_parameter_names_unique_and_eps_zero(rng):
    enc = GINEncoder(4, 8, 3, 2, rng)
    names = enc.params.names()
    assert len(names) == len(set(names))
    assert "encoder.layer0.mlp.l1.w" in names
    eps = [p for p in enc.body if p.name.endswith(".eps")]
    assert len(eps) == 3 and all(p.data.item() == 0.0 for p in eps)


def test_every_encoder_param_gets_gradient(rng):
    enc = GINEncoder(4, 8, 3, 2, rng)
    b = batch_graphs([random_graph(rng, 6, p=0.5, feat=4) for _ in range(4)])
    _, g = enc.encode(b)
    loss = nt_xent(enc.project(g), 0.5) + enc.classify(g).sum()
    backward(loss)
    for p in enc.params:
        assert p.grad is not None and np.linalg.norm(p.grad) > 1e-12, p.name


def test_ntxent_through_projection_gradcheck(rng):
    enc = GINEncoder(3, 4, 1, 2, rng)
    b = batch_graphs([random_graph(rng, 4, p=0.6, feat=3) for _ in range(4)])
    _, g = enc.encode(b)
    gd = Parameter(g.data)
    ok, worst = gradcheck(lambda: nt_xent(enc.project(gd), 0.5), [gd, *enc.head])
    assert ok, worst


def test_stack_needs_a_layer(rng):
    with pytest.raises(ValueError):
        GINStack(ModelParams(), "s", 3, 4, 0, rng)
