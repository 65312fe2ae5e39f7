"""Built-in correctness suites: finite-difference gradient checks and the sampler distribution check."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .generator import gumbel_softmax
from .gin import GINStack, MLP, gin_layer
from .graph import Graph, batch_graphs
from .losses import classification_loss, contrastive_loss, nt_xent, similarity_loss
from .tensor import Parameter, Tensor, gradcheck

TOL_REL = 1e-4
TOL_ABS = 1e-7


@dataclass
class CaseResult:
    name: str
    trials: int
    passed: int
    worst: float
    seconds: float

    @property
    def ok(self) -> bool:
        return self.passed == self.trials


def _p(rng, *shape, lo=-1.0, hi=1.0) -> Parameter:
    return Parameter(rng.uniform(lo, hi, size=shape))


def _away_from_zero(rng, *shape) -> Parameter:
    # keeps kinks (relu at 0) out of the finite-difference stencil
    mag = rng.uniform(0.1, 1.0, size=shape)
    return Parameter(mag * rng.choice([-1.0, 1.0], size=shape))


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return (out * Tensor(w)).sum()


def _random_graph(rng, n: int, p: float = 0.4, feat: int = 3) -> Graph:
    iu, ju = np.triu_indices(n, k=1)
    m = rng.random(iu.size) < p
    edges = np.stack([iu[m], ju[m]])
    return Graph(rng.normal(size=(n, feat)), edges)


# Each builder gets an rng and returns (closure, inputs).
Builder = Callable[[np.random.Generator], tuple]


def _unary_case(fn, positive=False, kink=False):
    def build(rng):
        if positive:
            x = _p(rng, 3, 4, lo=0.2, hi=2.0)
        elif kink:
            x = _away_from_zero(rng, 3, 4)
        else:
            x = _p(rng, 3, 4)
        w = rng.normal(size=(3, 4))
        return (lambda: _weighted(fn(x), w)), [x]

    return build


def _binary_case(fn, shapes=((3, 4), (3, 4)), b_positive=False):
    def build(rng):
        a = _p(rng, *shapes[0])
        b = _p(rng, *shapes[1], lo=0.5, hi=2.0) if b_positive else _p(rng, *shapes[1])
        out_shape = np.broadcast_shapes(shapes[0], shapes[1])
        w = rng.normal(size=out_shape)
        return (lambda: _weighted(fn(a, b), w)), [a, b]

    return build


def _case_matmul(rng):
    a, b = _p(rng, 3, 5), _p(rng, 5, 2)
    w = rng.normal(size=(3, 2))
    return (lambda: _weighted(T.matmul(a, b), w)), [a, b]


def _case_transpose_reshape(rng):
    a = _p(rng, 3, 4)
    w = rng.normal(size=(2, 6))
    return (lambda: _weighted(T.reshape(T.transpose(a), (2, 6)), w)), [a]


def _case_sum_mean(rng):
    a = _p(rng, 4, 3)
    w0, w1 = rng.normal(size=(1, 3)), rng.normal(size=(4, 1))
    return (lambda: _weighted(T.tensor_sum(a, axis=0, keepdims=True), w0)
            + _weighted(T.tensor_mean(a, axis=1, keepdims=True), w1)
            + T.tensor_mean(a) * 0.7), [a]


def _case_row_ops(rng):
    a = _p(rng, 4, 3)
    w = rng.normal(size=(4, 1))
    return (lambda: _weighted(T.row_sum(a), w) + _weighted(T.row_mean(a * a), w)), [a]


def _case_getitem(rng):
    a = _p(rng, 5, 4)
    w = rng.normal(size=(3, 2))
    return (lambda: _weighted(a[1:4, ::2], w)), [a]


def _case_concat(rng):
    a, b = _p(rng, 2, 3), _p(rng, 3, 3)
    w = rng.normal(size=(5, 3))
    return (lambda: _weighted(T.concat([a, b]), w)), [a, b]


def _case_index_rows(rng):
    a = _p(rng, 4, 3)
    idx = rng.integers(0, 4, size=7)  # repeats exercise accumulation
    w = rng.normal(size=(7, 3))
    return (lambda: _weighted(T.index_rows(a, idx), w)), [a]


def _case_scatter(rng):
    a = _p(rng, 7, 3)
    idx = rng.integers(0, 4, size=7)
    w = rng.normal(size=(4, 3))
    return (lambda: _weighted(T.scatter_sum(a, idx, 4), w)), [a]


def _case_neighbor_sum(rng):
    g = _random_graph(rng, 6)
    h = _p(rng, 6, 3)
    w = rng.normal(size=(6, 3))
    return (lambda: _weighted(T.neighbor_sum(h, g.edge_index[0], g.edge_index[1]), w)), [h]


def _case_segments(rng):
    a = _p(rng, 8, 3)
    seg = np.sort(rng.integers(0, 3, size=8))
    seg[:3] = [0, 1, 2]
    seg = np.sort(seg)
    w = rng.normal(size=(3, 3))
    return (lambda: _weighted(T.segment_sum(a, seg, 3), w) + _weighted(T.segment_mean(a, seg, 3), w)), [a]


def _case_softmax(rng):
    a = _p(rng, 4, 5, lo=-2, hi=2)
    w = rng.normal(size=(4, 5))
    return (lambda: _weighted(T.softmax_rows(a), w)), [a]


def _case_log_softmax(rng):
    a = _p(rng, 5, 5, lo=-2, hi=2)
    excl = np.eye(5, dtype=bool)
    w = rng.normal(size=(5, 5))
    off = (np.arange(5) + 1) % 5  # excluded entries are -inf, so only pick finite ones
    return (lambda: _weighted(T.log_softmax(a), w) + T.pick(T.log_softmax(a, exclude=excl), off).sum()), [a]


def _case_pick_ce(rng):
    a = _p(rng, 6, 3, lo=-2, hi=2)
    y = rng.integers(0, 3, size=6)
    return (lambda: T.cross_entropy(a, y) + T.pick(a, y).sum() * 0.3), [a]


def _case_norms(rng):
    a, b = _p(rng, 4, 3), _p(rng, 4, 3)
    w = rng.normal(size=(4, 3))
    w1 = rng.normal(size=(4, 1))
    return (lambda: _weighted(T.normalize_rows(a), w) + _weighted(T.row_norms(b), w1)
            + _weighted(T.cosine_rows(a, b), w1)), [a, b]


def _case_pow_tensor(rng):
    a = _p(rng, 3, 3, lo=0.5, hi=2.0)
    e = _p(rng, 3, 3, lo=-1.5, hi=2.0)
    w = rng.normal(size=(3, 3))
    return (lambda: _weighted(a ** e, w) + _weighted(a ** 2.5, w)), [a, e]


def _case_gin_layer(rng):
    g = _random_graph(rng, 6, feat=3)
    params = T.ModelParams()
    mlp = MLP(params, "m", (3, 4, 2), rng)
    eps = params.add("eps", rng.uniform(-0.5, 0.5, size=(1, 1)))
    h = Parameter(g.x.copy())
    w = rng.normal(size=(6, 2))
    return (lambda: _weighted(gin_layer(h, g.edge_index, eps, mlp), w)), [h, *params]


def _case_gin_stack_readout(rng):
    graphs = [_random_graph(rng, int(rng.integers(3, 6)), feat=3) for _ in range(3)]
    b = batch_graphs(graphs)
    params = T.ModelParams()
    stack = GINStack(params, "s", 3, 4, 2, rng)
    w = rng.normal(size=(3, 4))
    return (lambda: _weighted(T.segment_sum(stack(b.x, b.edge_index), b.batch, 3), w)), list(params)


def _case_generator_soft(rng):
    """Relaxed sample and probabilities from a GIN generator with the Gumbel noise fixed."""
    g = _random_graph(rng, 6, feat=3)
    params = T.ModelParams()
    stack = GINStack(params, "g", 3, 4, 2, rng, out_dim=3, final_activation=False)
    noise = rng.gumbel(size=(6, 3))
    tau_g = float(rng.uniform(0.5, 2.0))
    w = rng.normal(size=(6, 3))

    def fn():
        c = gumbel_softmax(stack(g.x, g.edge_index), tau_g, noise=noise)
        return _weighted(c.soft, w) + _weighted(c.probs, w[::-1].copy())

    return fn, list(params)


def _case_nt_xent(rng):
    n = int(rng.integers(2, 6))
    z = _p(rng, 2 * n, 4)
    tau = float(rng.uniform(0.2, 1.0))
    return (lambda: nt_xent(z, tau)), [z]


def _case_contrastive(rng):
    z1, z2 = _p(rng, 3, 4), _p(rng, 3, 4)
    return (lambda: contrastive_loss(z1, z2, 0.5)), [z1, z2]


def _case_similarity(rng):
    l1, l2 = _p(rng, 5, 3, lo=-2, hi=2), _p(rng, 5, 3, lo=-2, hi=2)
    n1, n2 = rng.gumbel(size=(5, 3)), rng.gumbel(size=(5, 3))
    return (lambda: similarity_loss(gumbel_softmax(l1, 1.0, noise=n1), gumbel_softmax(l2, 1.0, noise=n2))), [l1, l2]


def _case_classification(rng):
    a, b, c = (_p(rng, 5, 3, lo=-2, hi=2) for _ in range(3))
    y = rng.integers(0, 3, size=5)
    return (lambda: classification_loss(a, b, c, y)), [a, b, c]


GRADIENT_CASES: dict[str, Builder] = {
    "add": _binary_case(lambda a, b: a + b, ((3, 4), (1, 4))),
    "sub": _binary_case(lambda a, b: a - b, ((3, 4), (3, 1))),
    "mul": _binary_case(lambda a, b: a * b),
    "div": _binary_case(lambda a, b: a / b, b_positive=True),
    "neg": _unary_case(lambda x: -x),
    "exp": _unary_case(T.exp),
    "log": _unary_case(T.log, positive=True),
    "sqrt": _unary_case(lambda x: x.sqrt(), positive=True),
    "relu": _unary_case(T.relu, kink=True),
    "pow": _case_pow_tensor,
    "matmul": _case_matmul,
    "transpose_reshape": _case_transpose_reshape,
    "sum_mean": _case_sum_mean,
    "row_sum_mean": _case_row_ops,
    "getitem": _case_getitem,
    "concat": _case_concat,
    "index_rows": _case_index_rows,
    "scatter_sum": _case_scatter,
    "neighbor_sum": _case_neighbor_sum,
    "segment_sum_mean": _case_segments,
    "softmax_rows": _case_softmax,
    "log_softmax": _case_log_softmax,
    "pick_cross_entropy": _case_pick_ce,
    "norms_cosine": _case_norms,
    "gin_layer": _case_gin_layer,
    "gin_stack_readout": _case_gin_stack_readout,
    "generator_soft_path": _case_generator_soft,
    "nt_xent": _case_nt_xent,
    "contrastive_loss": _case_contrastive,
    "similarity_loss": _case_similarity,
    "classification_loss": _case_classification,
}


def gradient_suite(trials: int = 20, seed: int = 0, cases=None) -> list[CaseResult]:
    out = []
    for k, name in enumerate(cases or GRADIENT_CASES):
        build = GRADIENT_CASES[name]
        rng = np.random.default_rng([seed, k])
        t0 = time.perf_counter()
        passed, worst = 0, 0.0
        for _ in range(trials):
            fn, inputs = build(rng)
            ok, w = gradcheck(fn, inputs, h=1e-5, rtol=TOL_REL, atol=TOL_ABS)
            passed += ok
            worst = max(worst, w)
        out.append(CaseResult(name, trials, passed, worst, time.perf_counter() - t0))
    return out


@dataclass
class SamplerResult:
    logits: np.ndarray
    expected: np.ndarray
    observed: np.ndarray
    l1: float
    one_hot: bool

    @property
    def ok(self) -> bool:
        return self.one_hot and self.l1 < 0.03


def sampler_suite(n_vectors: int = 10, draws: int = 10_000, k: int = 3, tau_g: float = 0.5,
                  seed: int = 0) -> list[SamplerResult]:
    """Empirical hard-sample frequencies against softmax(logits), one vectorized draw per vector."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_vectors):
        logits = rng.normal(scale=1.5, size=k)
        tiled = np.tile(logits, (draws, 1))
        with T.no_grad():
            c = gumbel_softmax(Tensor(tiled), tau_g, rng)
        hard = c.hard
        one_hot = bool(np.all((hard == 0) | (hard == 1)) and np.all(hard.sum(axis=1) == 1))
        observed = hard.mean(axis=0)
        e = np.exp(logits - logits.max())
        expected = e / e.sum()
        out.append(SamplerResult(logits, expected, observed, float(np.abs(observed - expected).sum()), one_hot))
    return out


def run_selftest(trials: int = 20, seed: int = 0, log=print) -> bool:
    t0 = time.perf_counter()
    ok = True
    for r in gradient_suite(trials, seed):
        ok &= r.ok
        log(f"[{'ok' if r.ok else 'FAIL'}] grad {r.name:<22} {r.passed}/{r.trials} worst={r.worst:.3g}")
    for i, r in enumerate(sampler_suite(seed=seed)):
        ok &= r.ok
        log(f"[{'ok' if r.ok else 'FAIL'}] sampler vector {i} L1={r.l1:.4f} one_hot={r.one_hot}")
    log(f"selftest {'passed' if ok else 'FAILED'} in {time.perf_counter() - t0:.1f}s")
    return ok
