"""Training strategies (naive / joint and their variants) and evaluation protocols."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .augment import augment_graphs
from .config import ExperimentConfig
from .generator import ViewGenerator
from .gin import GINEncoder, Linear
from .graph import Graph, GraphBatch, batch_graphs, iter_batches, make_split, num_classes
from .losses import LossConfig, classification_loss, contrastive_loss, similarity_loss
from .tensor import Adam, ModelParams, Tensor, backward, cross_entropy, no_grad, save_checkpoint

log = logging.getLogger(__name__)

# unordered pairs drawn from (x, x1, x2)
VIEW_PAIRS = ((0, 1), (0, 2), (1, 2))

# strategy -> (contrastive phase, similarity loss) for the joint family
JOINT_VARIANTS = {
    "joint_cls": (False, False),
    "joint_cls_sim": (False, True),
    "joint_cl_cls": (True, False),
    "joint_cl_cls_sim": (True, True),
    "joint": (True, True),
}

RUN_NOTES = {
    "backbone": "GIN encoder and classifier (ResGCN not implemented)",
    "splits": "uniform random k-fold, not class-stratified",
    "unsup_probe": "L2-regularized linear softmax probe trained with Adam (replaces SVM)",
    "subgraph_ratio": "subgraph keeps ceil((1 - ratio) * N) nodes",
    "sim_loss_input": "soft choice probabilities",
    "generator_init": "gen_init=neutral zeroes each generator's logit layer (uniform start)",
}


@dataclass
class Model:
    encoder: GINEncoder
    gen1: ViewGenerator
    gen2: ViewGenerator
    arch: dict

    def params(self) -> ModelParams:
        out = ModelParams()
        out.update(self.encoder.params)
        out.update(self.gen1.params)
        out.update(self.gen2.params)
        return out


def build_model(in_dim: int, n_classes: int, cfg: ExperimentConfig, seed: int) -> Model:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    arch = {
        "in_dim": in_dim,
        "num_classes": n_classes,
        "hidden": cfg.hidden,
        "layers": cfg.layers,
        "gen_hidden": cfg.gen_hidden,
        "gen_layers": cfg.gen_layers,
        "readout": cfg.readout,
        "gen_init": cfg.gen_init,
    }
    return model_from_arch(arch, rng)


def model_from_arch(arch: dict, rng) -> Model:
    enc = GINEncoder(arch["in_dim"], arch["hidden"], arch["layers"], arch["num_classes"], rng, arch["readout"])
    g1 = ViewGenerator(arch["in_dim"], arch["gen_hidden"], arch["gen_layers"], rng, prefix="gen1")
    g2 = ViewGenerator(arch["in_dim"], arch["gen_hidden"], arch["gen_layers"], rng, prefix="gen2")
    if arch.get("gen_init", "random") == "neutral":
        g1.make_neutral()
        g2.make_neutral()
    return Model(enc, g1, g2, dict(arch))


class TrainState:
    """Model, per-group optimizers, RNG streams and the metric history of one run."""

    STREAMS = ("batch", "gen1", "gen2", "pair", "aug")

    def __init__(self, model: Model, cfg: ExperimentConfig, seed: int = 0):
        self.model = model
        self.cfg = cfg
        self.seed = seed
        self.loss_cfg = LossConfig(cfg.tau, cfg.lam)
        children = np.random.SeedSequence([seed, 1]).spawn(len(self.STREAMS))
        self.rngs = {name: np.random.default_rng(s) for name, s in zip(self.STREAMS, children)}
        enc = model.encoder
        self.groups: dict[str, list] = {
            "encoder": list(enc.body) + list(enc.head),
            "classifier": list(enc.cls_params),
            "gen1": list(model.gen1.params),
            "gen2": list(model.gen2.params),
        }
        self.optimizers: dict[str, Adam] = {}
        self.epoch = 0
        self.history: list[dict] = []
        self.reset_optimizers()

    def reset_optimizers(self, names: Sequence[str] | None = None) -> None:
        for name in names or self.groups:
            self.optimizers[name] = Adam(self.groups[name], lr=self.cfg.lr)

    def step(self, names: Sequence[str]) -> None:
        """Adam-update the named groups that received a gradient, then clear all grads."""
        for name in names:
            if any(p.grad is not None for p in self.groups[name]):
                self.optimizers[name].step()
        for group in self.groups.values():
            for p in group:
                p.grad = None

    def group_checksum(self, name: str) -> str:
        reg = ModelParams()
        for p in self.groups[name]:
            reg._params[p.name] = p
        return reg.checksum()

    def record(self, **fields) -> dict:
        self.epoch += 1
        rec = {"type": "epoch", "seed": self.seed, **fields}
        self.history.append(rec)
        return rec


# ---------------------------------------------------------------------------
# per-batch steps


def _contrast_embed(model: Model, batch: GraphBatch, use_projection: bool) -> Tensor:
    _, g = model.encoder.encode(batch)
    return model.encoder.project(g) if use_projection else g


def contrastive_step(state: TrainState, batch: GraphBatch, train_generators: bool) -> float:
    """One NT-Xent update on a pair sampled from (x, G1(x), G2(x))."""
    m, cfg = state.model, state.cfg
    frozen = not train_generators
    x1, _ = m.gen1.generate_view(batch, cfg.tau_g, state.rngs["gen1"], frozen=frozen)
    x2, _ = m.gen2.generate_view(batch, cfg.tau_g, state.rngs["gen2"], frozen=frozen)
    a, b = VIEW_PAIRS[int(state.rngs["pair"].integers(len(VIEW_PAIRS)))]
    views = (batch, x1, x2)
    za = _contrast_embed(m, views[a], cfg.use_projection)
    zb = _contrast_embed(m, views[b], cfg.use_projection)
    loss = contrastive_loss(za, zb, cfg.tau)
    backward(loss)
    state.step(["encoder", "gen1", "gen2"] if train_generators else ["encoder"])
    return loss.item()


def supervised_step(state: TrainState, batch: GraphBatch) -> float:
    enc = state.model.encoder
    loss = cross_entropy(enc.classify(enc.encode(batch)[1]), batch.y)
    backward(loss)
    state.step(["encoder", "classifier"])
    return loss.item()


def labeled_view_step(state: TrainState, batch: GraphBatch, use_sim: bool, train_generators: bool = True):
    """Classification on (x, G1(x), G2(x)) plus the weighted choice-similarity term."""
    m, cfg = state.model, state.cfg
    frozen = not train_generators
    x1, c1 = m.gen1.generate_view(batch, cfg.tau_g, state.rngs["gen1"], frozen=frozen)
    x2, c2 = m.gen2.generate_view(batch, cfg.tau_g, state.rngs["gen2"], frozen=frozen)
    enc = m.encoder
    logits = [enc.classify(enc.encode(v)[1]) for v in (batch, x1, x2)]
    l_cls = classification_loss(*logits, batch.y)
    loss = l_cls
    l_sim = None
    if use_sim:
        l_sim = similarity_loss(c1, c2)
        loss = l_cls + state.loss_cfg.lam * l_sim
    backward(loss)
    groups = ["encoder", "classifier"] + (["gen1", "gen2"] if train_generators else [])
    state.step(groups)
    return l_cls.item(), (l_sim.item() if l_sim is not None else None)


def fixed_aug_supervised_step(state: TrainState, graphs: Sequence[Graph], kind: str, ratio: float) -> float:
    """Cross-entropy averaged over the originals and one augmented copy of each."""
    views = augment_graphs(graphs, kind, ratio, state.rngs["aug"])
    batch = batch_graphs(list(graphs) + views)
    return supervised_step(state, batch)


def fixed_aug_contrastive_step(state: TrainState, graphs: Sequence[Graph], kind: str, ratio: float) -> float:
    v1 = batch_graphs(augment_graphs(graphs, kind, ratio, state.rngs["aug"]))
    v2 = batch_graphs(augment_graphs(graphs, kind, ratio, state.rngs["aug"]))
    cfg = state.cfg
    loss = contrastive_loss(_contrast_embed(state.model, v1, cfg.use_projection),
                            _contrast_embed(state.model, v2, cfg.use_projection), cfg.tau)
    backward(loss)
    state.step(["encoder"])
    return loss.item()


# ---------------------------------------------------------------------------
# evaluation


def predict(model: Model, graphs: Sequence[Graph], batch_size: int = 256) -> np.ndarray:
    out = []
    with no_grad():
        for b in iter_batches(graphs, batch_size):
            out.append(model.encoder.classify(model.encoder.encode(b)[1]).data.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(model: Model, graphs: Sequence[Graph]) -> float:
    if not graphs:
        return float("nan")
    y = np.array([g.y for g in graphs])
    return float(np.mean(predict(model, graphs) == y))


def view_accuracy(model: Model, graphs: Sequence[Graph], tau_g: float, rng, batch_size: int = 256) -> float:
    """Classifier accuracy on views drawn from both generators (averaged)."""
    hits, total = 0, 0
    with no_grad():
        for b in iter_batches(graphs, batch_size):
            for gen in (model.gen1, model.gen2):
                view, _ = gen.generate_view(b, tau_g, rng, frozen=True)
                pred = model.encoder.classify(model.encoder.encode(view)[1]).data.argmax(axis=1)
                hits += int(np.sum(pred == b.y))
                total += len(b.y)
    return hits / total


def embed_graphs(model: Model, graphs: Sequence[Graph], batch_size: int = 256) -> np.ndarray:
    out = []
    with no_grad():
        for b in iter_batches(graphs, batch_size):
            out.append(model.encoder.encode(b)[1].data)
    return np.concatenate(out, axis=0)


def _mean(xs) -> float | None:
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


Evaluator = Callable[[TrainState], dict]


# ---------------------------------------------------------------------------
# strategies


def naive_pretrain(state: TrainState, unlabeled: Sequence[Graph], epochs: int | None = None,
                   evaluate: Evaluator | None = None) -> TrainState:
    """Contrastive pre-training of both generators and the encoder (no labels)."""
    if not unlabeled:
        raise ValueError("naive_pretrain needs unlabeled graphs")
    epochs = state.cfg.epochs if epochs is None else epochs
    for ep in range(1, epochs + 1):
        losses = [contrastive_step(state, b, train_generators=True)
                  for b in iter_batches(unlabeled, state.cfg.batch_size, state.rngs["batch"])]
        state.record(phase="pretrain", epoch=ep, l_cl=_mean(losses), **(evaluate(state) if evaluate else {}))
    return state


def naive_finetune(state: TrainState, labeled: Sequence[Graph], epochs: int | None = None,
                   evaluate: Evaluator | None = None, phase: str = "finetune") -> TrainState:
    """Supervised training of encoder + classifier on original graphs; generators untouched."""
    if not labeled or any(g.y is None for g in labeled):
        raise ValueError("naive_finetune needs labeled graphs")
    epochs = state.cfg.epochs if epochs is None else epochs
    state.reset_optimizers(["encoder", "classifier"])
    for ep in range(1, epochs + 1):
        losses = [supervised_step(state, b)
                  for b in iter_batches(labeled, state.cfg.batch_size, state.rngs["batch"])]
        state.record(phase=phase, epoch=ep, l_cls=_mean(losses), **(evaluate(state) if evaluate else {}))
    return state


def joint_train(state: TrainState, unlabeled: Sequence[Graph], labeled: Sequence[Graph],
                epochs: int | None = None, use_cl: bool = True, use_sim: bool = True,
                evaluate: Evaluator | None = None, phase: str = "joint") -> TrainState:
    """Alternate a contrastive pass (generators frozen) with a labeled pass that trains everything."""
    if not labeled:
        raise ValueError("joint_train needs labeled graphs")
    if use_cl and not unlabeled:
        raise ValueError("joint_train needs unlabeled graphs for the contrastive phase")
    epochs = state.cfg.epochs if epochs is None else epochs
    bs = state.cfg.batch_size
    for ep in range(1, epochs + 1):
        l_cl = None
        if use_cl:
            l_cl = _mean([contrastive_step(state, b, train_generators=False)
                          for b in iter_batches(unlabeled, bs, state.rngs["batch"])])
        cls_sim = [labeled_view_step(state, b, use_sim)
                   for b in iter_batches(labeled, bs, state.rngs["batch"])]
        state.record(phase=phase, epoch=ep, l_cl=l_cl, l_cls=_mean(c for c, _ in cls_sim),
                     l_sim=_mean(s for _, s in cls_sim), **(evaluate(state) if evaluate else {}))
    return state


def aug_only_train(state: TrainState, labeled: Sequence[Graph], epochs: int | None = None,
                   evaluate: Evaluator | None = None) -> TrainState:
    """Supervised training with views from the (frozen) generators as extra samples."""
    epochs = state.cfg.epochs if epochs is None else epochs
    for ep in range(1, epochs + 1):
        out = [labeled_view_step(state, b, use_sim=False, train_generators=False)
               for b in iter_batches(labeled, state.cfg.batch_size, state.rngs["batch"])]
        state.record(phase="aug_only", epoch=ep, l_cls=_mean(c for c, _ in out), **(evaluate(state) if evaluate else {}))
    return state


def fixed_aug_train(state: TrainState, labeled: Sequence[Graph], kind: str, ratio: float,
                    epochs: int | None = None, evaluate: Evaluator | None = None) -> TrainState:
    epochs = state.cfg.epochs if epochs is None else epochs
    bs = state.cfg.batch_size
    for ep in range(1, epochs + 1):
        order = state.rngs["batch"].permutation(len(labeled))
        losses = [fixed_aug_supervised_step(state, [labeled[i] for i in order[s : s + bs]], kind, ratio)
                  for s in range(0, len(labeled), bs)]
        state.record(phase=f"aug:{kind}:{ratio}", epoch=ep, l_cls=_mean(losses), **(evaluate(state) if evaluate else {}))
    return state


def fixed_aug_pretrain(state: TrainState, unlabeled: Sequence[Graph], kind: str, ratio: float,
                       epochs: int | None = None) -> TrainState:
    epochs = state.cfg.epochs if epochs is None else epochs
    bs = state.cfg.batch_size
    for ep in range(1, epochs + 1):
        order = state.rngs["batch"].permutation(len(unlabeled))
        losses = [fixed_aug_contrastive_step(state, [unlabeled[i] for i in order[s : s + bs]], kind, ratio)
                  for s in range(0, len(unlabeled), bs)]
        state.record(phase="pretrain", epoch=ep, l_cl=_mean(losses))
    return state


# ---------------------------------------------------------------------------
# protocols


@dataclass
class RunResult:
    fold: int
    seed: int
    metrics: dict
    history: list = field(default_factory=list)
    checkpoint: str | None = None


def _subset(graphs, idx):
    return [graphs[i] for i in idx]


def _save_run_checkpoint(state: TrainState, out_dir, tag: str, extra: dict) -> str | None:
    if not out_dir or not state.cfg.save_checkpoints:
        return None
    path = Path(out_dir) / f"model_{tag}.ckpt"
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"config": state.cfg.to_dict(), "arch": state.model.arch, "seed": state.seed, **extra}
    save_checkpoint(path, state.model.params(), meta)
    return str(path)


def run_semi_fold(graphs: Sequence[Graph], cfg: ExperimentConfig, strategy: str, fold_id: int, seed: int,
                  out_dir=None, aug: tuple[str, float] | None = None) -> RunResult:
    """Train one (fold, seed) cell of the semi-supervised protocol and score it."""
    plan = make_split(len(graphs), "semi", cfg.split_seed, cfg.folds)
    fold = plan.folds[fold_id]
    unl, lab, test = _subset(graphs, fold.unlabeled), _subset(graphs, fold.labeled_train), _subset(graphs, fold.test)
    model = build_model(graphs[0].num_features, num_classes(graphs), cfg, seed)
    state = TrainState(model, cfg, seed)

    def evaluate(st: TrainState) -> dict:
        return {"train_acc": accuracy(st.model, lab), "test_acc": accuracy(st.model, test)}

    gen_ckpt = {"gen1": state.group_checksum("gen1"), "gen2": state.group_checksum("gen2")}
    if strategy == "supervised":
        naive_finetune(state, lab, evaluate=evaluate, phase="supervised")
    elif strategy == "aug_only":
        aug_only_train(state, lab, evaluate=evaluate)
    elif strategy == "naive":
        naive_pretrain(state, unl)
        naive_finetune(state, lab, evaluate=evaluate)
    elif strategy in JOINT_VARIANTS:
        use_cl, use_sim = JOINT_VARIANTS[strategy]
        joint_train(state, unl, lab, use_cl=use_cl, use_sim=use_sim, evaluate=evaluate)
    elif strategy == "graphcl_aug_only":
        fixed_aug_train(state, lab, "random4", cfg.aug_ratio, evaluate=evaluate)
    elif strategy == "graphcl":
        fixed_aug_pretrain(state, unl, "random4", cfg.aug_ratio)
        naive_finetune(state, lab, evaluate=evaluate)
    elif strategy == "fixed_aug":
        kind, ratio = aug
        fixed_aug_train(state, lab, kind, ratio, evaluate=evaluate)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")

    final = state.history[-1]
    metrics = {
        "train_acc": final["train_acc"],
        "test_acc": final["test_acc"],
        "gap": final["train_acc"] - final["test_acc"],
        "n_unlabeled": len(unl),
        "n_labeled": len(lab),
        "n_test": len(test),
        "generators_changed": {
            k: state.group_checksum(k) != v for k, v in gen_ckpt.items()
        },
    }
    if strategy in JOINT_VARIANTS or strategy in ("naive", "aug_only"):
        metrics["view_test_acc"] = view_accuracy(
            state.model, test, cfg.tau_g, np.random.default_rng(np.random.SeedSequence([seed, 2, fold_id]))
        )
    for rec in state.history:
        rec["fold"] = fold_id
    tag = f"{strategy}_f{fold_id}_s{seed}"
    ckpt = _save_run_checkpoint(state, out_dir, tag, {"fold": fold_id, "strategy": strategy, "protocol": "semi"})
    return RunResult(fold_id, seed, metrics, state.history, ckpt)


def linear_probe(train_x: np.ndarray, train_y: np.ndarray, test_x: np.ndarray, test_y: np.ndarray,
                 n_classes: int, epochs: int = 300, lr: float = 0.01, l2: float = 1e-3, seed: int = 0) -> dict:
    """Softmax regression on frozen embeddings (features standardized on the training split)."""
    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0) + 1e-8
    xtr = Tensor((train_x - mu) / sd)
    xte = (test_x - mu) / sd
    params = ModelParams()
    head = Linear(params, "probe", train_x.shape[1], n_classes, np.random.default_rng(seed))
    opt = Adam(list(params), lr=lr)
    for _ in range(epochs):
        loss = cross_entropy(head(xtr), train_y) + l2 * (head.w * head.w).sum()
        backward(loss)
        opt.step()
        opt.zero_grad()
    with no_grad():
        tr = float(np.mean(head(xtr).data.argmax(axis=1) == train_y))
        te = float(np.mean(head(Tensor(xte)).data.argmax(axis=1) == test_y))
    return {"train_acc": tr, "test_acc": te}


def run_unsup_fold(graphs: Sequence[Graph], cfg: ExperimentConfig, fold_id: int, seed: int,
                   out_dir=None, epochs: int | None = None) -> RunResult:
    """Contrastive pre-training on 90%, then a linear probe on frozen readouts."""
    plan = make_split(len(graphs), "unsup", cfg.split_seed, cfg.folds)
    fold = plan.folds[fold_id]
    unl, test = _subset(graphs, fold.unlabeled), _subset(graphs, fold.test)
    model = build_model(graphs[0].num_features, num_classes(graphs), cfg, seed)
    state = TrainState(model, cfg, seed)
    if (cfg.epochs if epochs is None else epochs) > 0:
        naive_pretrain(state, unl, epochs)
    before = state.group_checksum("encoder")
    tr_x, te_x = embed_graphs(model, unl), embed_graphs(model, test)
    probe = linear_probe(tr_x, np.array([g.y for g in unl]), te_x, np.array([g.y for g in test]),
                         num_classes(graphs), cfg.probe_epochs, cfg.probe_lr, cfg.probe_l2, seed)
    metrics = {**probe, "encoder_frozen": state.group_checksum("encoder") == before,
               "n_unlabeled": len(unl), "n_test": len(test)}
    for rec in state.history:
        rec["fold"] = fold_id
    ckpt = _save_run_checkpoint(state, out_dir, f"unsup_f{fold_id}_s{seed}",
                                {"fold": fold_id, "strategy": "naive", "protocol": "unsup"})
    return RunResult(fold_id, seed, metrics, state.history, ckpt)


def _call(job):
    fn, args, kwargs = job
    return fn(*args, **kwargs)


def run_jobs(jobs: list, n_jobs: int = 1) -> list:
    """Run ``(fn, args, kwargs)`` jobs serially or on a process pool, preserving order."""
    if n_jobs <= 1 or len(jobs) <= 1:
        return [_call(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_call, jobs))


def summarize(results: Sequence[RunResult], key: str = "test_acc") -> dict:
    vals = np.array([r.metrics[key] for r in results if r.metrics.get(key) is not None], dtype=float)
    if vals.size == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(vals.mean()), "std": float(vals.std()), "n": int(vals.size)}


def semi_supervised_protocol(graphs: Sequence[Graph], cfg: ExperimentConfig, strategy: str | None = None,
                             out_dir=None, folds: Sequence[int] | None = None, aug=None) -> dict:
    strategy = strategy or cfg.strategy
    fold_ids = list(range(cfg.folds)) if folds is None else list(folds)
    jobs = [(run_semi_fold, (graphs, cfg, strategy, f, s), {"out_dir": out_dir, "aug": aug})
            for s in cfg.seeds for f in fold_ids]
    runs = run_jobs(jobs, cfg.jobs)
    summary = {k: summarize(runs, k) for k in ("test_acc", "train_acc", "gap", "view_test_acc")}
    return {"protocol": "semi", "strategy": strategy, "runs": runs, "summary": summary}


def unsupervised_protocol(graphs: Sequence[Graph], cfg: ExperimentConfig, out_dir=None,
                          folds: Sequence[int] | None = None, epochs: int | None = None) -> dict:
    fold_ids = list(range(cfg.folds)) if folds is None else list(folds)
    jobs = [(run_unsup_fold, (graphs, cfg, f, s), {"out_dir": out_dir, "epochs": epochs})
            for s in cfg.seeds for f in fold_ids]
    runs = run_jobs(jobs, cfg.jobs)
    return {"protocol": "unsup", "strategy": "naive", "runs": runs,
            "summary": {k: summarize(runs, k) for k in ("test_acc", "train_acc")}}


def ablation_protocol(graphs: Sequence[Graph], cfg: ExperimentConfig, kinds=None, ratios=None,
                      folds: Sequence[int] | None = None) -> dict:
    """Aug-ratio sweep: supervised training on labeled graphs plus one fixed-augmented copy each."""
    kinds = list(kinds or cfg.ablation_kinds)
    ratios = list(cfg.ablation_ratios if ratios is None else ratios)
    base = semi_supervised_protocol(graphs, cfg, "supervised", folds=folds)
    cells = {}
    for kind in kinds:
        for r in ratios:
            res = semi_supervised_protocol(graphs, cfg, "fixed_aug", folds=folds, aug=(kind, r))
            cells[(kind, r)] = res["summary"]["test_acc"]
    return {"baseline": base["summary"]["test_acc"], "cells": cells, "kinds": kinds, "ratios": ratios}


def format_mean_std(s: dict) -> str:
    if s.get("mean") is None or (isinstance(s["mean"], float) and math.isnan(s["mean"])):
        return "-"
    return f"{100 * s['mean']:.2f} ± {100 * s['std']:.2f}"
