import dataclasses

import numpy as np
import pytest

from gclviews.config import ExperimentConfig
from gclviews.generator import KEEP
from gclviews.graph import batch_graphs, iter_batches, num_classes
from gclviews.training import (
    JOINT_VARIANTS,
    TrainState,
    VIEW_PAIRS,
    ablation_protocol,
    accuracy,
    aug_only_train,
    build_model,
    contrastive_step,
    joint_train,
    labeled_view_step,
    linear_probe,
    naive_finetune,
    naive_pretrain,
    run_jobs,
    run_semi_fold,
    run_unsup_fold,
    semi_supervised_protocol,
)

SMALL = ExperimentConfig(hidden=16, layers=2, gen_hidden=16, gen_layers=2, batch_size=8, epochs=3, folds=4)


def make_state(graphs, cfg=SMALL, seed=0):
    return TrainState(build_model(graphs[0].num_features, num_classes(graphs), cfg, seed), cfg, seed)


def test_two_generators_disjoint_namespaces(toy):
    st = make_state(toy)
    names = [p.name for group in st.groups.values() for p in group]
    assert len(names) == len(set(names))
    assert {n.split(".")[0] for n in names} >= {"encoder", "proj", "cls", "gen1", "gen2"}
    assert st.model.gen1 is not st.model.gen2
    assert len(VIEW_PAIRS) == 3 and all(a != b for a, b in VIEW_PAIRS)


def test_view_pair_sampling_uniform(toy):
    st = make_state(toy)
    draws = [int(st.rngs["pair"].integers(len(VIEW_PAIRS))) for _ in range(3000)]
    assert np.all(np.abs(np.bincount(draws, minlength=3) / 3000 - 1 / 3) < 0.03)


def test_naive_pretrain_updates_encoder_and_generators_not_classifier(toy):
    st = make_state(toy)
    before = {k: st.group_checksum(k) for k in st.groups}
    naive_pretrain(st, toy, epochs=1)
    after = {k: st.group_checksum(k) for k in st.groups}
    assert after["encoder"] != before["encoder"]
    assert after["gen1"] != before["gen1"] and after["gen2"] != before["gen2"]
    assert after["classifier"] == before["classifier"]
    assert st.history[-1]["l_cl"] is not None and st.history[-1]["phase"] == "pretrain"
    with pytest.raises(ValueError):
        naive_pretrain(st, [], epochs=1)


def test_naive_finetune_freezes_generators_and_fits_toy(toy):
    cfg = dataclasses.replace(SMALL, batch_size=4)
    st = make_state(toy, cfg)
    gens = (st.group_checksum("gen1"), st.group_checksum("gen2"))
    naive_finetune(st, toy, epochs=40, evaluate=lambda s: {"train_acc": accuracy(s.model, toy)})
    accs = [r["train_acc"] for r in st.history]
    assert (st.group_checksum("gen1"), st.group_checksum("gen2")) == gens
    assert accs[-1] == 1.0 and accs[-1] >= accs[0]
    with pytest.raises(ValueError):
        naive_finetune(st, [], epochs=1)


def test_joint_phase_isolation(toy):
    st = make_state(toy)
    unl, lab = toy[:10], toy[10:]
    for _ in range(2):
        g1, g2, enc = st.group_checksum("gen1"), st.group_checksum("gen2"), st.group_checksum("encoder")
        for b in iter_batches(unl, 4, st.rngs["batch"]):
            contrastive_step(st, b, train_generators=False)
        assert (st.group_checksum("gen1"), st.group_checksum("gen2")) == (g1, g2)
        assert st.group_checksum("encoder") != enc
        enc, cls = st.group_checksum("encoder"), st.group_checksum("classifier")
        for b in iter_batches(lab, 4, st.rngs["batch"]):
            labeled_view_step(st, b, use_sim=True)
        assert st.group_checksum("gen1") != g1 and st.group_checksum("gen2") != g2
        assert st.group_checksum("encoder") != enc and st.group_checksum("classifier") != cls


def test_joint_records_all_losses(toy):
    st = make_state(toy)
    joint_train(st, toy[:10], toy[10:], epochs=2, evaluate=lambda s: {"test_acc": accuracy(s.model, toy[:4])})
    for rec in st.history:
        assert {"l_cl", "l_cls", "l_sim", "test_acc", "epoch", "seed", "phase"} <= set(rec)
        assert all(rec[k] is not None for k in ("l_cl", "l_cls", "l_sim"))
    with pytest.raises(ValueError):
        joint_train(st, [], toy, epochs=1)
    with pytest.raises(ValueError):
        joint_train(st, toy, [], epochs=1)


def test_lambda_zero_equals_pure_classification(toy):
    cfg0 = dataclasses.replace(SMALL, lam=0.0)
    a, b = make_state(toy, cfg0), make_state(toy, cfg0)
    batch = batch_graphs(toy[:6])
    la, sa = labeled_view_step(a, batch, use_sim=True)
    lb, sb = labeled_view_step(b, batch, use_sim=False)
    assert la == lb and sa is not None and sb is None
    for k in a.groups:
        assert a.group_checksum(k) == b.group_checksum(k)


def test_joint_variants_cover_four_loss_sets():
    combos = {v for k, v in JOINT_VARIANTS.items() if k != "joint"}
    assert combos == {(False, False), (False, True), (True, False), (True, True)}
    assert JOINT_VARIANTS["joint"] == JOINT_VARIANTS["joint_cl_cls_sim"]


def test_aug_only_identity_generators_equals_supervised(toy):
    lab, test = toy[:10], toy[10:]
    a, b = make_state(toy), make_state(toy)
    a.model.gen1.make_identity()
    a.model.gen2.make_identity()
    aug_only_train(a, lab, epochs=5)
    naive_finetune(b, lab, epochs=5)
    for ra, rb in zip(a.history[:1], b.history[:1]):
        assert ra["l_cls"] == pytest.approx(3 * rb["l_cls"], rel=1e-6)
    # three identical copies triple the gradient; Adam only sees that through eps
    pa, pb = a.model.encoder.params, b.model.encoder.params
    for name in pa.names():
        assert np.allclose(pa[name].data, pb[name].data, atol=1e-2), name
    assert accuracy(a.model, test) == accuracy(b.model, test)


def test_run_semi_fold_reproducible_and_metrics(toy):
    r1 = run_semi_fold(toy, SMALL, "joint", 1, 3)
    r2 = run_semi_fold(toy, SMALL, "joint", 1, 3)
    assert r1.metrics == r2.metrics and r1.history == r2.history
    assert {"train_acc", "test_acc", "gap", "view_test_acc"} <= set(r1.metrics)
    assert r1.metrics["n_labeled"] + r1.metrics["n_test"] + r1.metrics["n_unlabeled"] == len(toy)
    with pytest.raises(ValueError):
        run_semi_fold(toy, SMALL, "bogus", 0, 0)


@pytest.mark.parametrize("strategy", ["supervised", "aug_only", "naive", "joint_cls", "joint_cls_sim",
                                      "joint_cl_cls", "graphcl_aug_only", "graphcl"])
def test_every_strategy_runs(toy, strategy):
    r = run_semi_fold(toy, dataclasses.replace(SMALL, epochs=1), strategy, 0, 0)
    assert 0.0 <= r.metrics["test_acc"] <= 1.0
    changed = r.metrics["generators_changed"]
    if strategy in ("supervised", "aug_only", "graphcl_aug_only", "graphcl"):
        assert not any(changed.values())
    else:
        assert all(changed.values())


def test_checkpoint_written(toy, tmp_path):
    r = run_semi_fold(toy, SMALL, "joint", 0, 0, out_dir=tmp_path)
    assert r.checkpoint and (tmp_path / "model_joint_f0_s0.ckpt").exists()


def test_parallel_jobs_match_serial(toy):
    cfg = dataclasses.replace(SMALL, epochs=1)
    jobs = [(run_semi_fold, (toy, cfg, "joint", f, 0), {}) for f in range(2)]
    serial = run_jobs(jobs, 1)
    parallel = run_jobs(jobs, 2)
    assert [r.metrics for r in serial] == [r.metrics for r in parallel]


def test_semi_protocol_summary(toy):
    res = semi_supervised_protocol(toy, dataclasses.replace(SMALL, epochs=1, seeds=(0, 1)), "supervised",
                                   folds=[0, 1])
    assert len(res["runs"]) == 4 and res["summary"]["test_acc"]["n"] == 4


def test_unsup_fold_encoder_frozen(toy):
    r = run_unsup_fold(toy, SMALL, 0, 0, epochs=1)
    assert r.metrics["encoder_frozen"] is True
    assert "test_acc" in r.metrics


def test_linear_probe_separable():
    r = np.random.default_rng(0)
    x = np.concatenate([r.normal(-2, 1, (50, 3)), r.normal(2, 1, (50, 3))])
    y = np.repeat([0, 1], 50)
    out = linear_probe(x, y, x, y, 2, epochs=200)
    assert out["train_acc"] > 0.95


def test_random_encoder_probe_beats_majority(mutag):
    cfg = ExperimentConfig(hidden=32, layers=3, gen_hidden=8, gen_layers=1)
    accs = [run_unsup_fold(mutag, cfg, f, 0, epochs=0).metrics["test_acc"] for f in range(10)]
    assert np.mean(accs) > 125 / 188


def test_naive_pretrain_loss_decreases_on_mutag(mutag):
    cfg = ExperimentConfig(hidden=32, layers=3, gen_hidden=32, gen_layers=3)
    first, last = [], []
    for seed in range(3):
        st = make_state(mutag, cfg, seed)
        naive_pretrain(st, mutag, epochs=30)
        losses = [r["l_cl"] for r in st.history]
        first.append(np.mean(losses[:3]))
        last.append(np.mean(losses[-3:]))
    assert np.mean(last) < np.mean(first)


def test_ablation_ratio_zero_matches_baseline(toy):
    cfg = dataclasses.replace(SMALL, epochs=2)
    table = ablation_protocol(toy, cfg, kinds=["node_drop", "attr_mask"], ratios=[0.0, 0.2], folds=[0, 1])
    for kind in ("node_drop", "attr_mask"):
        assert table["cells"][(kind, 0.0)]["mean"] == table["baseline"]["mean"]
    assert set(table["cells"]) == {(k, r) for k in ("node_drop", "attr_mask") for r in (0.0, 0.2)}
