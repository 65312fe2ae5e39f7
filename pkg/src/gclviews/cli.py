"""``gclviews`` command-line entry point.

Exit codes: 0 success, 1 usage or config error, 2 data / checkpoint error,
3 self-test failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import kernels
from .config import ConfigError, ExperimentConfig, load_config, parse_overrides
from .export import export_embeddings, export_views
from .graph import DataError, Graph, load_dataset, make_split, num_classes, toy_dataset_path
from .selftest import run_selftest
from .tensor import load_checkpoint
from .training import (
    RUN_NOTES,
    Model,
    ablation_protocol,
    accuracy,
    format_mean_std,
    model_from_arch,
    semi_supervised_protocol,
    unsupervised_protocol,
    view_accuracy,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SELFTEST = 0, 1, 2, 3

# column names of the aug-ratio table
ABLATION_COLUMNS = {
    "node_drop": "node_dropping",
    "edge_perturb": "edge_perturbation",
    "subgraph": "subgraph",
    "attr_mask": "attribute_masking",
}

log = logging.getLogger("gclviews")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# helpers


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    overrides = parse_overrides(getattr(args, "set", None))
    for flag, key in (("out", "output_dir"), ("folds", "folds"), ("strategy", "strategy"),
                      ("protocol", "protocol"), ("jobs", "jobs")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = str(args.seed)
    if getattr(args, "dataset", None):
        overrides["dataset"] = args.dataset
    return cfg.with_overrides(overrides) if overrides else cfg.validate()


def dataset_path(spec: str) -> Path:
    if spec in ("", "toy"):
        return toy_dataset_path()
    return Path(spec)


def load_graphs(spec: str, fmt: str = "auto", max_degree: int | None = None) -> tuple[list[Graph], str]:
    path = dataset_path(spec)
    if not path.exists():
        raise DataError(f"dataset not found: {path}")
    graphs = load_dataset(path, fmt, max_degree)
    name = path.stem if path.is_file() else path.name
    return graphs, name


def _labeled(graphs: list[Graph]) -> None:
    if any(g.y is None for g in graphs):
        raise DataError("every graph needs a class label for this command")


def _dataset_info(graphs: list[Graph], name: str) -> dict:
    counts = np.bincount([g.y for g in graphs if g.y is not None]).tolist()
    return {"name": name, "graphs": len(graphs), "features": graphs[0].num_features, "class_counts": counts}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


class MetricsWriter:
    """Single writer for the JSON-lines metrics file."""

    def __init__(self, path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        self.fh = path.open("w")

    def write(self, rec: dict) -> None:
        self.fh.write(json.dumps(_jsonable(rec)) + "\n")

    def close(self) -> None:
        self.fh.close()


def _header(cfg: ExperimentConfig, dataset: dict, command: str) -> dict:
    return {
        "type": "header",
        "command": command,
        "config": cfg.to_dict(),
        "seeds": list(cfg.seeds),
        "dataset": dataset,
        "notes": RUN_NOTES,
        "stratified": False,
        "backend": kernels.BACKEND,
    }


def _checkpoint_meta(path: str) -> dict:
    try:
        return load_checkpoint(path)[1]
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    except ValueError as exc:
        raise DataError(f"bad checkpoint {path}: {exc}") from None


def restore_model(ckpt_path: str, graphs: list[Graph] | None = None) -> tuple[Model, dict]:
    try:
        state, meta = load_checkpoint(ckpt_path)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {ckpt_path}") from None
    except ValueError as exc:
        raise DataError(f"bad checkpoint {ckpt_path}: {exc}") from None
    arch = meta.get("arch")
    if not arch:
        raise DataError(f"{ckpt_path}: checkpoint has no architecture record")
    if graphs is not None:
        if graphs[0].num_features != arch["in_dim"]:
            raise DataError(f"checkpoint expects {arch['in_dim']} node features, dataset has {graphs[0].num_features}")
        labels = [g.y for g in graphs if g.y is not None]
        if labels and max(labels) >= arch["num_classes"]:
            raise DataError(f"checkpoint has {arch['num_classes']} classes, dataset has label {max(labels)}")
    model = model_from_arch(arch, np.random.default_rng(0))
    try:
        model.params().load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise DataError(f"checkpoint/architecture mismatch: {exc}") from None
    return model, meta


# ---------------------------------------------------------------------------
# commands


def cmd_train(cfg: ExperimentConfig) -> int:
    graphs, name = load_graphs(cfg.dataset, cfg.format, cfg.max_degree)
    _labeled(graphs)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    if cfg.protocol == "ablation":
        return cmd_ablate(cfg, graphs=graphs, name=name)
    writer = MetricsWriter(out / "metrics.jsonl")
    writer.write(_header(cfg, _dataset_info(graphs, name), "train"))
    t0 = time.perf_counter()
    ckpt_dir = out / "checkpoints"
    if cfg.protocol == "semi":
        res = semi_supervised_protocol(graphs, cfg, out_dir=ckpt_dir)
    else:
        res = unsupervised_protocol(graphs, cfg, out_dir=ckpt_dir)
    for run in res["runs"]:
        for rec in run.history:
            writer.write(rec)
        writer.write({"type": "run", "protocol": res["protocol"], "strategy": res["strategy"], "fold": run.fold,
                      "seed": run.seed, "checkpoint": run.checkpoint, **run.metrics})
    summary = {"type": "summary", "protocol": res["protocol"], "strategy": res["strategy"],
               "seconds": time.perf_counter() - t0, **res["summary"]}
    writer.write(summary)
    writer.close()
    (out / "summary.json").write_text(json.dumps(_jsonable({"config": cfg.to_dict(), **summary}), indent=2))
    acc = res["summary"]["test_acc"]
    print(f"{res['protocol']}/{res['strategy']} on {name}: test acc {format_mean_std(acc)} "
          f"over {acc['n']} runs -> {out}")
    return EXIT_OK


def write_ablation_csv(path: Path, table: dict, dataset: str, cfg: ExperimentConfig) -> Path:
    kinds = table["kinds"]
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write("# aug-ratio ablation: test accuracy (%) mean ± std over folds x seeds\n")
        fh.write("# baseline row: supervised training without augmentation\n")
        fh.write("# config: " + json.dumps(cfg.to_dict(), sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["dataset", "aug_ratio"] + [ABLATION_COLUMNS[k] for k in kinds])
        base = format_mean_std(table["baseline"])
        w.writerow([dataset, "baseline"] + [base] * len(kinds))
        for r in table["ratios"]:
            w.writerow([dataset, f"{r:g}"] + [format_mean_std(table["cells"][(k, r)]) for k in kinds])
    return path


def cmd_ablate(cfg: ExperimentConfig, graphs=None, name=None) -> int:
    if graphs is None:
        graphs, name = load_graphs(cfg.dataset, cfg.format, cfg.max_degree)
        _labeled(graphs)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = ablation_protocol(graphs, cfg)
    path = write_ablation_csv(out / "ablation.csv", table, name, cfg)
    print(path.read_text(), end="")
    return EXIT_OK


def cmd_eval(checkpoint: str, dataset: str, out: str | None, fmt: str = "auto") -> int:
    meta = _checkpoint_meta(checkpoint)
    saved = meta.get("config", {})
    graphs, name = load_graphs(dataset, fmt, saved.get("max_degree"))
    _labeled(graphs)
    model, meta = restore_model(checkpoint, graphs)
    seed = int(meta.get("seed", 0))
    metrics = {"type": "eval", "checkpoint": str(checkpoint), "dataset": name, "seed": seed,
               "config": saved, "all_acc": accuracy(model, graphs)}
    fold = meta.get("fold")
    if fold is not None and saved and meta.get("protocol") in ("semi", "unsup"):
        plan = make_split(len(graphs), meta["protocol"], saved.get("split_seed", 0), saved.get("folds", 10))
        if fold < len(plan.folds):
            test = [graphs[i] for i in plan.folds[fold].test]
            metrics["fold"] = fold
            metrics["test_acc"] = accuracy(model, test)
            metrics["view_test_acc"] = view_accuracy(model, test, saved.get("tau_g", 1.0),
                                                     np.random.default_rng([seed, 2, fold]))
    text = json.dumps(_jsonable(metrics))
    print(text)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    return EXIT_OK


def _export_meta(meta: dict, checkpoint: str, dataset: str) -> dict:
    return {"checkpoint": str(checkpoint), "dataset": dataset, "seed": meta.get("seed"),
            "config": meta.get("config", {}), "arch": meta.get("arch", {})}


def cmd_export_views(checkpoint: str, dataset: str, n_samples: int, out: str, seed: int = 0) -> int:
    if n_samples < 1:
        raise UsageError("--n-samples must be >= 1")
    meta = _checkpoint_meta(checkpoint)
    graphs, name = load_graphs(dataset, "auto", meta.get("config", {}).get("max_degree"))
    model, meta = restore_model(checkpoint, graphs)
    tau_g = meta.get("config", {}).get("tau_g", 1.0)
    files = export_views(model, graphs, n_samples, out, tau_g, seed, _export_meta(meta, checkpoint, name))
    print(f"wrote {len(files)} files to {out}")
    return EXIT_OK


def cmd_export_embeddings(checkpoint: str, dataset: str, out: str) -> int:
    meta = _checkpoint_meta(checkpoint)
    graphs, name = load_graphs(dataset, "auto", meta.get("config", {}).get("max_degree"))
    model, meta = restore_model(checkpoint, graphs)
    path = export_embeddings(model, graphs, out, _export_meta(meta, checkpoint, name))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_selftest(trials: int = 20) -> int:
    return EXIT_OK if run_selftest(trials) else EXIT_SELFTEST


# ---------------------------------------------------------------------------
# argument parsing


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--dataset", help="TU directory or graph JSON file ('toy' for the bundled set)")
    p.add_argument("--out", help="output directory (config key output_dir)")
    p.add_argument("--seed", type=int, help="run a single seed")
    p.add_argument("--folds", type=int, help="number of folds")
    p.add_argument("--strategy")
    p.add_argument("--protocol")
    p.add_argument("--jobs", type=int, help="worker processes for fold/seed runs")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gclviews", description="Graph contrastive learning with learnable view generators.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    _add_run_flags(sub.add_parser("train", help="run a protocol and write metrics + checkpoints"))
    _add_run_flags(sub.add_parser("ablate", help="aug-ratio sweep, writes ablation.csv"))

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--format", default="auto", choices=("auto", "tu", "json"))
    p.add_argument("--out", help="also write the metrics JSON here")

    p = sub.add_parser("export-views", help="write (original, view1, view2) triplets as JSON + DOT")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--n-samples", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("export-embeddings", help="write graph embeddings as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("selftest", help="gradient and sampler checks")
    p.add_argument("--trials", type=int, default=20)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "train":
            return cmd_train(resolve_config(args))
        if args.command == "ablate":
            return cmd_ablate(dataclasses.replace(resolve_config(args), protocol="ablation"))
        if args.command == "eval":
            return cmd_eval(args.checkpoint, args.dataset, args.out, args.format)
        if args.command == "export-views":
            return cmd_export_views(args.checkpoint, args.dataset, args.n_samples, args.out, args.seed)
        if args.command == "export-embeddings":
            return cmd_export_embeddings(args.checkpoint, args.dataset, args.out)
        return cmd_selftest(args.trials)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
