"""Flat ``key = value`` experiment configuration.

Unknown keys and out-of-range values are rejected with the offending line
number. Command-line ``--set key=value`` overrides are applied after the file.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


STRATEGIES = (
    "supervised",
    "aug_only",
    "naive",
    "joint",
    "joint_cls",
    "joint_cls_sim",
    "joint_cl_cls",
    "joint_cl_cls_sim",
    "graphcl_aug_only",
    "graphcl",
)
PROTOCOLS = ("semi", "unsup", "ablation")
AUG_KINDS = ("node_drop", "edge_perturb", "subgraph", "attr_mask")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _words(text: str) -> tuple[str, ...]:
    return tuple(t for t in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    dataset: str = ""
    format: str = "auto"
    protocol: str = "semi"
    strategy: str = "joint"
    epochs: int = 30
    batch_size: int = 128
    hidden: int = 128
    layers: int = 5
    gen_hidden: int = 128
    gen_layers: int = 5
    readout: str = "sum"
    use_projection: bool = True
    gen_init: str = "neutral"
    tau: float = 0.5
    tau_g: float = 1.0
    lam: float = 1.0
    lr: float = 0.001
    folds: int = 10
    split_seed: int = 0
    seeds: tuple[int, ...] = (0,)
    max_degree: int = 128
    aug_ratio: float = 0.2
    ablation_kinds: tuple[str, ...] = AUG_KINDS
    ablation_ratios: tuple[float, ...] = (0.0, 0.1, 0.2)
    probe_epochs: int = 300
    probe_lr: float = 0.01
    probe_l2: float = 1e-3
    jobs: int = 1
    output_dir: str = "runs"
    save_checkpoints: bool = True

    def validate(self) -> "ExperimentConfig":
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg} (got {getattr(self, key)!r})")

        need(self.format in ("auto", "tu", "json"), "format", "must be auto, tu or json")
        need(self.protocol in PROTOCOLS, "protocol", f"must be one of {PROTOCOLS}")
        need(self.strategy in STRATEGIES, "strategy", f"must be one of {STRATEGIES}")
        for key in ("epochs",):
            need(0 <= getattr(self, key) <= 10_000, key, "must be in [0, 10000]")
        for key in ("batch_size", "hidden", "gen_hidden"):
            need(1 <= getattr(self, key) <= 4096, key, "must be in [1, 4096]")
        for key in ("layers", "gen_layers"):
            need(1 <= getattr(self, key) <= 32, key, "must be in [1, 32]")
        need(self.readout in ("sum", "mean"), "readout", "must be sum or mean")
        need(self.gen_init in ("random", "neutral"), "gen_init", "must be random or neutral")
        need(self.tau > 0, "tau", "must be > 0")
        need(self.tau_g > 0, "tau_g", "must be > 0")
        need(self.lam >= 0, "lam", "must be >= 0")
        need(0 < self.lr <= 1, "lr", "must be in (0, 1]")
        need(2 <= self.folds <= 100, "folds", "must be in [2, 100]")
        need(self.split_seed >= 0, "split_seed", "must be >= 0")
        need(len(self.seeds) >= 1 and all(s >= 0 for s in self.seeds), "seeds", "must list non-negative ints")
        need(1 <= self.max_degree <= 4096, "max_degree", "must be in [1, 4096]")
        need(0 <= self.aug_ratio < 1, "aug_ratio", "must be in [0, 1)")
        need(all(k in AUG_KINDS for k in self.ablation_kinds) and self.ablation_kinds, "ablation_kinds",
             f"must be a non-empty subset of {AUG_KINDS}")
        need(all(0 <= r < 1 for r in self.ablation_ratios) and self.ablation_ratios, "ablation_ratios",
             "must be values in [0, 1)")
        need(0 <= self.probe_epochs <= 100_000, "probe_epochs", "must be in [0, 100000]")
        need(self.probe_lr > 0, "probe_lr", "must be > 0")
        need(self.probe_l2 >= 0, "probe_l2", "must be >= 0")
        need(1 <= self.jobs <= 256, "jobs", "must be in [1, 256]")
        return self

    # serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, list):
                v = ",".join(str(t) for t in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, overrides: dict[str, str]) -> "ExperimentConfig":
        cfg = dataclasses.replace(self)
        for key, raw in overrides.items():
            _assign(cfg, key, raw, where=f"override {key}")
        return cfg.validate()


_KEY_ALIASES = {"lambda": "lam"}


def _parsers():
    out = {}
    for f in dataclasses.fields(ExperimentConfig):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        if isinstance(default, bool):
            out[f.name] = _bool
        elif isinstance(default, int):
            out[f.name] = int
        elif isinstance(default, float):
            out[f.name] = float
        elif f.name == "seeds":
            out[f.name] = _ints
        elif f.name == "ablation_ratios":
            out[f.name] = _floats
        elif f.name == "ablation_kinds":
            out[f.name] = _words
        else:
            out[f.name] = str
    return out


_PARSERS = _parsers()


def _assign(cfg: ExperimentConfig, key: str, raw: str, where: str) -> None:
    name = _KEY_ALIASES.get(key.strip(), key.strip())
    if name not in _PARSERS:
        raise ConfigError(f"{where}: unknown key {key.strip()!r}")
    try:
        value = _PARSERS[name](raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key.strip()!r}: {exc}") from None
    setattr(cfg, name, value)


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = body.split("=", 1)
        key = key.strip()
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        _assign(cfg, key, raw, where=f"{source}:{lineno}")
    try:
        return cfg.validate()
    except ConfigError as exc:
        key = str(exc).split(":", 1)[0]
        key = {v: k for k, v in _KEY_ALIASES.items()}.get(key, key)
        line = f":{seen[key]}" if key in seen else ""
        raise ConfigError(f"{source}{line}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config_text(text, str(p))


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out
