"""Graph containers, dataset loaders, batching and fold construction."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

DEGREE_CAP = 128


class DataError(ValueError):
    """Malformed or missing dataset input."""


def canonical_edges(edge_index, num_nodes: int, symmetrize: bool = True) -> np.ndarray:
    """Deduplicate arcs (optionally adding reverses) and sort them by (src, dst)."""
    e = np.asarray(edge_index, dtype=np.int64)
    e = e.reshape(2, -1) if e.size else np.zeros((2, 0), dtype=np.int64)
    if e.size and (e.min() < 0 or e.max() >= num_nodes):
        raise DataError(f"edge endpoint outside [0, {num_nodes})")
    if symmetrize:
        e = np.concatenate([e, e[::-1]], axis=1)
    if e.shape[1] == 0:
        return np.zeros((2, 0), dtype=np.int64)
    keys = np.unique(e[0] * num_nodes + e[1])
    return np.stack([keys // num_nodes, keys % num_nodes]).astype(np.int64)


@dataclass(frozen=True, eq=False)
class Graph:
    x: np.ndarray  # N x F node features
    edge_index: np.ndarray  # 2 x E directed arcs, both directions for undirected data
    y: int | None = None

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        if x.ndim != 2:
            raise DataError(f"node features must be N x F, got shape {x.shape}")
        ei = np.ascontiguousarray(self.edge_index, dtype=np.int64).reshape(2, -1)
        if ei.size and (ei.min() < 0 or ei.max() >= x.shape[0]):
            raise DataError(f"edge endpoint outside [0, {x.shape[0]})")
        if not np.all(np.isfinite(x)):
            raise DataError("node features must be finite")
        x.setflags(write=False)
        ei.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "edge_index", ei)

    @property
    def num_nodes(self) -> int:
        return self.x.shape[0]

    @property
    def num_edges(self) -> int:
        """Number of directed arcs."""
        return self.edge_index.shape[1]

    @property
    def num_features(self) -> int:
        return self.x.shape[1]

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edge_index[0], minlength=self.num_nodes)

    def undirected_edges(self) -> np.ndarray:
        """Unique (u, v) pairs with u < v."""
        src, dst = self.edge_index
        m = src < dst
        return np.stack([src[m], dst[m]], axis=1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.y == other.y
            and self.x.shape == other.x.shape
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.edge_index, other.edge_index)
        )

    def to_dict(self) -> dict:
        d = {
            "num_nodes": self.num_nodes,
            "edges": self.edge_index.T.tolist(),
            "node_features": self.x.tolist(),
        }
        if self.y is not None:
            d["label"] = int(self.y)
        return d


@dataclass(frozen=True, eq=False)
class GraphBatch:
    """Disjoint union of graphs. ``x`` may be a Tensor for generated views."""

    x: object
    edge_index: np.ndarray
    batch: np.ndarray
    y: np.ndarray
    sizes: np.ndarray
    graph_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def num_graphs(self) -> int:
        return len(self.sizes)

    @property
    def num_nodes(self) -> int:
        return int(self.batch.shape[0])

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)]).astype(np.int64)

    def features(self) -> np.ndarray:
        x = self.x
        return x.data if hasattr(x, "data") and not isinstance(x, np.ndarray) else np.asarray(x)

    def replace(self, **changes) -> "GraphBatch":
        return dataclasses.replace(self, **changes)

    def unbatch(self) -> list[Graph]:
        x = self.features()
        off = self.offsets
        src, dst = self.edge_index
        owner = self.batch[src] if src.size else src
        graphs = []
        for i in range(self.num_graphs):
            m = owner == i
            ei = np.stack([src[m], dst[m]]) - off[i]
            label = int(self.y[i]) if self.y[i] >= 0 else None
            graphs.append(Graph(x[off[i] : off[i + 1]].copy(), ei, label))
        return graphs


def batch_graphs(graphs: Sequence[Graph], graph_ids=None) -> GraphBatch:
    if len(graphs) == 0:
        raise DataError("cannot batch an empty graph list")
    widths = {g.num_features for g in graphs}
    if len(widths) != 1:
        raise DataError(f"graphs have differing feature widths {sorted(widths)}")
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    off = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    x = np.concatenate([g.x for g in graphs], axis=0)
    ei = np.concatenate([g.edge_index + o for g, o in zip(graphs, off)], axis=1)
    batch = np.repeat(np.arange(len(graphs), dtype=np.int64), sizes)
    y = np.array([-1 if g.y is None else g.y for g in graphs], dtype=np.int64)
    ids = np.arange(len(graphs), dtype=np.int64) if graph_ids is None else np.asarray(graph_ids, np.int64)
    return GraphBatch(x, ei.astype(np.int64), batch, y, sizes, ids)


def iter_batches(graphs: Sequence[Graph], batch_size: int, rng: np.random.Generator | None = None) -> Iterator[GraphBatch]:
    """Mini-batches in shuffled order (or dataset order when ``rng`` is None)."""
    n = len(graphs)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield batch_graphs([graphs[i] for i in idx], idx)


# ---------------------------------------------------------------------------
# features


def degree_onehot_features(g: Graph, max_degree: int) -> Graph:
    deg = np.minimum(g.degrees(), max_degree)
    x = np.zeros((g.num_nodes, max_degree + 1))
    x[np.arange(g.num_nodes), deg] = 1.0
    return Graph(x, g.edge_index, g.y)


def add_degree_features(graphs: Sequence[Graph], max_degree: int | None = None) -> list[Graph]:
    if max_degree is None:
        observed = max((int(g.degrees().max(initial=0)) for g in graphs), default=0)
        max_degree = min(observed, DEGREE_CAP)
    return [degree_onehot_features(g, max_degree) for g in graphs]


# ---------------------------------------------------------------------------
# loaders


def _read_ints(path: Path) -> np.ndarray:
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise DataError(f"missing dataset file {path}") from None
    rows = [ln for ln in text.replace(",", " ").split("\n") if ln.strip()]
    try:
        return np.array([[int(float(t)) for t in ln.split()] for ln in rows], dtype=np.int64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def _dataset_name(dir_path: Path) -> str:
    hits = sorted(dir_path.glob("*_A.txt"))
    if not hits:
        raise DataError(f"{dir_path}: no *_A.txt adjacency file")
    return hits[0].name[: -len("_A.txt")]


def load_tu_dataset(dir_path, name: str | None = None, max_degree: int | None = None) -> list[Graph]:
    """Read a TU-format directory (1-based ids, comma separated)."""
    root = Path(dir_path)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    ds = name or _dataset_name(root)
    arcs = _read_ints(root / f"{ds}_A.txt")
    indicator = _read_ints(root / f"{ds}_graph_indicator.txt")[:, 0]
    glabels = _read_ints(root / f"{ds}_graph_labels.txt")[:, 0]
    n_total = indicator.shape[0]
    n_graphs = glabels.shape[0]
    if indicator.min() != 1 or indicator.max() != n_graphs:
        raise DataError(f"graph indicator ids span [{indicator.min()}, {indicator.max()}], expected [1, {n_graphs}]")
    if np.any(np.diff(indicator) < 0):
        raise DataError("graph indicator must be non-decreasing")
    if arcs.size and (arcs.min() < 1 or arcs.max() > n_total):
        raise DataError(f"adjacency references node outside [1, {n_total}]")
    arcs = arcs - 1
    gid = indicator - 1
    if arcs.size and np.any(gid[arcs[:, 0]] != gid[arcs[:, 1]]):
        bad = arcs[np.flatnonzero(gid[arcs[:, 0]] != gid[arcs[:, 1]])[0]] + 1
        raise DataError(f"edge {tuple(bad)} connects nodes of different graphs")

    feats = []
    nl_path = root / f"{ds}_node_labels.txt"
    if nl_path.exists():
        nl = _read_ints(nl_path)[:, 0]
        values, inv = np.unique(nl, return_inverse=True)
        onehot = np.zeros((n_total, len(values)))
        onehot[np.arange(n_total), inv] = 1.0
        feats.append(onehot)
    na_path = root / f"{ds}_node_attributes.txt"
    if na_path.exists():
        rows = [ln for ln in na_path.read_text().splitlines() if ln.strip()]
        feats.append(np.array([[float(t) for t in ln.split(",")] for ln in rows]))
    x_all = np.concatenate(feats, axis=1) if feats else None

    classes, y = np.unique(glabels, return_inverse=True)
    starts = np.concatenate([[0], np.cumsum(np.bincount(gid, minlength=n_graphs))])
    owner = gid[arcs[:, 0]] if arcs.size else np.zeros(0, np.int64)
    order = np.argsort(owner, kind="stable")
    arcs, owner = arcs[order], owner[order]
    cuts = np.searchsorted(owner, np.arange(n_graphs + 1))
    graphs = []
    for i in range(n_graphs):
        lo, hi = starts[i], starts[i + 1]
        local = arcs[cuts[i] : cuts[i + 1]] - lo
        n = hi - lo
        x = x_all[lo:hi] if x_all is not None else np.zeros((n, 0))
        graphs.append(Graph(x, canonical_edges(local.T, n), int(y[i])))
    if x_all is None:
        graphs = add_degree_features(graphs, max_degree)
    return graphs


def load_graph_json(path, max_degree: int | None = None) -> list[Graph]:
    """Read ``{"graphs": [{"num_nodes", "edges", "node_features"?, "label"?}, ...]}``."""
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"missing dataset file {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    items = doc.get("graphs") if isinstance(doc, dict) else None
    if not items:
        raise DataError(f"{path}: expected a non-empty 'graphs' list")
    have_feats = ["node_features" in it for it in items]
    if any(have_feats) and not all(have_feats):
        raise DataError(f"{path}: node_features must be given for all graphs or none")
    graphs = []
    for i, it in enumerate(items):
        try:
            n = int(it["num_nodes"])
            edges = np.asarray(it.get("edges", []), dtype=np.int64).reshape(-1, 2)
            x = np.asarray(it["node_features"], dtype=np.float64).reshape(n, -1) if have_feats[0] else np.zeros((n, 0))
            label = it.get("label")
            graphs.append(Graph(x, canonical_edges(edges.T, n), None if label is None else int(label)))
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"{path}: graph {i}: {exc}") from None
    labels = sorted({g.y for g in graphs if g.y is not None})
    remap = {v: k for k, v in enumerate(labels)}
    graphs = [Graph(g.x, g.edge_index, None if g.y is None else remap[g.y]) for g in graphs]
    if not have_feats[0]:
        graphs = add_degree_features(graphs, max_degree)
    return graphs


def save_graph_json(path, graphs: Sequence[Graph], extra: dict | None = None) -> None:
    doc = dict(extra or {})
    doc["graphs"] = [g.to_dict() for g in graphs]
    Path(path).write_text(json.dumps(doc))


def load_dataset(path, fmt: str = "auto", max_degree: int | None = None) -> list[Graph]:
    p = Path(path)
    if fmt == "auto":
        fmt = "tu" if p.is_dir() else "json"
    if fmt == "tu":
        return load_tu_dataset(p, max_degree=max_degree)
    if fmt == "json":
        return load_graph_json(p, max_degree=max_degree)
    raise DataError(f"unknown dataset format {fmt!r}")


def toy_dataset_path() -> Path:
    return Path(__file__).parent / "data" / "toy16.json"


def num_classes(graphs: Sequence[Graph]) -> int:
    return 1 + max(g.y for g in graphs if g.y is not None)


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class Fold:
    unlabeled: np.ndarray
    labeled_train: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class SplitPlan:
    protocol: str
    seed: int
    folds: tuple[Fold, ...]
    stratified: bool = False

    @property
    def fold_count(self) -> int:
        return len(self.folds)


PROTOCOLS = ("semi", "unsup")


def make_split(n_graphs: int, protocol: str, seed: int, folds: int = 10) -> SplitPlan:
    """Uniform (unstratified) k-fold plan.

    semi: fold i tests on chunk i, trains labeled on chunk i+1 and keeps the
    other 80% unlabeled. unsup: chunk i is the test set, the rest unlabeled.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown split protocol {protocol!r}; expected one of {PROTOCOLS}")
    if n_graphs < folds or folds < 2:
        raise ValueError(f"need folds >= 2 and n_graphs >= folds, got {n_graphs} graphs / {folds} folds")
    perm = np.random.default_rng(seed).permutation(n_graphs)
    chunks = np.array_split(perm, folds)
    out = []
    for i in range(folds):
        test = np.sort(chunks[i])
        if protocol == "semi":
            j = (i + 1) % folds
            train = np.sort(chunks[j])
            rest = [c for k, c in enumerate(chunks) if k not in (i, j)]
        else:
            train = np.zeros(0, dtype=np.int64)
            rest = [c for k, c in enumerate(chunks) if k != i]
        unl = np.sort(np.concatenate(rest)) if rest else np.zeros(0, dtype=np.int64)
        out.append(Fold(unl, train, test))
    return SplitPlan(protocol, seed, tuple(out))
