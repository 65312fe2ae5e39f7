"""Fixed augmentations used as baselines and in the aug-ratio sweep."""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .graph import Graph, canonical_edges

# subgraph keeps ceil((1 - ratio) * N) nodes, so every kind removes roughly ``ratio``
SUBGRAPH_RATIO_MEANS = "removed_fraction"


def _check_ratio(ratio: float) -> None:
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"augmentation ratio must be in [0, 1), got {ratio}")


def induced_subgraph(g: Graph, keep: np.ndarray) -> Graph:
    """Restrict ``g`` to the sorted node ids in ``keep``, relabeling them 0..k-1."""
    keep = np.sort(np.asarray(keep, dtype=np.int64))
    remap = np.full(g.num_nodes, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    src, dst = g.edge_index
    m = (remap[src] >= 0) & (remap[dst] >= 0)
    return Graph(g.x[keep], np.stack([remap[src[m]], remap[dst[m]]]), g.y)


def node_drop(g: Graph, ratio: float, rng: np.random.Generator) -> Graph:
    _check_ratio(ratio)
    k = int(math.floor(ratio * g.num_nodes))
    if k == 0:
        return g
    dropped = rng.choice(g.num_nodes, size=k, replace=False)
    return induced_subgraph(g, np.setdiff1d(np.arange(g.num_nodes), dropped))


def edge_perturb(g: Graph, ratio: float, rng: np.random.Generator) -> Graph:
    """Remove floor(ratio * E) undirected edges, then add as many new random ones."""
    _check_ratio(ratio)
    und = g.undirected_edges()
    m = int(math.floor(ratio * len(und)))
    if m == 0:
        return g
    n = g.num_nodes
    removed = rng.choice(len(und), size=m, replace=False)
    kept = np.delete(und, removed, axis=0)
    present = np.zeros((n, n), dtype=bool) if n <= 4096 else None
    if present is not None:
        present[kept[:, 0], kept[:, 1]] = True
        iu, ju = np.triu_indices(n, k=1)
        free = np.flatnonzero(~present[iu, ju])
        pick = rng.choice(free, size=m, replace=False)
        added = np.stack([iu[pick], ju[pick]], axis=1)
    else:
        taken = {(int(u), int(v)) for u, v in kept}
        added = []
        while len(added) < m:
            u, v = sorted(rng.choice(n, size=2, replace=False).tolist())
            if (u, v) not in taken:
                taken.add((u, v))
                added.append((u, v))
        added = np.array(added, dtype=np.int64)
    edges = np.concatenate([kept, added], axis=0)
    return Graph(g.x, canonical_edges(edges.T, n), g.y)


def subgraph(g: Graph, ratio: float, rng: np.random.Generator) -> Graph:
    """Grow a connected node set from a random center by adding random frontier nodes.

    Stops at ceil((1 - ratio) * N) nodes or when the center's component is exhausted.
    """
    _check_ratio(ratio)
    n = g.num_nodes
    target = int(math.ceil((1.0 - ratio) * n))
    if target >= n:
        return g
    src, dst = g.edge_index
    nbrs = [[] for _ in range(n)]
    for s, d in zip(src.tolist(), dst.tolist()):
        nbrs[s].append(d)
    center = int(rng.integers(n))
    selected = {center}
    frontier = set(nbrs[center]) - selected
    while len(selected) < target and frontier:
        ordered = sorted(frontier)
        v = ordered[int(rng.integers(len(ordered)))]
        selected.add(v)
        frontier.discard(v)
        frontier.update(u for u in nbrs[v] if u not in selected)
    return induced_subgraph(g, np.fromiter(selected, dtype=np.int64))


def attr_mask(g: Graph, ratio: float, rng: np.random.Generator) -> Graph:
    _check_ratio(ratio)
    k = int(math.floor(ratio * g.num_nodes))
    if k == 0:
        return g
    x = g.x.copy()
    x[rng.choice(g.num_nodes, size=k, replace=False)] = 0.0
    return Graph(x, g.edge_index, g.y)


AUGMENTATIONS: dict[str, Callable[[Graph, float, np.random.Generator], Graph]] = {
    "node_drop": node_drop,
    "edge_perturb": edge_perturb,
    "subgraph": subgraph,
    "attr_mask": attr_mask,
}


def random4(g: Graph, rng: np.random.Generator, ratio: float = 0.2) -> Graph:
    """Apply two distinct augmentations, in the order they were drawn."""
    names = list(AUGMENTATIONS)
    for i in rng.choice(len(names), size=2, replace=False):
        g = AUGMENTATIONS[names[i]](g, ratio, rng)
    return g


def augment_graphs(graphs: Sequence[Graph], kind: str, ratio: float, rng: np.random.Generator) -> list[Graph]:
    if kind == "random4":
        return [random4(g, rng, ratio) for g in graphs]
    if kind == "none":
        return list(graphs)
    try:
        fn = AUGMENTATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown augmentation {kind!r}; expected one of {sorted(AUGMENTATIONS)} or random4") from None
    return [fn(g, ratio, rng) for g in graphs]
