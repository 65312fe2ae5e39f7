"""View and embedding export for external inspection tools."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .generator import CHOICES, DROP, KEEP, MASK
from .graph import Graph, batch_graphs
from .tensor import no_grad

# Node colors in DOT output. Nodes with a non-zero attribute vector are red,
# deeper red for larger attribute norm; zero-attribute (masked) nodes are
# blue; dropped nodes are grey and dashed.
DROPPED_COLOR = "#d0d0d0"
ZERO_ATTR_COLOR = "#4a7bd0"


def _red(intensity: float) -> str:
    t = float(np.clip(intensity, 0.0, 1.0))
    g = int(round(220 * (1 - t)))
    return f"#e6{g:02x}{g:02x}" if t < 1 else "#e60000"


def graph_to_dot(g: Graph, choices: np.ndarray | None = None, name: str = "G", comment: str = "") -> str:
    """Undirected DOT text; ``choices`` is the per-node choice index (drop/keep/mask)."""
    norms = np.linalg.norm(g.x, axis=1) if g.num_features else np.zeros(g.num_nodes)
    scale = norms.max() if norms.size and norms.max() > 0 else 1.0
    lines = []
    if comment:
        lines.extend(f"// {ln}" for ln in comment.splitlines())
    lines.append(f"graph {name} {{")
    lines.append("  node [shape=circle, style=filled, fontsize=9];")
    for v in range(g.num_nodes):
        choice = "keep" if choices is None else CHOICES[int(choices[v])]
        if choice == "drop":
            attrs = f'fillcolor="{DROPPED_COLOR}", style="filled,dashed"'
        elif norms[v] == 0:
            attrs = f'fillcolor="{ZERO_ATTR_COLOR}"'
        else:
            attrs = f'fillcolor="{_red(norms[v] / scale)}"'
        lines.append(f'  {v} [label="{v}", choice="{choice}", {attrs}];')
    for u, v in g.undirected_edges().tolist():
        lines.append(f"  {u} -- {v};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_views(model, graphs: Sequence[Graph], n_samples: int, out_dir, tau_g: float = 1.0,
                 seed: int = 0, meta: dict | None = None) -> list[Path]:
    """Write (original, view1, view2) for the first ``n_samples`` graphs as JSON and DOT."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    meta = dict(meta or {})
    comment = "config: " + json.dumps(meta.get("config", {}), sort_keys=True)
    written = []
    with no_grad():
        for i, g in enumerate(list(graphs)[:n_samples]):
            b = batch_graphs([g])
            items = [("original", g, None)]
            for tag, gen in (("view1", model.gen1), ("view2", model.gen2)):
                view, choices = gen.generate_view(b, tau_g, rng, frozen=True)
                items.append((tag, view.unbatch()[0], choices.labels()))
            for tag, vg, labels in items:
                stem = out / f"sample{i:03d}_{tag}"
                doc = {
                    **meta,
                    "sample": i,
                    "kind": tag,
                    "graph": vg.to_dict(),
                    "choices": None if labels is None else [CHOICES[c] for c in labels],
                    "choice_counts": None if labels is None else {
                        name: int(np.sum(labels == k)) for name, k in (("drop", DROP), ("keep", KEEP), ("mask", MASK))
                    },
                }
                stem.with_suffix(".json").write_text(json.dumps(doc))
                stem.with_suffix(".dot").write_text(graph_to_dot(vg, labels, name=f"{tag}_{i}", comment=comment))
                written += [stem.with_suffix(".json"), stem.with_suffix(".dot")]
    return written


def export_embeddings(model, graphs: Sequence[Graph], path, meta: dict | None = None) -> Path:
    """CSV of (graph_id, label, readout embedding) with the run config in ``#`` header lines."""
    from .training import embed_graphs

    emb = embed_graphs(model, graphs)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write("# " + json.dumps(meta or {}, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["graph_id", "label"] + [f"emb_{j}" for j in range(emb.shape[1])])
        for i, (g, row) in enumerate(zip(graphs, emb)):
            w.writerow([i, "" if g.y is None else g.y] + [repr(float(v)) for v in row])
    return path
