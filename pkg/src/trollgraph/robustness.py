"""Benign-noise robustness sweeps (preferential attachment) and feature-group ablation."""

from __future__ import annotations

import numpy as np

from .detect import DetectionData, PipelineConfig, sage_cv
from .graph import BENIGN, Graph


def ba_augment(graph: Graph, benign_nodes, n_new_edges: int, m: int = 2,
               rng: np.random.Generator | None = None) -> Graph:
    """Add exactly ``n_new_edges`` edges among ``benign_nodes``.

    Each round picks an acting node uniformly and attaches it to ``m``
    distinct other benign nodes drawn with probability proportional to
    their current total degree + 1; each attachment adds one edge
    (chosen node -> acting node). The last round may be cut short.
    """
    if n_new_edges < 0 or m < 1:
        raise ValueError("n_new_edges must be >= 0 and m >= 1")
    if n_new_edges == 0:
        return graph
    nodes = np.unique(np.asarray(benign_nodes, dtype=np.int64))
    if len(nodes) < 2:
        raise ValueError("ba_augment needs at least two benign nodes")
    rng = rng or np.random.default_rng(0)
    m = min(m, len(nodes) - 1)
    deg = (graph.in_degree() + graph.out_degree())[nodes].astype(np.float64)
    new_src, new_dst = [], []
    while len(new_src) < n_new_edges:
        a = int(rng.integers(len(nodes)))
        w = deg + 1.0
        w[a] = 0.0
        k = min(m, n_new_edges - len(new_src))
        picked = rng.choice(len(nodes), size=k, replace=False, p=w / w.sum())
        for b in picked:
            new_src.append(nodes[b])
            new_dst.append(nodes[a])
            deg[b] += 1
            deg[a] += 1
    n = graph.num_nodes
    src = np.concatenate([np.repeat(np.arange(n), np.diff(graph.out_indptr)), new_src])
    dst = np.concatenate([graph.out_indices, new_dst])
    weight = np.concatenate([graph.out_weights, np.ones(len(new_src), dtype=np.int64)])
    return Graph(graph.node_ids, src, dst, weight, labels=graph.labels)


def run_robustness(data: DetectionData, noise_levels, config: PipelineConfig | None = None, m: int = 2) -> list[dict]:
    """Retrain and cross-validate SAGE after adding ``level * |E|`` benign edges per level."""
    cfg = config or PipelineConfig()
    benign = np.nonzero(data.y == BENIGN)[0]
    base_edges = data.graph.num_edges
    rows = []
    for i, level in enumerate(noise_levels):
        if level < 0:
            raise ValueError("noise levels must be >= 0")
        n_new = int(round(level * base_edges))
        g = ba_augment(data.graph, benign, n_new, m, np.random.default_rng([cfg.seed, 5, i]))
        rep = sage_cv(data.with_graph(g), cfg)
        rows.append({"noise_level": float(level), "added_edges": n_new, "num_edges": g.num_edges,
                     **{k: rep.mean(k) for k in ("f1", "precision", "recall", "auc") if k in rep.metrics},
                     "f1_std": rep.metrics["f1"][1]})
    return rows


def run_ablation(data: DetectionData, groups=None, config: PipelineConfig | None = None, alone: bool = True) -> dict:
    """SAGE CV with all features, with each group removed, and with each group alone.

    Removed groups are zeroed after standardization, so the network shape
    and initialization stay identical across runs.
    """
    cfg = config or PipelineConfig()
    names = [g.name for g in data.features.groups]
    groups = list(groups) if groups is not None else names
    if not groups:
        raise ValueError("no feature groups given")
    full = sage_cv(data, cfg)
    out = {"full": full.to_dict()["metrics"], "removed": {}, "alone": {}}
    for g in groups:
        rep = sage_cv(data, cfg, drop=(g,))
        out["removed"][g] = {**rep.to_dict()["metrics"], "delta_f1": rep.mean("f1") - full.mean("f1")}
        if alone and len(names) > 1:
            rep = sage_cv(data, cfg, drop=tuple(n for n in names if n != g))
            out["alone"][g] = {**rep.to_dict()["metrics"], "delta_f1": rep.mean("f1") - full.mean("f1")}
    return out
