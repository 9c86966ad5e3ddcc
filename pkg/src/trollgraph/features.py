"""Per-node feature matrices: topological detection features, label aggregates
for forecasting, and fusion with external text embeddings."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .graph import BENIGN, TROLL, UNKNOWN, Graph


@dataclass(frozen=True)
class FeatureGroup:
    name: str
    columns: tuple[str, ...]
    start: int

    @property
    def stop(self) -> int:
        return self.start + len(self.columns)


@dataclass
class FeatureMatrix:
    values: np.ndarray
    groups: list[FeatureGroup] = field(default_factory=list)

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("feature values must be 2-D")
        width = sum(len(g.columns) for g in self.groups)
        if width != self.values.shape[1]:
            raise ValueError(f"schema width {width} != matrix width {self.values.shape[1]}")
        if not np.isfinite(self.values).all():
            raise ValueError("feature matrix has non-finite entries")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def columns(self) -> list[str]:
        return [c for g in self.groups for c in g.columns]

    def group(self, name: str) -> FeatureGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def group_slice(self, name: str) -> slice:
        g = self.group(name)
        return slice(g.start, g.stop)

    def concat(self, other: "FeatureMatrix") -> "FeatureMatrix":
        off = self.width
        groups = self.groups + [FeatureGroup(g.name, g.columns, g.start + off) for g in other.groups]
        return FeatureMatrix(np.hstack([self.values, other.values]), groups)


def _groups(layout: Sequence[tuple[str, Sequence[str]]]) -> list[FeatureGroup]:
    out, pos = [], 0
    for name, cols in layout:
        out.append(FeatureGroup(name, tuple(cols), pos))
        pos += len(cols)
    return out


# ---------------------------------------------------------------- centrality

def degree_centrality_all(graph: Graph) -> np.ndarray:
    """|N(v)| / max_j |N(v_j)| over undirected distinct neighbors; zeros if edgeless."""
    nn = graph.num_neighbors().astype(np.float64)
    top = nn.max() if nn.size else 0.0
    if top == 0:
        return np.zeros_like(nn)
    return nn / top


def degree_centrality(graph: Graph, v) -> float:
    i = graph.index[v] if isinstance(v, str) else int(v)
    if not 0 <= i < graph.num_nodes:
        raise KeyError(v)
    return float(degree_centrality_all(graph)[i])


# ---------------------------------------------------------------- detection features

DETECTION_SCHEMA = (
    ("degree", ("in_degree", "out_degree")),
    ("centrality", ("degree_centrality",)),
    ("ego", ("avg_neighbor_degree", "num_neighbors", "ego_net_size")),
)
DETECTION_COLUMNS = [c for _, cols in DETECTION_SCHEMA for c in cols]



def detection_features(graph: Graph) -> FeatureMatrix:
    """Six topological columns per node.

    Columns: in_degree, out_degree (multiplicity-weighted), degree_centrality,
    avg_neighbor_degree (mean distinct-neighbor count of the node's
    neighbors), num_neighbors, ego_net_size (node + radius-1 neighbors).
    """
    nn = graph.num_neighbors().astype(np.float64)
    indptr, idx = graph.neighbors_csr("undirected")
    rows = np.repeat(np.arange(graph.num_nodes), np.diff(indptr))
    sums = np.bincount(rows, weights=nn[idx], minlength=graph.num_nodes)
    avg = np.where(nn > 0, sums / np.maximum(nn, 1), 0.0)
    cols = {
        "in_degree": graph.in_degree().astype(np.float64),
        "out_degree": graph.out_degree().astype(np.float64),
        "degree_centrality": degree_centrality_all(graph),
        "avg_neighbor_degree": avg,
        "num_neighbors": nn,
        "ego_net_size": nn + 1,
    }
    values = np.stack([cols[c] for c in DETECTION_COLUMNS], axis=1)
    return FeatureMatrix(values, _groups(DETECTION_SCHEMA))


# ---------------------------------------------------------------- label aggregates

LABEL_AGG_SCHEMA = (
    ("label", ("is_troll", "is_benign")),
    ("in", ("in_sum_troll", "in_sum_benign", "in_mean_troll", "in_mean_benign")),
    ("out", ("out_sum_troll", "out_sum_benign", "out_mean_troll", "out_mean_benign")),
    ("undirected", ("und_sum_troll", "und_sum_benign", "und_mean_troll", "und_mean_benign")),
    ("centrality", ("degree_centrality",)),
)


def label_onehot(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Two-column one-hot (troll, benign); unknown counts as benign."""
    missing = int((labels == UNKNOWN).sum())
    troll = (labels == TROLL).astype(np.float64)
    return np.stack([troll, 1.0 - troll], axis=1), missing


def label_aggregates(snapshot: Graph, labels: np.ndarray | None = None) -> tuple[FeatureMatrix, int]:
    """15 columns: own one-hot, then per direction (in, out, undirected) the
    sum and mean of neighbor one-hots, then degree centrality.

    "in" neighbors of v are the sources u of edges (u, v). Returns the
    matrix and the number of nodes whose missing label was read as benign.
    """
    labels = snapshot.labels if labels is None else np.asarray(labels)
    onehot, missing = label_onehot(labels)
    blocks = [onehot]
    for direction in ("in", "out", "undirected"):
        indptr, idx = snapshot.neighbors_csr(direction)
        deg = np.diff(indptr)
        rows = np.repeat(np.arange(snapshot.num_nodes), deg)
        sums = np.zeros((snapshot.num_nodes, 2))
        np.add.at(sums, rows, onehot[idx])
        means = sums / np.maximum(deg, 1)[:, None]
        blocks += [sums, means]
    blocks.append(degree_centrality_all(snapshot)[:, None])
    return FeatureMatrix(np.hstack(blocks), _groups(LABEL_AGG_SCHEMA)), missing


# ---------------------------------------------------------------- standardization

@dataclass
class Standardizer:
    """Per-column z-score fitted on a subset of rows; zero-variance columns keep std 1."""
    mean: np.ndarray
    std: np.ndarray
    columns: slice | None = None

    @classmethod
    def fit(cls, X: np.ndarray, rows=None, columns: slice | None = None) -> "Standardizer":
        sub = X if rows is None else X[rows]
        if columns is not None:
            sub = sub[:, columns]
        mean = sub.mean(axis=0)
        std = sub.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean, std, columns)

    def transform(self, X: np.ndarray) -> np.ndarray:
        out = np.array(X, dtype=np.float64, copy=True)
        cols = self.columns if self.columns is not None else slice(None)
        out[:, cols] = (out[:, cols] - self.mean) / self.std
        return out


# ---------------------------------------------------------------- fusion

def fuse_embeddings(topo: FeatureMatrix, table, node_ids: Sequence[str]) -> tuple[FeatureMatrix, int]:
    """Append each node's embedding row; absent users get zeros. Returns (matrix, missing)."""
    if len(node_ids) != topo.values.shape[0]:
        raise ValueError("node_ids must align with feature rows")
    dim = table.dim
    emb = np.zeros((len(node_ids), dim))
    missing = 0
    for i, u in enumerate(node_ids):
        vec = table.vectors.get(u)
        if vec is None:
            missing += 1
        else:
            emb[i] = vec
    extra = FeatureMatrix(emb, _groups([("embedding", tuple(f"emb_{j}" for j in range(dim)))]))
    return topo.concat(extra), missing


def mask_groups(fm: FeatureMatrix, drop: Sequence[str], values: np.ndarray | None = None) -> np.ndarray:
    """Copy of the feature values with the named groups zeroed out."""
    out = np.array(fm.values if values is None else values, copy=True)
    for name in drop:
        out[:, fm.group_slice(name)] = 0.0
    return out


def node_labels(labels: Mapping[str, str], node_ids: Sequence[str]) -> np.ndarray:
    return np.array([TROLL if labels.get(u) == "troll" else BENIGN for u in node_ids], dtype=np.int8)
