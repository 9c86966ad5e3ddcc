"""Interaction graphs in compressed adjacency form and temporal snapshots."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingest import ConfigError, EdgeEvent

log = logging.getLogger(__name__)

BENIGN, TROLL, UNKNOWN = 0, 1, -1
_LABEL_CODE = {"benign": BENIGN, "troll": TROLL}

DAY = 86400


def _csr(src: np.ndarray, dst: np.ndarray, w: np.ndarray, n: int):
    """Group (src -> dst, w) by src with dst ascending; duplicate pairs must be pre-merged."""
    order = np.lexsort((dst, src))
    src, dst, w = src[order], dst[order], w[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, dst.astype(np.int64), w.astype(np.int64)


class Graph:
    """Directed multigraph with multiplicities.

    ``out`` lists of node u hold the targets v of edges (u, v), sorted by id;
    ``in`` lists are the transpose. Instances are treated as immutable.
    """

    def __init__(self, node_ids: Sequence[str], src, dst, weight=None, labels=None):
        self.node_ids = list(node_ids)
        self.index = {u: i for i, u in enumerate(self.node_ids)}
        n = len(self.node_ids)
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        weight = np.ones(len(src), dtype=np.int64) if weight is None else np.asarray(weight, dtype=np.int64)
        if len(src):
            # merge duplicates into multiplicities
            key = src * max(n, 1) + dst
            uniq, inv = np.unique(key, return_inverse=True)
            w = np.zeros(len(uniq), dtype=np.int64)
            np.add.at(w, inv, weight)
            src, dst, weight = uniq // max(n, 1), uniq % max(n, 1), w
        self.out_indptr, self.out_indices, self.out_weights = _csr(src, dst, weight, n)
        self.in_indptr, self.in_indices, self.in_weights = _csr(dst, src, weight, n)
        if labels is None:
            self.labels = np.full(n, UNKNOWN, dtype=np.int8)
        else:
            self.labels = np.asarray(labels, dtype=np.int8)
            if self.labels.shape != (n,):
                raise ValueError("labels length must equal node count")

    # -- basic properties
    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def num_edges(self) -> int:
        """Total edge multiplicity."""
        return int(self.out_weights.sum())

    @property
    def num_unique_edges(self) -> int:
        return len(self.out_indices)

    def out_neighbors(self, u) -> list[tuple[str, int]]:
        i = self.index[u] if isinstance(u, str) else u
        s, e = self.out_indptr[i], self.out_indptr[i + 1]
        return [(self.node_ids[j], int(w)) for j, w in zip(self.out_indices[s:e], self.out_weights[s:e])]

    def in_neighbors(self, v) -> list[tuple[str, int]]:
        i = self.index[v] if isinstance(v, str) else v
        s, e = self.in_indptr[i], self.in_indptr[i + 1]
        return [(self.node_ids[j], int(w)) for j, w in zip(self.in_indices[s:e], self.in_weights[s:e])]

    def out_degree(self) -> np.ndarray:
        return np.bincount(np.repeat(np.arange(self.num_nodes), np.diff(self.out_indptr)),
                           weights=self.out_weights, minlength=self.num_nodes).astype(np.int64)

    def in_degree(self) -> np.ndarray:
        return np.bincount(np.repeat(np.arange(self.num_nodes), np.diff(self.in_indptr)),
                           weights=self.in_weights, minlength=self.num_nodes).astype(np.int64)

    def edge_array(self) -> np.ndarray:
        """Unique directed edges as an (m, 2) array of (source, target) ids."""
        src = np.repeat(np.arange(self.num_nodes), np.diff(self.out_indptr))
        return np.stack([src, self.out_indices], axis=1)

    @cached_property
    def _undirected(self):
        n = self.num_nodes
        src = np.concatenate([np.repeat(np.arange(n), np.diff(self.out_indptr)),
                              np.repeat(np.arange(n), np.diff(self.in_indptr))])
        dst = np.concatenate([self.out_indices, self.in_indices])
        key = np.unique(src * max(n, 1) + dst)
        s, d = key // max(n, 1), key % max(n, 1)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, s + 1, 1)
        np.cumsum(indptr, out=indptr)
        return indptr, d.astype(np.int64)

    def neighbors_csr(self, direction: str = "undirected") -> tuple[np.ndarray, np.ndarray]:
        """Distinct-neighbor CSR for ``direction`` in {in, out, undirected}."""
        if direction == "undirected":
            return self._undirected
        if direction == "out":
            return self.out_indptr, self.out_indices
        if direction == "in":
            return self.in_indptr, self.in_indices
        raise ValueError(f"unknown direction {direction!r}")

    def num_neighbors(self) -> np.ndarray:
        return np.diff(self._undirected[0])

    def undirected_neighbors(self, v) -> np.ndarray:
        i = self.index[v] if isinstance(v, str) else v
        indptr, idx = self._undirected
        return idx[indptr[i]:indptr[i + 1]]

    def modeling_labels(self) -> tuple[np.ndarray, int]:
        """Labels with unknown mapped to benign, plus the number remapped."""
        unknown = int((self.labels == UNKNOWN).sum())
        return np.where(self.labels == TROLL, TROLL, BENIGN).astype(np.int8), unknown

    def with_labels(self, labels: Mapping[str, str]) -> "Graph":
        g = self._copy()
        g.labels = label_vector(self.node_ids, labels)
        return g

    def _copy(self) -> "Graph":
        g = Graph.__new__(Graph)
        g.__dict__.update({k: v for k, v in self.__dict__.items() if k != "_undirected"})
        return g

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (self.node_ids == other.node_ids
                and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in
                        ("out_indptr", "out_indices", "out_weights", "labels")))

    def __repr__(self) -> str:
        return f"Graph(nodes={self.num_nodes}, edges={self.num_edges})"


def label_vector(node_ids: Sequence[str], labels: Mapping[str, str] | None) -> np.ndarray:
    if not labels:
        return np.full(len(node_ids), UNKNOWN, dtype=np.int8)
    return np.array([_LABEL_CODE.get(labels.get(u, ""), UNKNOWN) for u in node_ids], dtype=np.int8)


def build_graph(edge_events: Iterable[EdgeEvent], labels: Mapping[str, str] | None = None,
                node_ids: Sequence[str] | None = None) -> Graph:
    """One node per distinct user id (sorted), parallel edges merged into weights.

    ``node_ids`` fixes the node index, e.g. a global index shared by snapshots.
    """
    events = list(edge_events)
    if node_ids is None:
        node_ids = sorted({e.source for e in events} | {e.target for e in events})
    index = {u: i for i, u in enumerate(node_ids)}
    src = np.fromiter((index[e.source] for e in events), dtype=np.int64, count=len(events))
    dst = np.fromiter((index[e.target] for e in events), dtype=np.int64, count=len(events))
    g = Graph(node_ids, src, dst, labels=label_vector(node_ids, labels))
    if labels is not None:
        unknown = int((g.labels == UNKNOWN).sum())
        if unknown:
            log.info("build_graph: %d node(s) without label treated as benign for modeling", unknown)
    return g


# ---------------------------------------------------------------- snapshots

@dataclass
class TemporalGraph:
    node_ids: list[str]
    starts: list[int]
    snapshots: list[Graph]
    delta: int
    events_per_snapshot: list[list[EdgeEvent]]

    @property
    def T(self) -> int:
        return len(self.snapshots)

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    def __len__(self) -> int:
        return len(self.snapshots)


def partition_snapshots(edge_events: Iterable[EdgeEvent], delta: int, t0: int | None = None,
                        labels: Mapping[str, str] | None = None) -> TemporalGraph:
    """Bucket events into windows ``[t0 + k*delta, t0 + (k+1)*delta)``.

    ``t0`` defaults to the first event timestamp. Trailing empty windows are
    not emitted; interior empty windows are (as edgeless snapshots).
    """
    if delta is None or delta <= 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    events = sorted(edge_events, key=lambda e: e.timestamp)
    node_ids = sorted({e.source for e in events} | {e.target for e in events})
    if not events:
        return TemporalGraph(node_ids, [], [], delta, [])
    if t0 is None:
        t0 = events[0].timestamp
    if events[0].timestamp < t0:
        raise ConfigError("events precede t0")
    buckets: list[list[EdgeEvent]] = [[] for _ in range((events[-1].timestamp - t0) // delta + 1)]
    for e in events:
        buckets[(e.timestamp - t0) // delta].append(e)
    snaps = [build_graph(b, labels, node_ids=node_ids) for b in buckets]
    starts = [t0 + k * delta for k in range(len(buckets))]
    return TemporalGraph(node_ids, starts, snaps, delta, buckets)


def bucket_counts(timestamps: np.ndarray, delta: int, t0: int) -> np.ndarray:
    return np.bincount((timestamps - t0) // delta)


def select_delta(edge_events: Iterable[EdgeEvent], min_edges: int = 16, candidate_step: int = DAY,
                 t0: int | None = None) -> int:
    """Smallest multiple of ``candidate_step`` leaving no snapshot under ``min_edges``.

    Empty interior windows count as violations. If no window length up to
    the full span works, the first grid value covering the span is returned
    with a warning.
    """
    ts = np.array(sorted(e.timestamp for e in edge_events), dtype=np.int64)
    if ts.size == 0:
        raise ValueError("select_delta needs at least one event")
    if candidate_step <= 0:
        raise ConfigError("candidate_step must be positive")
    t0 = int(ts[0]) if t0 is None else t0
    span = int(ts[-1] - t0)
    k_max = span // candidate_step + 1  # first k with k*step > span
    for k in range(1, k_max + 1):
        if bucket_counts(ts, k * candidate_step, t0).min() >= min_edges:
            return k * candidate_step
    log.warning("select_delta: no window satisfies min_edges=%d; using full span", min_edges)
    return k_max * candidate_step


# ---------------------------------------------------------------- serialization

GRAPH_MAGIC = b"TGF1"


def dump_graph(g: Graph) -> bytes:
    """Binary container: magic, u32 counts, node ids, labels, sorted out-adjacency.

    Layout (little-endian): ``TGF1 | u32 n | u32 m | n x (u32 len, utf8 id)
    | n x i8 label | (n+1) x u32 indptr | m x u32 neighbor | m x u32 weight``.
    """
    n, m = g.num_nodes, len(g.out_indices)
    parts = [GRAPH_MAGIC, struct.pack("<II", n, m)]
    for u in g.node_ids:
        raw = u.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    parts.append(g.labels.astype("<i1").tobytes())
    parts.append(g.out_indptr.astype("<u4").tobytes())
    parts.append(g.out_indices.astype("<u4").tobytes())
    parts.append(g.out_weights.astype("<u4").tobytes())
    return b"".join(parts)


def load_graph(buf: bytes, offset: int = 0) -> tuple[Graph, int]:
    if buf[offset:offset + 4] != GRAPH_MAGIC:
        raise ValueError("not a TGF1 graph")
    n, m = struct.unpack_from("<II", buf, offset + 4)
    pos = offset + 12
    ids = []
    for _ in range(n):
        (ln,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        ids.append(bytes(buf[pos:pos + ln]).decode("utf-8"))
        pos += ln
    labels = np.frombuffer(buf, dtype="<i1", count=n, offset=pos).astype(np.int8)
    pos += n
    indptr = np.frombuffer(buf, dtype="<u4", count=n + 1, offset=pos).astype(np.int64)
    pos += 4 * (n + 1)
    idx = np.frombuffer(buf, dtype="<u4", count=m, offset=pos).astype(np.int64)
    pos += 4 * m
    w = np.frombuffer(buf, dtype="<u4", count=m, offset=pos).astype(np.int64)
    pos += 4 * m
    src = np.repeat(np.arange(n), np.diff(indptr))
    return Graph(ids, src, idx, w, labels=labels), pos


def text_dump(g: Graph) -> str:
    """Human-readable adjacency listing for debugging."""
    names = {BENIGN: "benign", TROLL: "troll", UNKNOWN: "unknown"}
    lines = [f"# nodes={g.num_nodes} edges={g.num_edges} unique={g.num_unique_edges}"]
    for i, u in enumerate(g.node_ids):
        nbrs = " ".join(f"{v}x{w}" for v, w in g.out_neighbors(i))
        lines.append(f"{u}\t{names[int(g.labels[i])]}\t-> {nbrs}")
    return "\n".join(lines) + "\n"
