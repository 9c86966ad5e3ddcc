"""Temporal link prediction: a SAGE encoder per snapshot, a GRU across
snapshots, and dot-product edge scores ``sigmoid(Z_t[u] . Z_t[v])``.

The training loop is written against a small encoder interface
(``forward`` / ``losses`` / ``backward``) so the same code drives the
in-process encoder here and the worker pool in :mod:`trollgraph.dist`.
Per-snapshot results are always combined in ascending snapshot order, which
makes single-process and distributed training bitwise identical.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import nn
from .features import Standardizer, label_aggregates
from .graph import TROLL, TemporalGraph
from .ingest import ConfigError
from .metrics import ranking_metrics
from .nn import MeanAggregator, Params
from .sage import init_sage, sage_hidden, sage_hidden_backward

log = logging.getLogger(__name__)

VARIANTS = ("recurrent", "static")
HIDDEN = 64
EMBED = 32


class TransportError(RuntimeError):
    """A worker failed, timed out or sent a corrupt message."""


# ---------------------------------------------------------------- params

def init_forecaster(in_dim: int, seed: int = 0, hidden: int = HIDDEN, embed: int = EMBED,
                    dtype=np.float32) -> Params:
    """SAGE (no head) + GRU(hidden->hidden) + projection(hidden->embed).

    Both variants use this exact tensor set; the static variant runs the
    gated cell with a zero previous state, so parameter counts match.
    """
    rng = np.random.default_rng(seed)
    p = init_sage(in_dim, hidden, n_classes=None, rng=rng, dtype=dtype)
    p.update(nn.init_gru(rng, hidden, hidden, dtype, prefix="temporal."))
    p["proj.W"] = nn.glorot(rng, hidden, embed, dtype)
    p["proj.b"] = np.zeros(embed, dtype=dtype)
    return p


def param_count(p: Params) -> int:
    return int(sum(v.size for v in p.values()))


def sage_part(p: Params) -> Params:
    return {k: v for k, v in p.items() if k.startswith("sage.")}


# ---------------------------------------------------------------- temporal stage

def temporal_scan(H: Sequence[np.ndarray], p: Params, variant: str):
    """Run the temporal cell over snapshot embeddings; returns (Z list, caches)."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    Z, caches = [], []
    h = None
    for Ht in H:
        prev = h if (variant == "recurrent" and h is not None) else np.zeros(
            (Ht.shape[0], p["temporal.U_z"].shape[0]), dtype=Ht.dtype)
        h, cache = nn.gru_cell(Ht, prev, p, prefix="temporal.")
        Z.append(nn.linear(h, p["proj.W"], p["proj.b"]))
        caches.append((cache, h))
    return Z, caches


def temporal_backward(caches, dZ: dict[int, np.ndarray], p: Params, variant: str):
    """BPTT from per-snapshot ``dL/dZ_t``. Returns (dH per snapshot or None, grads)."""
    grads: dict[str, np.ndarray] = {}
    dH: list[np.ndarray | None] = [None] * len(caches)
    if not dZ:
        return dH, grads
    last = max(dZ)
    carry = None
    for t in range(last, -1, -1):
        cache, h = caches[t]
        dh = carry
        if t in dZ:
            dhz, gW, gb = nn.linear_backward(dZ[t], h, p["proj.W"])
            nn.add_grads(grads, {"proj.W": gW, "proj.b": gb})
            dh = dhz if dh is None else dh + dhz
        if dh is None:
            continue
        dx, dprev, g = nn.gru_cell_backward(dh, cache, p, prefix="temporal.")
        nn.add_grads(grads, g)
        dH[t] = dx
        carry = dprev if variant == "recurrent" else None
    return dH, grads


def predict_link(Z: np.ndarray, u: int, v: int) -> float:
    n = Z.shape[0]
    if not (0 <= u < n and 0 <= v < n):
        raise IndexError(f"node id out of range: ({u}, {v}) for {n} nodes")
    return float(expit(np.dot(Z[u].astype(np.float64), Z[v].astype(np.float64))))


def edge_scores(Z: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    return np.sum(Z[pairs[:, 0]] * Z[pairs[:, 1]], axis=1)


def transition_loss(Z: np.ndarray, pos: np.ndarray, neg: np.ndarray, scale: float = 1.0):
    """Scaled mean BCE of edge probabilities from ``Z``; returns (loss, dZ)."""
    pairs = np.vstack([pos, neg]).astype(np.int64)
    y = np.r_[np.ones(len(pos)), np.zeros(len(neg))].astype(Z.dtype)
    s = edge_scores(Z, pairs)
    prob = expit(s)
    loss, dp = nn.binary_cross_entropy(prob, y)
    ds = (dp * prob * (1 - prob) * Z.dtype.type(scale))[:, None]
    dZ = np.zeros_like(Z)
    np.add.at(dZ, pairs[:, 0], ds * Z[pairs[:, 1]])
    np.add.at(dZ, pairs[:, 1], ds * Z[pairs[:, 0]])
    return float(loss) * scale, dZ


# ---------------------------------------------------------------- negatives

def _pair_key(u, v, n):
    a, b = (u, v) if u < v else (v, u)
    return a * n + b


def sample_negatives(positives: np.ndarray, node_count: int, count: int | None, rng: np.random.Generator,
                     population: tuple[np.ndarray, np.ndarray] | None = None, max_rounds: int = 50) -> np.ndarray:
    """Uniform random node pairs that are not positives (in either orientation).

    ``count`` defaults to ``len(positives)``. ``population`` optionally gives
    the candidate arrays for the first and second endpoint (e.g. trolls x
    benign users). Pairs are distinct and never self-loops.
    """
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
    count = len(positives) if count is None else count
    if count < 0:
        raise ValueError("count must be >= 0")
    first = np.arange(node_count) if population is None else np.asarray(population[0])
    second = np.arange(node_count) if population is None else np.asarray(population[1])
    seen = {_pair_key(int(u), int(v), node_count) for u, v in positives}
    out: list[tuple[int, int]] = []
    for _ in range(max_rounds):
        if len(out) >= count:
            break
        need = count - len(out)
        us = first[rng.integers(0, len(first), size=2 * need + 8)] if len(first) else np.empty(0, int)
        vs = second[rng.integers(0, len(second), size=2 * need + 8)] if len(second) else np.empty(0, int)
        for u, v in zip(us.tolist(), vs.tolist()):
            if u == v:
                continue
            k = _pair_key(u, v, node_count)
            if k in seen:
                continue
            seen.add(k)
            out.append((u, v))
            if len(out) == count:
                break
    if len(out) < count:
        raise ValueError(f"could only sample {len(out)} of {count} negatives; graph too dense")
    return np.array(out, dtype=np.int64).reshape(-1, 2)


# ---------------------------------------------------------------- data prep

@dataclass(frozen=True)
class SplitPlan:
    T: int
    n_train: int
    n_val: int
    n_test: int

    @property
    def val_stop(self) -> int:
        return self.n_train + self.n_val

    @property
    def test_start(self) -> int:
        return self.T - self.n_test

    @property
    def train_transitions(self) -> list[int]:
        """Source snapshots t whose target t+1 lies in the training window."""
        return list(range(0, self.n_train - 1))

    @property
    def val_transitions(self) -> list[int]:
        return list(range(self.n_train - 1, self.val_stop - 1))

    @property
    def test_transitions(self) -> list[int]:
        return list(range(self.test_start - 1, self.T - 1))


def plan_splits(T: int, train_frac=0.8, val_frac=0.05, test_frac=0.1) -> SplitPlan:
    """Temporal split: first ``train_frac`` of snapshots for training, the next
    ``val_frac`` for validation, the final ``test_frac`` for testing (each
    evaluation block at least one snapshot). Snapshots left over between
    validation and test only feed the recurrent state."""
    n_test = max(1, int(test_frac * T + 0.5))
    n_val = max(1, int(val_frac * T + 0.5))
    n_train = min(int(train_frac * T), T - n_val - n_test)
    if T < 4 or n_train < 2:
        raise ConfigError(f"need at least 4 snapshots with 2 for training, got T={T}")
    return SplitPlan(T, n_train, n_val, n_test)


def snapshot_features(tg: TemporalGraph, labels: np.ndarray, fit_until: int, dtype=np.float32) -> list[np.ndarray]:
    """15-wide label-aggregate features per snapshot, z-scored with statistics
    from snapshots ``[0, fit_until)``."""
    raw = [label_aggregates(g, labels)[0].values for g in tg.snapshots]
    std = Standardizer.fit(np.vstack(raw[:max(fit_until, 1)]))
    return [std.transform(x).astype(dtype) for x in raw]


def positives_of(tg: TemporalGraph) -> list[np.ndarray]:
    return [g.edge_array() for g in tg.snapshots]


# ---------------------------------------------------------------- encoders

@dataclass
class LossTask:
    t: int  # target snapshot; scores come from Z_{t-1}
    Z_prev: np.ndarray
    pos: np.ndarray
    neg: np.ndarray


class LocalEncoder:
    """In-process snapshot encoder."""

    def __init__(self, tg: TemporalGraph, features: Sequence[np.ndarray]):
        if len(features) != tg.T:
            raise ValueError(f"{len(features)} feature matrices for {tg.T} snapshots")
        self.aggs = [MeanAggregator.from_graph(g) for g in tg.snapshots]
        self.features = list(features)
        self._caches: dict[int, tuple] = {}
        self._params: Params | None = None

    def forward(self, sage_params: Params, version: int, ts: Sequence[int]) -> list[np.ndarray]:
        self._params = sage_params
        self._caches = {}
        out = []
        for t in ts:
            H, cache = sage_hidden(self.aggs[t], self.features[t], sage_params)
            self._caches[t] = cache
            out.append(H)
        return out

    def losses(self, tasks: Sequence[LossTask], scale: float, version: int) -> dict[int, tuple[float, np.ndarray]]:
        return {task.t: transition_loss(task.Z_prev, task.pos, task.neg, scale) for task in tasks}

    def backward(self, dH: dict[int, np.ndarray], version: int) -> list[tuple[int, Params]]:
        return [(t, sage_hidden_backward(self.aggs[t], self._caches[t], dH[t], self._params)) for t in sorted(dH)]

    def close(self):
        pass


def reduce_grads(contribs: Sequence[tuple[int, Params]]) -> Params:
    """Sum per-snapshot gradient dicts in ascending snapshot order."""
    acc: Params = {}
    for _, g in sorted(contribs, key=lambda x: x[0]):
        nn.add_grads(acc, g)
    return acc


# ---------------------------------------------------------------- training

@dataclass
class ForecastConfig:
    variant: str = "recurrent"
    lr: float = 1e-3
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    eval_seed: int = 12345
    hidden: int = HIDDEN
    embed: int = EMBED
    train_frac: float = 0.8
    val_frac: float = 0.05
    test_frac: float = 0.1
    epoch_retries: int = 1


@dataclass
class ForecastResult:
    params: Params
    variant: str
    plan: SplitPlan
    best_epoch: int
    best_val_ap: float
    log: list[dict] = field(default_factory=list)
    version: int = 0


def _val_negatives(plan: SplitPlan, pos: list[np.ndarray], n: int, eval_seed: int) -> dict[int, np.ndarray]:
    return {t: sample_negatives(pos[t + 1], n, None, np.random.default_rng([eval_seed, 1, t]))
            for t in plan.val_transitions if len(pos[t + 1])}


def _mean_ap(Z: list[np.ndarray], ts: Sequence[int], pos, negs) -> float:
    aps = []
    for t in ts:
        if t not in negs:
            continue
        s = np.r_[edge_scores(Z[t], pos[t + 1]), edge_scores(Z[t], negs[t])]
        y = np.r_[np.ones(len(pos[t + 1])), np.zeros(len(negs[t]))]
        aps.append(ranking_metrics(s, y)["ap"])
    return float(np.mean(aps)) if aps else 0.0


def _run_epoch(encoder, params: Params, cfg: ForecastConfig, plan: SplitPlan, pos, n: int, epoch: int,
               version: int, val_negs):
    n_fwd = plan.val_stop - 1
    H = encoder.forward(sage_part(params), version, list(range(n_fwd)))
    Z, caches = temporal_scan(H, params, cfg.variant)
    rng = np.random.default_rng([cfg.seed, 7, epoch])
    trans = [t for t in plan.train_transitions if len(pos[t + 1])]
    tasks = [LossTask(t + 1, Z[t], pos[t + 1], sample_negatives(pos[t + 1], n, None, rng)) for t in trans]
    scale = 1.0 / max(len(tasks), 1)
    results = encoder.losses(tasks, scale, version)
    loss = 0.0
    dZ = {}
    for task in tasks:
        lt, dz = results[task.t]
        loss += lt
        dZ[task.t - 1] = dz
    val_ap = _mean_ap(Z, plan.val_transitions, pos, val_negs)
    dH, grads = temporal_backward(caches, dZ, params, cfg.variant)
    contribs = encoder.backward({t: d for t, d in enumerate(dH) if d is not None}, version)
    nn.add_grads(grads, reduce_grads(contribs))
    return loss, val_ap, grads


def train_forecaster(tg: TemporalGraph, labels: np.ndarray, config: ForecastConfig | None = None,
                     encoder=None, features: Sequence[np.ndarray] | None = None) -> ForecastResult:
    """Train on transitions inside the first 80% of snapshots, early-stopping
    on validation AP (patience in epochs). Returns the best-on-validation params.

    ``encoder`` defaults to :class:`LocalEncoder`; a distributed encoder may
    raise :class:`TransportError`, in which case the epoch is retried up to
    ``epoch_retries`` times before the error propagates. Parameters are only
    updated after an epoch completes.
    """
    cfg = config or ForecastConfig()
    plan = plan_splits(tg.T, cfg.train_frac, cfg.val_frac, cfg.test_frac)
    if features is None:
        features = snapshot_features(tg, labels, plan.n_train)
    encoder = encoder or LocalEncoder(tg, features)
    n = tg.num_nodes
    pos = positives_of(tg)
    params = init_forecaster(features[0].shape[1], cfg.seed, cfg.hidden, cfg.embed)
    states: dict[str, nn.AdamState] = {}
    val_negs = _val_negatives(plan, pos, n, cfg.eval_seed)
    best = (-1.0, -1, params)
    history = []
    wait = 0
    version = 0
    for epoch in range(cfg.max_epochs):
        for attempt in range(cfg.epoch_retries + 1):
            try:
                loss, val_ap, grads = _run_epoch(encoder, params, cfg, plan, pos, n, epoch, version, val_negs)
                break
            except TransportError as exc:
                if attempt == cfg.epoch_retries:
                    raise
                log.warning("epoch %d failed (%s); retrying", epoch, exc)
        history.append({"epoch": epoch, "loss": loss, "val_ap": val_ap})
        if val_ap > best[0]:
            best = (val_ap, epoch, {k: v.copy() for k, v in params.items()})
            wait = 0
        else:
            wait += 1
        if wait >= cfg.patience:
            break
        params = dict(params)
        nn.adam_step(params, grads, states, cfg.lr)
        version += 1
    return ForecastResult(best[2], cfg.variant, plan, best[1], best[0], history, version)


# ---------------------------------------------------------------- inference / evaluation

def forecast_forward(tg: TemporalGraph, features: Sequence[np.ndarray], params: Params, variant: str,
                     encoder=None) -> list[np.ndarray]:
    """Per-snapshot 32-wide embeddings Z_1..Z_T."""
    if len(features) != tg.T:
        raise ValueError(f"{len(features)} feature matrices for {tg.T} snapshots")
    encoder = encoder or LocalEncoder(tg, features)
    H = encoder.forward(sage_part(params), 0, list(range(tg.T)))
    return temporal_scan(H, params, variant)[0]


def _sub_report(Z, pos, neg):
    if len(pos) == 0 or len(neg) == 0:
        return None
    s = np.r_[edge_scores(Z, pos), edge_scores(Z, neg)]
    y = np.r_[np.ones(len(pos)), np.zeros(len(neg))]
    return ranking_metrics(s, y)


def evaluate_forecaster(result_or_params, tg: TemporalGraph, labels: np.ndarray, variant: str | None = None,
                        features: Sequence[np.ndarray] | None = None, eval_seed: int = 12345,
                        plan: SplitPlan | None = None) -> dict:
    """Test-period AUC/AP overall and for troll-troll (TTE) and troll-user (TUE) edges.

    Sub-report negatives are drawn from the matching endpoint populations.
    TTE fields are None when the test period holds no troll-troll edge.
    """
    if isinstance(result_or_params, ForecastResult):
        params, variant, plan = result_or_params.params, result_or_params.variant, result_or_params.plan
    else:
        params = result_or_params
    plan = plan or plan_splits(tg.T)
    labels = np.asarray(labels)
    if features is None:
        features = snapshot_features(tg, labels, plan.n_train)
    Z = forecast_forward(tg, features, params, variant)
    n = tg.num_nodes
    trolls = np.nonzero(labels == TROLL)[0]
    users = np.nonzero(labels != TROLL)[0]
    per = []
    for t in plan.test_transitions:
        pos = tg.snapshots[t + 1].edge_array()
        if len(pos) == 0:
            continue
        rng = np.random.default_rng([eval_seed, 2, t])
        row = {"t": t + 1, "n_pos": int(len(pos))}
        row.update(_sub_report(Z[t], pos, sample_negatives(pos, n, None, rng)))
        is_troll = labels[pos] == TROLL
        tte = pos[is_troll.all(axis=1)]
        tue = pos[is_troll.sum(axis=1) == 1]
        for name, sub, popn in (("tte", tte, (trolls, trolls)), ("tue", tue, (trolls, users))):
            rep = None
            if len(sub):
                rep = _sub_report(Z[t], sub, sample_negatives(pos, n, len(sub), rng, population=popn))
            row[f"{name}_auc"] = rep["auc"] if rep else None
            row[f"{name}_ap"] = rep["ap"] if rep else None
        per.append(row)

    def avg(key):
        vals = [r[key] for r in per if r.get(key) is not None]
        return float(np.mean(vals)) if vals else None

    report = {k: avg(k) for k in ("auc", "ap", "tte_auc", "tte_ap", "tue_auc", "tue_ap")}
    report["per_transition"] = per
    report["variant"] = variant
    return report


def clone_params(p: Params) -> Params:
    return copy.deepcopy(p)
