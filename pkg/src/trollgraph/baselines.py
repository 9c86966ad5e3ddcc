"""Comparison methods: PageRank scores, tabular per-user features, a Random
Forest written from scratch, and stratified k-fold cross-validation."""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import nn
from .graph import Graph
from .ingest import ConfigError, Kind, Platform, normalize_title
from .metrics import EvalReport, classification_report

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- PageRank

def pagerank(graph: Graph, damping: float = 0.85, tol: float = 1e-10, max_iter: int = 1000,
             weighted: bool = True, reverse: bool = False) -> np.ndarray:
    """Power iteration with uniform teleport; dangling mass is spread uniformly.

    Rank flows along edge direction (source -> target), or against it when
    ``reverse`` is set. Multiplicities act as edge weights when ``weighted``.
    Stops when the L1 change drops below ``tol``.
    """
    n = graph.num_nodes
    if n == 0:
        raise ValueError("pagerank of an empty graph")
    src = np.repeat(np.arange(n), np.diff(graph.out_indptr))
    dst = graph.out_indices
    w = graph.out_weights.astype(np.float64) if weighted else np.ones(len(dst))
    if reverse:
        src, dst = dst, src
    out_w = np.bincount(src, weights=w, minlength=n)
    dangling = out_w == 0
    # column-stochastic transition: P[dst, src] = w / out_w[src]
    P = sp.csr_array((w / np.where(dangling, 1.0, out_w)[src], (dst, src)), shape=(n, n))
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        new = damping * (P @ x + x[dangling].sum() / n) + (1 - damping) / n
        new /= new.sum()
        err = np.abs(new - x).sum()
        x = new
        if err < tol:
            break
    else:
        log.warning("pagerank did not converge in %d iterations", max_iter)
    return x


# ---------------------------------------------------------------- tabular features

X_COLUMNS = ("avg_mentions_per_tweet", "tweet_count", "followers_count", "following_count",
             "description_length", "avg_tweet_length", "fraction_retweets")
REDDIT_COLUMNS = ("fraction_same_title_as_troll", "fraction_comments_reply_to_troll",
                  "fraction_replies_received_from_troll", "total_submissions", "total_comments",
                  "account_age_days")


@dataclass
class TabularRows:
    users: list[str]
    columns: tuple[str, ...]
    values: np.ndarray
    missing_profile: int = 0

    def select(self, users: Sequence[str]) -> np.ndarray:
        pos = {u: i for i, u in enumerate(self.users)}
        out = np.zeros((len(users), len(self.columns)))
        for i, u in enumerate(users):
            if u in pos:
                out[i] = self.values[pos[u]]
        return out

    def write_csv(self, stream, labels: dict[str, str] | None = None) -> None:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["user_id", *self.columns, *(["label"] if labels is not None else [])])
        for u, row in zip(self.users, self.values):
            extra = [labels.get(u, "benign")] if labels is not None else []
            w.writerow([u, *(repr(float(x)) for x in row), *extra])


def _ratio(a, b) -> float:
    return a / b if b else 0.0


def tabular_features(records: Iterable, troll_set: set[str], platform) -> TabularRows:
    """Per-user interaction and profile features.

    X: average mentions per tweet, tweet count, follower and following
    counts, description length, average tweet length (characters) and
    fraction of retweets. Reddit: fraction of the user's submissions whose
    title matches a troll submission, fraction of comments replying to a
    troll, fraction of replies received that came from trolls, submission
    and comment totals, and account age in days (0 when unknown).
    Fractions with a zero denominator are 0.
    """
    platform = Platform.parse(platform)
    records = list(records)
    if platform is Platform.X:
        return _x_rows(records)
    if platform is Platform.REDDIT:
        return _reddit_rows(records, troll_set)
    raise ConfigError(f"unknown platform {platform}")


def _x_rows(records) -> TabularRows:
    acc = defaultdict(lambda: {"n": 0, "mentions": 0, "chars": 0, "rt": 0, "profile": None, "last": -1})
    for r in records:
        a = acc[r.author]
        a["n"] += 1
        a["mentions"] += len(r.mentioned_authors)
        a["chars"] += len(r.text or "")
        a["rt"] += r.kind is Kind.RETWEET
        if r.profile and r.created_at >= a["last"]:
            a["profile"], a["last"] = r.profile, r.created_at
    users = sorted(acc)
    rows, missing = [], 0
    for u in users:
        a = acc[u]
        prof = a["profile"] or {}
        if not prof:
            missing += 1
        rows.append([
            _ratio(a["mentions"], a["n"]), a["n"],
            float(prof.get("followers_count", 0) or 0), float(prof.get("following_count", 0) or 0),
            len(prof.get("description") or ""), _ratio(a["chars"], a["n"]), _ratio(a["rt"], a["n"]),
        ])
    if missing:
        log.info("tabular_features: %d user(s) without profile fields default to 0", missing)
    return TabularRows(users, X_COLUMNS, np.array(rows, dtype=np.float64).reshape(-1, len(X_COLUMNS)), missing)


def _reddit_rows(records, troll_set) -> TabularRows:
    troll_titles = {normalize_title(r.title) for r in records
                    if r.kind is Kind.SUBMISSION and r.title and r.author in troll_set}
    acc = defaultdict(lambda: defaultdict(float))
    first_ts: dict[str, int] = {}
    for r in records:
        a = acc[r.author]
        first_ts[r.author] = min(first_ts.get(r.author, r.created_at), r.created_at)
        if r.kind is Kind.SUBMISSION:
            a["subs"] += 1
            if r.title and normalize_title(r.title) in troll_titles:
                a["subs_troll_title"] += 1
        elif r.kind is Kind.COMMENT:
            a["comments"] += 1
            if r.parent_author in troll_set:
                a["comments_to_troll"] += 1
            if r.parent_author:
                b = acc[r.parent_author]
                b["replies_received"] += 1
                if r.author in troll_set:
                    b["replies_from_troll"] += 1
        if r.profile and "account_created_at" in r.profile:
            a["created"] = float(r.profile["account_created_at"])
    end = max((r.created_at for r in records), default=0)
    users = sorted(acc)
    rows, missing = [], 0
    for u in users:
        a = acc[u]
        if "created" not in a:
            missing += 1
        age = (end - a["created"]) / 86400 if "created" in a else 0.0
        rows.append([_ratio(a["subs_troll_title"], a["subs"]), _ratio(a["comments_to_troll"], a["comments"]),
                     _ratio(a["replies_from_troll"], a["replies_received"]), a["subs"], a["comments"], age])
    return TabularRows(users, REDDIT_COLUMNS, np.array(rows, dtype=np.float64).reshape(-1, len(REDDIT_COLUMNS)), missing)


# ---------------------------------------------------------------- Random Forest

@dataclass
class Tree:
    feature: np.ndarray    # -1 at leaves
    threshold: np.ndarray  # go left when x[feature] <= threshold
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray     # (nodes, n_classes) training class counts

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_leaf: int = 1
    seed: int = 0


@dataclass
class ForestModel:
    trees: list[Tree]
    classes: np.ndarray
    config: ForestConfig = field(default_factory=ForestConfig)

    def votes(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float32)
        v = np.zeros((len(X), len(self.classes)))
        for t in self.trees:
            leaf = t.apply(X)
            v[np.arange(len(X)), t.counts[leaf].argmax(axis=1)] += 1
        return v

    def predict_proba(self, X) -> np.ndarray:
        """Fraction of trees voting for each class."""
        return self.votes(X) / len(self.trees)

    def predict(self, X) -> np.ndarray:
        return self.classes[self.votes(X).argmax(axis=1)]

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {"forest.classes": self.classes.astype(np.float32)}
        for i, t in enumerate(self.trees):
            for name in ("feature", "threshold", "left", "right", "counts"):
                out[f"tree{i}.{name}"] = getattr(t, name).astype(np.float32)
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "ForestModel":
        n = sum(1 for k in tensors if k.endswith(".feature"))
        trees = []
        for i in range(n):
            g = lambda k: tensors[f"tree{i}.{k}"]  # noqa: E731
            trees.append(Tree(g("feature").astype(np.int64), g("threshold").astype(np.float32),
                              g("left").astype(np.int64), g("right").astype(np.int64), g("counts").astype(np.int64)))
        return cls(trees, tensors["forest.classes"].astype(np.int64))


def _best_split(X, y_idx, n_classes, feats, min_leaf):
    """Best Gini split over ``feats``; returns (feature, threshold, gain) or None."""
    n = len(y_idx)
    total = np.bincount(y_idx, minlength=n_classes).astype(np.float64)
    parent = 1.0 - ((total / n) ** 2).sum()
    best = None
    for f in feats:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), y_idx[order]] = 1
        left = np.cumsum(onehot, axis=0)[:-1]
        nl = np.arange(1, n, dtype=np.float64)
        nr = n - nl
        right = total - left
        gini_l = 1.0 - ((left / nl[:, None]) ** 2).sum(axis=1)
        gini_r = 1.0 - ((right / nr[:, None]) ** 2).sum(axis=1)
        imp = (nl * gini_l + nr * gini_r) / n
        valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
        if not valid.any():
            continue
        imp = np.where(valid, imp, np.inf)
        i = int(np.argmin(imp))
        gain = parent - imp[i]
        if best is None or gain > best[2] + 1e-12:
            thr = np.float32((np.float64(xs[i]) + np.float64(xs[i + 1])) / 2)
            if not thr < xs[i + 1]:  # rounding collapsed the midpoint
                thr = xs[i]
            best = (int(f), thr, gain)
    return best


def _grow(X, y_idx, n_classes, rng, cfg: ForestConfig) -> Tree:
    n_feat = X.shape[1]
    m = max(1, int(np.sqrt(n_feat)))
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(rows):
        feature.append(-1)
        threshold.append(np.float32(0))
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y_idx[rows], minlength=n_classes))
        return len(feature) - 1

    stack = [(new_node(np.arange(len(y_idx))), np.arange(len(y_idx)), 0)]
    while stack:
        node, rows, depth = stack.pop()
        if len(np.unique(y_idx[rows])) < 2 or len(rows) < 2 * cfg.min_leaf:
            continue
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            continue
        feats = rng.choice(n_feat, size=m, replace=False)
        split = _best_split(X[rows], y_idx[rows], n_classes, feats, cfg.min_leaf)
        if split is None or split[2] <= 0:
            continue
        f, thr, _ = split
        mask = X[rows, f] <= thr
        feature[node], threshold[node] = f, thr
        lrows, rrows = rows[mask], rows[~mask]
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float32),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(counts, dtype=np.int64).reshape(-1, n_classes))


def random_forest(X, y, config: ForestConfig | None = None) -> ForestModel:
    """Gini trees on bootstrap samples, sqrt(D) candidate features per split.

    Features are compared in float32 so a saved forest predicts identically.
    """
    cfg = config or ForestConfig()
    X = np.asarray(X, dtype=np.float32)
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("random_forest: empty training set")
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D and aligned with y")
    classes, y_idx = np.unique(y, return_inverse=True)
    rng = np.random.default_rng(cfg.seed)
    trees = []
    for _ in range(cfg.n_trees):
        boot = rng.integers(0, len(y), size=len(y))
        trees.append(_grow(X[boot], y_idx[boot], len(classes), rng, cfg))
    return ForestModel(trees, classes, cfg)


def save_forest(path, model: ForestModel) -> None:
    nn.save_checkpoint(path, model.to_tensors())


def load_forest(path) -> ForestModel:
    return ForestModel.from_tensors(nn.load_checkpoint(path))


# ---------------------------------------------------------------- cross-validation

def stratified_folds(y, k: int, seed: int = 0) -> list[np.ndarray]:
    """Shuffle each class and deal it round-robin across ``k`` folds.

    Falls back to plain shuffled folds (with a warning) when some class has
    fewer than ``k`` members.
    """
    y = np.asarray(y)
    if k < 2 or len(y) < k:
        raise ValueError(f"need 2 <= k <= {len(y)} rows, got k={k}")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(y, return_counts=True)
    folds: list[list[int]] = [[] for _ in range(k)]
    if counts.min() < k:
        log.warning("kfold: a class has fewer than %d members; using unstratified folds", k)
        for i, r in enumerate(rng.permutation(len(y))):
            folds[i % k].append(int(r))
    else:
        pos = 0
        for c in classes:
            for r in rng.permutation(np.nonzero(y == c)[0]):
                folds[pos % k].append(int(r))
                pos += 1
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


FitPredict = Callable[[np.ndarray, np.ndarray, int], tuple[np.ndarray, np.ndarray]]


def kfold_cv(y, fit_predict: FitPredict, k: int = 10, seed: int = 0, metadata: dict | None = None) -> EvalReport:
    """Run ``fit_predict(train_idx, test_idx, fold)`` per fold; it returns
    (predicted labels, class-1 scores) for ``test_idx``. Reports mean and
    sample std of AUC, precision, recall and F1 across folds."""
    y = np.asarray(y)
    folds = stratified_folds(y, k, seed)
    results = []
    for i, test in enumerate(folds):
        train = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        pred, score = fit_predict(train, test, i)
        rep = classification_report(np.asarray(pred), y[test], None if score is None else np.asarray(score))
        results.append(rep)
    meta = {"k": k, "seed": seed, **(metadata or {})}
    return EvalReport.from_folds(results, meta)


def holdout_split(y, test_frac: float = 0.2, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stratified train/test split (80-20 by default)."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(y):
        idx = rng.permutation(np.nonzero(y == c)[0])
        n_test = int(round(test_frac * len(idx)))
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def forest_fit_predict(X, y, config: ForestConfig | None = None) -> FitPredict:
    X = np.asarray(X)
    y = np.asarray(y)
    base = config or ForestConfig()

    def run(train, test, fold):
        cfg = ForestConfig(base.n_trees, base.max_depth, base.min_leaf, base.seed + fold)
        model = random_forest(X[train], y[train], cfg)
        proba = model.predict_proba(X[test])
        pos = np.searchsorted(model.classes, 1)
        score = proba[:, pos] if pos < len(model.classes) and model.classes[pos] == 1 else np.zeros(len(test))
        return model.predict(X[test]), score

    return run
