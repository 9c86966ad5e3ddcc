"""Troll detection pipeline: graph + features from records, a balanced
evaluation pool, and cross-validated SAGE / Random Forest / PageRank runs
over identical folds."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import ForestConfig, forest_fit_predict, kfold_cv, pagerank, tabular_features
from .features import FeatureMatrix, Standardizer, detection_features, fuse_embeddings, mask_groups
from .graph import BENIGN, TROLL, Graph, build_graph
from .ingest import EdgeRules, extract_edges
from .metrics import EvalReport
from .nn import MeanAggregator
from .sage import DetectorConfig, extract_embeddings, predict_proba, train_detector

log = logging.getLogger(__name__)


@dataclass
class DetectionData:
    graph: Graph
    features: FeatureMatrix
    y: np.ndarray          # per node, unknown read as benign
    pool: np.ndarray       # node indices used for evaluation
    records: list = field(default_factory=list)
    platform: str = "X"

    @property
    def pool_labels(self) -> np.ndarray:
        return self.y[self.pool]

    def with_graph(self, graph: Graph) -> "DetectionData":
        """Same pool and labels; features recomputed on ``graph`` (same node index)."""
        feats = detection_features(graph)
        emb = [g for g in self.features.groups if g.name == "embedding"]
        if emb:
            sl = self.features.group_slice("embedding")
            extra = FeatureMatrix(self.features.values[:, sl], [replace(emb[0], start=0)])
            feats = feats.concat(extra)
        return replace(self, graph=graph, features=feats)

    def with_embeddings(self, table) -> tuple["DetectionData", int]:
        fused, missing = fuse_embeddings(detection_features(self.graph), table, self.graph.node_ids)
        return replace(self, features=fused), missing


def evaluation_pool(y: np.ndarray, seed: int = 0, ratio: float = 1.0) -> np.ndarray:
    """All trolls plus ``ratio`` times as many benign nodes drawn at random."""
    trolls = np.nonzero(y == TROLL)[0]
    benign = np.nonzero(y == BENIGN)[0]
    n_b = min(len(benign), int(round(ratio * len(trolls)))) if len(trolls) else len(benign)
    rng = np.random.default_rng([seed, 3])
    pick = np.sort(rng.choice(benign, size=n_b, replace=False)) if n_b else np.zeros(0, np.int64)
    return np.sort(np.concatenate([trolls, pick]))


def prepare(records, labels: dict[str, str], platform="X", pool_seed: int = 0,
            rules: EdgeRules | None = None) -> DetectionData:
    edges, skips = extract_edges(records, rules or EdgeRules())
    if skips.total:
        log.info("prepare: skipped edges %s", dict(skips.counts))
    g = build_graph(edges, labels)
    y, _ = g.modeling_labels()
    y = y.astype(np.int64)
    return DetectionData(g, detection_features(g), y, evaluation_pool(y, pool_seed), list(records), str(platform))


# ---------------------------------------------------------------- SAGE

@dataclass
class PipelineConfig:
    folds: int = 10
    seed: int = 0
    epochs: int = 100
    lr: float = 1e-3
    hidden: int = 64
    classifier: str = "head"  # or "rf": SAGE embeddings fed to a Random Forest
    n_trees: int = 100
    # multiplier for raw embedding columns; None means 1/sqrt(embedding width)
    embedding_scale: float | None = None

    def detector(self) -> DetectorConfig:
        return DetectorConfig(self.epochs, self.lr, self.hidden, self.seed)


def standardized(fm: FeatureMatrix, train_rows, embedding_scale: float | None = None) -> np.ndarray:
    """Z-score every non-embedding column using ``train_rows``.

    Embedding columns are not standardized, only multiplied by
    ``embedding_scale`` (default 1/sqrt(width)). At unit scale a few hundred
    labelled nodes can be separated by the embedding noise alone, so
    uninformative vectors would crowd out the topological signal.
    """
    topo = [g for g in fm.groups if g.name != "embedding"]
    stop = max((g.stop for g in topo), default=0)
    out = np.array(fm.values, dtype=np.float64)
    if stop:
        out = Standardizer.fit(fm.values, rows=train_rows, columns=slice(0, stop)).transform(fm.values)
    emb = [g for g in fm.groups if g.name == "embedding"]
    if emb:
        sl = fm.group_slice("embedding")
        width = sl.stop - sl.start
        out[:, sl] *= embedding_scale if embedding_scale is not None else 1.0 / np.sqrt(max(width, 1))
    return out


def sage_fit_predict(data: DetectionData, config: PipelineConfig, drop: tuple[str, ...] = ()):
    agg = MeanAggregator.from_graph(data.graph)

    def run(train_pos, test_pos, fold):
        train, test = data.pool[train_pos], data.pool[test_pos]
        X = standardized(data.features, train, config.embedding_scale)
        X = mask_groups(data.features, drop, X).astype(np.float32)
        params, _ = train_detector(agg, X, data.y, train, config.detector())
        if config.classifier == "rf":
            H = extract_embeddings(agg, X, params)
            run_rf = forest_fit_predict(H, data.y, ForestConfig(config.n_trees, seed=config.seed))
            return run_rf(train, test, fold)
        proba = predict_proba(agg, X, params)[test, 1]
        return (proba > 0.5).astype(np.int64), proba

    return run


def _check_drop(fm: FeatureMatrix, drop) -> None:
    names = {g.name for g in fm.groups}
    unknown = set(drop) - names
    if unknown:
        raise KeyError(f"unknown feature group(s) {sorted(unknown)}")
    if names <= set(drop):
        raise ValueError("cannot remove every feature group")


def sage_cv(data: DetectionData, config: PipelineConfig | None = None, drop: tuple[str, ...] = ()) -> EvalReport:
    cfg = config or PipelineConfig()
    _check_drop(data.features, drop)
    meta = {"method": "sage", "features": data.features.width, "dropped": sorted(drop), "classifier": cfg.classifier}
    return kfold_cv(data.pool_labels, sage_fit_predict(data, cfg, tuple(drop)), cfg.folds, cfg.seed, meta)


# ---------------------------------------------------------------- baselines on the same pool

def tabular_cv(data: DetectionData, config: PipelineConfig | None = None) -> EvalReport:
    cfg = config or PipelineConfig()
    trolls = {data.graph.node_ids[i] for i in np.nonzero(data.y == TROLL)[0]}
    rows = tabular_features(data.records, trolls, data.platform)
    X = rows.select([data.graph.node_ids[i] for i in data.pool])
    run = forest_fit_predict(X, data.pool_labels, ForestConfig(cfg.n_trees, seed=cfg.seed))
    return kfold_cv(data.pool_labels, run, cfg.folds, cfg.seed, {"method": "rf_tabular", "columns": list(rows.columns)})


def pagerank_cv(data: DetectionData, config: PipelineConfig | None = None) -> EvalReport:
    """PageRank score (rank flowing to the user being interacted with) as the
    single feature of the same Random Forest."""
    cfg = config or PipelineConfig()
    pr = pagerank(data.graph, reverse=True)
    X = pr[data.pool][:, None]
    run = forest_fit_predict(X, data.pool_labels, ForestConfig(cfg.n_trees, seed=cfg.seed))
    return kfold_cv(data.pool_labels, run, cfg.folds, cfg.seed, {"method": "pagerank_rf"})
