"""Two-layer GraphSAGE (mean aggregator) encoder and troll/benign node classifier."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import MeanAggregator, Params

log = logging.getLogger(__name__)

HIDDEN = 64


def init_sage(in_dim: int, hidden: int = HIDDEN, n_classes: int | None = 2, seed: int = 0,
              dtype=np.float32, rng: np.random.Generator | None = None, prefix: str = "sage.") -> Params:
    """Glorot-initialized weights for layer1 (2D->h), layer2 (2h->h) and an optional head (h->classes)."""
    rng = rng if rng is not None else np.random.default_rng(seed)
    p = {
        f"{prefix}l1.W": nn.glorot(rng, 2 * in_dim, hidden, dtype),
        f"{prefix}l1.b": np.zeros(hidden, dtype=dtype),
        f"{prefix}l2.W": nn.glorot(rng, 2 * hidden, hidden, dtype),
        f"{prefix}l2.b": np.zeros(hidden, dtype=dtype),
    }
    if n_classes:
        p[f"{prefix}head.W"] = nn.glorot(rng, hidden, n_classes, dtype)
        p[f"{prefix}head.b"] = np.zeros(n_classes, dtype=dtype)
    return p


def _layer(agg: MeanAggregator, h: np.ndarray, W, b):
    cat = np.hstack([h, agg(h)])
    pre = nn.linear(cat, W, b)
    return nn.activation(pre, "relu"), (cat, pre)


def sage_hidden(agg: MeanAggregator, X: np.ndarray, p: Params, prefix: str = "sage."):
    """Node embeddings after both ReLU layers. Returns (H, cache)."""
    if X.shape[0] != agg.n:
        raise nn.ShapeError(f"sage: X has {X.shape[0]} rows for {agg.n} nodes")
    X = X.astype(p[f"{prefix}l1.W"].dtype, copy=False)
    h1, c1 = _layer(agg, X, p[f"{prefix}l1.W"], p[f"{prefix}l1.b"])
    h2, c2 = _layer(agg, h1, p[f"{prefix}l2.W"], p[f"{prefix}l2.b"])
    return h2, (X, c1, h1, c2)


def sage_hidden_backward(agg: MeanAggregator, cache, dH: np.ndarray, p: Params, prefix: str = "sage.") -> Params:
    X, (cat1, pre1), h1, (cat2, pre2) = cache
    g = {}
    d = nn.activation_backward(dH, pre2, None, "relu")
    dcat, g[f"{prefix}l2.W"], g[f"{prefix}l2.b"] = nn.linear_backward(d, cat2, p[f"{prefix}l2.W"])
    k = h1.shape[1]
    dh1 = dcat[:, :k] + agg.backward(dcat[:, k:])
    d = nn.activation_backward(dh1, pre1, None, "relu")
    _, g[f"{prefix}l1.W"], g[f"{prefix}l1.b"] = nn.linear_backward(d, cat1, p[f"{prefix}l1.W"])
    return g


def sage_forward(graph_or_agg, X: np.ndarray, p: Params, prefix: str = "sage."):
    """Return (H, logits). ``logits`` is None when the params carry no head."""
    agg = graph_or_agg if isinstance(graph_or_agg, MeanAggregator) else MeanAggregator.from_graph(
        graph_or_agg, "undirected", dtype=p[f"{prefix}l1.W"].dtype)
    H, _ = sage_hidden(agg, X, p, prefix)
    if f"{prefix}head.W" not in p:
        return H, None
    return H, nn.linear(H, p[f"{prefix}head.W"], p[f"{prefix}head.b"])


def extract_embeddings(graph_or_agg, X: np.ndarray, p: Params) -> np.ndarray:
    """The 64-wide pre-head representation of every node."""
    return sage_forward(graph_or_agg, X, p)[0]


def predict_proba(graph_or_agg, X: np.ndarray, p: Params) -> np.ndarray:
    _, logits = sage_forward(graph_or_agg, X, p)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def classification_loss(agg: MeanAggregator, X: np.ndarray, y: np.ndarray, idx: np.ndarray, p: Params):
    """Cross-entropy on the rows ``idx``; returns (loss, grads, logits)."""
    H, cache = sage_hidden(agg, X, p)
    logits = nn.linear(H, p["sage.head.W"], p["sage.head.b"])
    loss, dsel = nn.cross_entropy_2class(logits[idx], y[idx])
    dlogits = np.zeros_like(logits)
    dlogits[idx] = dsel
    dH, gW, gb = nn.linear_backward(dlogits, H, p["sage.head.W"])
    grads = sage_hidden_backward(agg, cache, dH, p)
    grads["sage.head.W"], grads["sage.head.b"] = gW, gb
    return loss, grads, logits


@dataclass
class DetectorConfig:
    epochs: int = 100
    lr: float = 1e-3
    hidden: int = HIDDEN
    seed: int = 0


def train_detector(graph_or_agg, X: np.ndarray, labels: np.ndarray, train_idx, config: DetectorConfig | None = None):
    """Full-batch training with Adam and cross-entropy on the training nodes.

    Returns (params, log); each log entry holds the loss and training
    accuracy measured before that epoch's update.
    """
    cfg = config or DetectorConfig()
    X = np.asarray(X, dtype=np.float32)
    agg = graph_or_agg if isinstance(graph_or_agg, MeanAggregator) else MeanAggregator.from_graph(graph_or_agg)
    y = np.asarray(labels, dtype=np.int64)
    idx = np.asarray(train_idx, dtype=np.int64)
    if len(np.unique(y[idx])) < 2:
        log.warning("train_detector: training set has a single class")
    p = init_sage(X.shape[1], cfg.hidden, 2, seed=cfg.seed)
    opt = nn.Adam(p, lr=cfg.lr)
    history = []
    for epoch in range(cfg.epochs):
        loss, grads, logits = classification_loss(agg, X, y, idx, opt.params)
        acc = float((logits[idx].argmax(axis=1) == y[idx]).mean())
        opt.step(grads)
        history.append({"epoch": epoch, "loss": loss, "train_acc": acc})
    return opt.params, history
