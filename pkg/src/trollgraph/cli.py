"""``trollgraph`` command line.

Every run writes into ``--out``: the task's artifacts, ``config.json`` (the
fully resolved config) and ``manifest.json`` (config, hash, versions, seeds,
artifact digests, timestamp). ``--config manifest.json`` replays a run.

Exit codes: 0 ok, 2 config error, 3 data error, 4 training error,
5 transport error. Failures print a JSON error object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import platform as _platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config, schema
from .forecast import TransportError
from .ingest import ConfigError, EdgeRules, Platform, extract_edges, parse_records, read_labels, record_to_json
from .metrics import canonical_json, config_hash

log = logging.getLogger("trollgraph")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAIN, EXIT_TRANSPORT = 0, 2, 3, 4, 5

COMMANDS = {
    "ingest": "ingest",
    "build-graph": "graph",
    "select-delta": "delta",
    "featurize": "featurize",
    "embed": "embed",
    "train-detect": "detect",
    "train-forecast": "forecast",
    "evaluate": "evaluate",
    "baseline": "baseline",
    "ablate": "ablate",
    "robustness": "robustness",
    "synth": "synth",
}


class DataError(ValueError):
    """Input data cannot be used (malformed records, single-class labels, ...)."""


class TrainingError(RuntimeError):
    """Optimization produced unusable output (non-finite loss, ...)."""


def exit_code(exc: BaseException) -> tuple[int, str]:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG, "config"
    if isinstance(exc, TransportError):
        return EXIT_TRANSPORT, "transport"
    if isinstance(exc, (TrainingError, FloatingPointError)):
        return EXIT_TRAIN, "training"
    if isinstance(exc, (DataError, ValueError, KeyError, OSError, UnicodeError)):
        return EXIT_DATA, "data"
    return EXIT_TRAIN, "training"


# ---------------------------------------------------------------- run context

class Run:
    """Output directory bookkeeping: artifacts are written through here so
    the manifest can list their digests."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts: dict[str, str] = {}

    def write(self, name: str, data: bytes | str) -> Path:
        if isinstance(data, str):
            data = data.encode("utf-8")
        path = self.out / name
        path.write_bytes(data)
        self.artifacts[name] = hashlib.sha256(data).hexdigest()
        return path

    def report(self, obj, name: str = "report.json") -> Path:
        return self.write(name, canonical_json(obj))

    def manifest(self) -> dict:
        resolved = self.cfg.to_dict()
        return {
            "config": resolved,
            "config_hash": config_hash(resolved),
            "task": self.cfg.task,
            "seeds": {"master": self.cfg.seed, "eval": self.cfg.eval_seed},
            "versions": {"trollgraph": __version__, "numpy": np.__version__, "python": _platform.python_version()},
            "artifacts": dict(sorted(self.artifacts.items())),
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }

    def finish(self) -> None:
        self.write("config.json", canonical_json(self.cfg.to_dict()))
        (self.out / "manifest.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- loading

def _records(cfg: RunConfig):
    data = Path(cfg.records).read_bytes()
    recs, errors = parse_records(data, Platform.parse(cfg.platform))
    for e in errors[:10]:
        log.warning("records line %d: %s", e.line, e.message)
    if not recs:
        raise DataError(f"no usable records in {cfg.records}")
    return recs, errors


def _labels(cfg: RunConfig) -> dict[str, str]:
    with open(cfg.labels, encoding="utf-8", newline="") as f:
        return read_labels(f)


def _rules(cfg: RunConfig, forecasting: bool) -> EdgeRules:
    mentions = cfg.mentions if cfg.mentions is not None else forecasting
    return EdgeRules(include_mentions=mentions)


def _detection_data(cfg: RunConfig, embeddings: bool = True):
    from .detect import prepare
    from .embeddings import read_table

    recs, _ = _records(cfg)
    data = prepare(recs, _labels(cfg), Platform.parse(cfg.platform).value, cfg.seed, _rules(cfg, False))
    if len(np.unique(data.pool_labels)) < 2:
        raise DataError("labels must contain both trolls and benign users present in the graph")
    if embeddings and cfg.embeddings:
        data, missing = data.with_embeddings(read_table(cfg.embeddings))
        if missing:
            log.warning("%d node(s) without an embedding vector (zero-filled)", missing)
    return data


def _pipeline(cfg: RunConfig):
    from .detect import PipelineConfig

    return PipelineConfig(cfg.folds, cfg.seed, cfg.epochs, cfg.lr, cfg.hidden, cfg.classifier, cfg.n_trees,
                          cfg.embedding_scale)


def _temporal(cfg: RunConfig):
    from .features import node_labels
    from .graph import partition_snapshots, select_delta

    recs, _ = _records(cfg)
    labels = _labels(cfg)
    edges, _ = extract_edges(recs, _rules(cfg, True))
    if not edges:
        raise DataError("records produce no interaction edges")
    delta = select_delta(edges, cfg.min_edges) if cfg.delta == "auto" else int(cfg.delta)
    tg = partition_snapshots(edges, delta, labels=labels)
    return tg, node_labels(labels, tg.node_ids), delta


def _forecast_config(cfg: RunConfig):
    from .forecast import ForecastConfig

    return ForecastConfig(variant=cfg.variant, lr=cfg.lr, max_epochs=cfg.max_epochs, patience=cfg.patience,
                          seed=cfg.seed, eval_seed=cfg.eval_seed)


# ---------------------------------------------------------------- tasks

def task_synth(run: Run) -> None:
    from .ingest import write_labels
    from .synth import PRESETS, CampaignConfig, generate_campaign

    base = PRESETS[run.cfg.preset].to_dict()
    base.update(run.cfg.synth)
    if "seed" not in run.cfg.synth and run.cfg.seed:
        base["seed"] = run.cfg.seed
    try:
        ccfg = CampaignConfig.from_dict(base)
        ccfg.validate()
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"synth: {exc}") from None
    camp = generate_campaign(ccfg)
    run.write("records.jsonl", camp.jsonl())
    buf = io.StringIO()
    write_labels(camp.labels, buf)
    run.write("labels.csv", buf.getvalue())
    n_troll = sum(v == "troll" for v in camp.labels.values())
    run.report({"campaign": ccfg.to_dict(), "records": len(camp.records), "users": len(camp.labels),
                "trolls": n_troll})


def task_ingest(run: Run) -> None:
    recs, errors = _records(run.cfg)
    edges, skips = extract_edges(recs, _rules(run.cfg, False))
    run.write("records.jsonl", "".join(json.dumps(record_to_json(r), sort_keys=True, separators=(",", ":")) + "\n"
                                       for r in recs))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source", "target", "timestamp", "relation"])
    for e in edges:
        w.writerow([e.source, e.target, e.timestamp, e.relation.value])
    run.write("edges.csv", buf.getvalue())
    run.report({"records": len(recs), "bad_lines": [{"line": e.line, "message": e.message} for e in errors],
                "edges": len(edges), "skipped": dict(sorted(skips.counts.items()))})


def task_graph(run: Run) -> None:
    from .graph import build_graph, dump_graph

    recs, _ = _records(run.cfg)
    labels = _labels(run.cfg) if run.cfg.labels else None
    edges, _ = extract_edges(recs, _rules(run.cfg, False))
    g = build_graph(edges, labels)
    run.write("graph.tgf", dump_graph(g))
    run.report({"nodes": g.num_nodes, "edges": g.num_edges, "unique_edges": g.num_unique_edges})


def task_delta(run: Run) -> None:
    from .graph import bucket_counts, select_delta

    recs, _ = _records(run.cfg)
    edges, _ = extract_edges(recs, _rules(run.cfg, True))
    if not edges:
        raise DataError("records produce no interaction edges")
    delta = select_delta(edges, run.cfg.min_edges)
    ts = np.array(sorted(e.timestamp for e in edges))
    counts = bucket_counts(ts, delta, int(ts[0]))
    print(delta)
    run.report({"delta": delta, "min_edges": run.cfg.min_edges, "snapshots": len(counts),
                "min_snapshot_edges": int(counts.min())})


def task_featurize(run: Run) -> None:
    from .features import detection_features
    from .graph import build_graph

    recs, _ = _records(run.cfg)
    labels = _labels(run.cfg) if run.cfg.labels else {}
    edges, _ = extract_edges(recs, _rules(run.cfg, False))
    g = build_graph(edges, labels)
    fm = detection_features(g)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["user_id", *fm.columns, "label"])
    for i, uid in enumerate(g.node_ids):
        w.writerow([uid, *(repr(float(x)) for x in fm.values[i]), labels.get(uid, "")])
    run.write("features.csv", buf.getvalue())
    run.report({"nodes": g.num_nodes, "columns": fm.columns,
                "groups": {grp.name: [grp.start, grp.stop] for grp in fm.groups}})


def task_embed(run: Run) -> None:
    from .embeddings import HashingProvider, HttpProvider, RandomProvider, build_table, dump_table

    cfg = run.cfg
    if cfg.provider == "hashing":
        provider = HashingProvider(cfg.embed_dim)
    elif cfg.provider == "random":
        provider = RandomProvider(cfg.embed_dim, cfg.seed)
    else:
        provider = HttpProvider(cfg.provider_url, cfg.embed_dim)
    recs, _ = _records(cfg)
    table, errors = build_table(recs, provider)
    run.write("embeddings.emb", dump_table(table))
    run.report({"provider": provider.name, "dim": table.dim, "users": len(table.vectors),
                "errors": dict(sorted(errors.items()))})


def task_detect(run: Run) -> None:
    from .detect import sage_cv, standardized
    from .nn import MeanAggregator
    from .sage import train_detector

    cfg = run.cfg
    data = _detection_data(cfg)
    pc = _pipeline(cfg)
    rep = sage_cv(data, pc)
    # final model on the whole evaluation pool
    X = standardized(data.features, data.pool, pc.embedding_scale).astype(np.float32)
    params, hist = train_detector(MeanAggregator.from_graph(data.graph), X, data.y, data.pool, pc.detector())
    if not np.isfinite(hist[-1]["loss"]):
        raise TrainingError("detector loss is not finite")
    from .nn import dump_tensors
    run.write("detector.alth", dump_tensors(params))
    run.report({**rep.to_dict(), "dataset": _dataset_info(data)})


def _dataset_info(data) -> dict:
    return {"nodes": data.graph.num_nodes, "edges": data.graph.num_edges, "pool": int(len(data.pool)),
            "trolls_in_pool": int(data.pool_labels.sum()), "features": data.features.columns}


def task_forecast(run: Run) -> None:
    from .dist import coordinate_training
    from .forecast import evaluate_forecaster, param_count, train_forecaster
    from .nn import dump_tensors

    cfg = run.cfg
    tg, labels, delta = _temporal(cfg)
    fcfg = _forecast_config(cfg)
    if cfg.workers > 1 or cfg.transport == "tcp":
        result = coordinate_training(tg, labels, fcfg, cfg.workers, cfg.transport)
    else:
        result = train_forecaster(tg, labels, fcfg)
    losses = [h["loss"] for h in result.log]
    if not all(np.isfinite(losses)):
        raise TrainingError("forecaster loss is not finite")
    run.write("forecaster.alth", dump_tensors(result.params))
    ev = evaluate_forecaster(result, tg, labels, eval_seed=cfg.eval_seed)
    run.report({"test": ev, "delta": delta, "snapshots": tg.T, "nodes": tg.num_nodes,
                "best_epoch": result.best_epoch, "best_val_ap": result.best_val_ap, "epochs_run": len(result.log),
                "params": param_count(result.params), "log": result.log,
                "split": {"train": result.plan.n_train, "val": result.plan.n_val, "test": result.plan.n_test}})


def task_evaluate(run: Run) -> None:
    from .forecast import evaluate_forecaster
    from .nn import load_checkpoint

    cfg = run.cfg
    params = load_checkpoint(cfg.checkpoint)
    tg, labels, delta = _temporal(cfg)
    ev = evaluate_forecaster(params, tg, labels, cfg.variant, eval_seed=cfg.eval_seed)
    run.report({"test": ev, "delta": delta, "snapshots": tg.T, "checkpoint": Path(cfg.checkpoint).name})


def task_baseline(run: Run) -> None:
    from .detect import pagerank_cv, tabular_cv

    cfg = run.cfg
    data = _detection_data(cfg, embeddings=False)
    pc = _pipeline(cfg)
    out = {"dataset": _dataset_info(data)}
    if cfg.method in ("tabular", "both"):
        out["rf_tabular"] = tabular_cv(data, pc).to_dict()
    if cfg.method in ("pagerank", "both"):
        out["pagerank_rf"] = pagerank_cv(data, pc).to_dict()
    run.report(out)


def task_ablate(run: Run) -> None:
    from .robustness import run_ablation

    data = _detection_data(run.cfg)
    run.report({"ablation": run_ablation(data, run.cfg.groups, _pipeline(run.cfg)), "dataset": _dataset_info(data)})


def task_robustness(run: Run) -> None:
    from .robustness import run_robustness

    data = _detection_data(run.cfg)
    rows = run_robustness(data, run.cfg.noise_levels, _pipeline(run.cfg))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = list(rows[0]) if rows else []
    w.writerow(cols)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    run.write("curve.csv", buf.getvalue())
    run.report({"sweep": rows, "dataset": _dataset_info(data)})


TASK_FUNCS = {
    "synth": task_synth, "ingest": task_ingest, "graph": task_graph, "delta": task_delta,
    "featurize": task_featurize, "embed": task_embed, "detect": task_detect, "forecast": task_forecast,
    "evaluate": task_evaluate, "baseline": task_baseline, "ablate": task_ablate, "robustness": task_robustness,
}


def dispatch(cfg: RunConfig) -> int:
    run = Run(cfg)
    TASK_FUNCS[cfg.task](run)
    run.finish()
    return EXIT_OK


# ---------------------------------------------------------------- argument parsing

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (or a manifest.json to replay a run)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.add_argument("--platform", choices=["X", "Reddit"])
    p.add_argument("--records")
    p.add_argument("--labels")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trollgraph", description="Coordinated-account detection and "
                                 "interaction forecasting on social graphs.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    ps = {name: sub.add_parser(name) for name in COMMANDS}
    for p in ps.values():
        _common(p)
    for name in ("train-detect", "ablate", "robustness"):
        ps[name].add_argument("--embeddings")
    for name in ("train-detect", "baseline", "ablate", "robustness"):
        ps[name].add_argument("--folds", type=int)
    for name in ("train-detect", "train-forecast", "ablate", "robustness"):
        ps[name].add_argument("--lr", type=float)
    for name in ("train-detect", "ablate", "robustness"):
        ps[name].add_argument("--epochs", type=int)
        ps[name].add_argument("--hidden", type=int)
        ps[name].add_argument("--classifier", choices=["head", "rf"])
    for name in ("select-delta", "train-forecast", "evaluate"):
        ps[name].add_argument("--min-edges", dest="min_edges", type=int)
    for name in ("train-forecast", "evaluate"):
        ps[name].add_argument("--delta", type=int, help="snapshot length in seconds (default: automatic)")
        ps[name].add_argument("--variant", choices=["recurrent", "static"])
        ps[name].add_argument("--eval-seed", dest="eval_seed", type=int)
    ps["train-forecast"].add_argument("--max-epochs", dest="max_epochs", type=int)
    ps["train-forecast"].add_argument("--patience", type=int)
    ps["train-forecast"].add_argument("--transport", choices=["inproc", "tcp"])
    ps["evaluate"].add_argument("--checkpoint")
    ps["baseline"].add_argument("--method", choices=["tabular", "pagerank", "both"])
    ps["ablate"].add_argument("--groups", nargs="+")
    ps["robustness"].add_argument("--noise-levels", dest="noise_levels", type=float, nargs="+")
    ps["embed"].add_argument("--provider", choices=["hashing", "random", "http"])
    ps["embed"].add_argument("--embed-dim", dest="embed_dim", type=int)
    ps["embed"].add_argument("--provider-url", dest="provider_url")
    ps["synth"].add_argument("--preset", choices=["forecast", "detect"])
    ps["synth"].add_argument("--set", dest="synth_set", action="append", default=[], metavar="KEY=VALUE",
                             help="override one campaign parameter (JSON value)")
    w = sub.add_parser("worker", help="serve one coordinator connection")
    w.add_argument("--listen", default="127.0.0.1:0")
    sub.add_parser("schema", help="print the config file schema")
    return ap


_NOT_CONFIG = {"command", "config", "verbose", "synth_set", "listen"}


def _overrides(args: argparse.Namespace) -> dict:
    out = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG and v is not None}
    out["task"] = COMMANDS[args.command]
    if getattr(args, "synth_set", None):
        synth = {}
        for item in args.synth_set:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            try:
                synth[key] = json.loads(value)
            except json.JSONDecodeError:
                synth[key] = value
        out["synth"] = synth
    return out


def _config_source(path):
    """A manifest replays its embedded config; anything else is a plain config file."""
    if path is None:
        return None, {}
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError:
        return path, {}
    if isinstance(obj, dict) and "config_hash" in obj and isinstance(obj.get("config"), dict):
        return None, obj["config"]
    return path, {}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "worker":
        from .dist.worker import listen_and_serve
        return listen_and_serve(args.listen)
    if args.command == "schema":
        sys.stdout.write(canonical_json(schema()))
        return EXIT_OK
    cfg = None
    try:
        path, base = _config_source(args.config)
        over = _overrides(args)
        if base:
            if base.get("task") != over["task"]:
                raise ConfigError(f"manifest is for task {base.get('task')!r}, not {over['task']!r}")
            merged = dict(base)
            merged.update(over)
            if "synth" in over:
                merged["synth"] = {**base.get("synth", {}), **over["synth"]}
            cfg = load_config(None, merged)
        else:
            cfg = load_config(path, over)
        return dispatch(cfg)
    except Exception as exc:  # noqa: BLE001  every failure becomes an exit code
        code, category = exit_code(exc)
        err = {"error": category, "exit_code": code, "type": type(exc).__name__, "message": str(exc)}
        sys.stderr.write(canonical_json(err))
        if cfg is not None:
            try:
                Path(cfg.out).mkdir(parents=True, exist_ok=True)
                (Path(cfg.out) / "error.json").write_text(canonical_json(err))
            except OSError:
                pass
        log.debug("failure", exc_info=True)
        return code


if __name__ == "__main__":
    sys.exit(main())
