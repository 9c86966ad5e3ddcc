import json
import shutil
import subprocess
import sys
from collections import Counter

import numpy as np
import pytest

from trollgraph.cli import DataError, TrainingError, exit_code, main
from trollgraph.config import ConfigError, load_config
from trollgraph.dist import TransportError
from trollgraph.graph import DAY
from trollgraph.ingest import EdgeRules, extract_edges, parse_records

SMALL = ["n_users=240", "n_trolls=24", "troll_cluster_count=4", "duration_days=20", "phase_days=5",
         "benign_rate=25.0", "intra_multiplier=60.0"]


@pytest.fixture(scope="module")
def campaign(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    args = ["synth", "--preset", "detect", "--seed", "3", "--out", str(out)]
    for s in SMALL:
        args += ["--set", s]
    assert main(args) == 0
    return out


def test_synth_artifacts(campaign):
    for name in ("records.jsonl", "labels.csv", "report.json", "config.json", "manifest.json"):
        assert (campaign / name).is_file()
    report = json.loads((campaign / "report.json").read_text())
    assert report["users"] == 240 and report["trolls"] == 24 and report["campaign"]["seed"] == 3
    manifest = json.loads((campaign / "manifest.json").read_text())
    assert {"config", "config_hash", "seeds", "versions", "artifacts", "created_at"} <= set(manifest)
    assert "records.jsonl" in manifest["artifacts"]


def test_override_precedence(tmp_path, campaign):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"lr": 0.01, "epochs": 3}))
    cfg = load_config(cfg_file, {"task": "detect", "lr": 0.001, "records": str(campaign / "records.jsonl"),
                                  "labels": str(campaign / "labels.csv")})
    assert cfg.lr == 0.001 and cfg.epochs == 3 and cfg.seed == 0


def test_empty_file_plus_flags(tmp_path, campaign):
    cfg_file = tmp_path / "empty.json"
    cfg_file.write_text("")
    cfg = load_config(cfg_file, {"task": "delta", "records": str(campaign / "records.jsonl")})
    assert cfg.task == "delta"


def run_cli(args, capsys):
    code = main(args)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_missing_records_names_field(tmp_path, capsys):
    code, _, err = run_cli(["train-detect", "--out", str(tmp_path)], capsys)
    assert code == 2
    msg = json.loads(err)
    assert msg["error"] == "config" and "records" in msg["message"]


def test_unknown_key_and_bad_type(tmp_path, capsys, campaign):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"learning_rate": 0.1}))
    code, _, err = run_cli(["select-delta", "--config", str(bad), "--records", str(campaign / "records.jsonl")], capsys)
    assert code == 2 and "learning_rate" in json.loads(err)["message"]
    bad.write_text(json.dumps({"lr": "fast"}))
    code, _, err = run_cli(["select-delta", "--config", str(bad), "--records", str(campaign / "records.jsonl")], capsys)
    assert code == 2 and "lr" in json.loads(err)["message"]


def test_unusable_records_is_data_error(tmp_path, capsys):
    rec = tmp_path / "r.jsonl"
    rec.write_text("not json\n{]\n")
    out = tmp_path / "out"
    code, _, err = run_cli(["select-delta", "--records", str(rec), "--out", str(out)], capsys)
    assert code == 3 and json.loads(err)["exit_code"] == 3
    assert json.loads((out / "error.json").read_text())["error"] == "data"


def test_exit_code_mapping():
    assert exit_code(ConfigError("x"))[0] == 2
    assert exit_code(DataError("x"))[0] == 3
    assert exit_code(TrainingError("x"))[0] == 4
    assert exit_code(FloatingPointError("x"))[0] == 4
    assert exit_code(TransportError("x"))[0] == 5


def test_select_delta_matches_day_scan(campaign, capsys, tmp_path):
    code, out, _ = run_cli(["select-delta", "--records", str(campaign / "records.jsonl"), "--out", str(tmp_path)],
                           capsys)
    assert code == 0
    recs, _ = parse_records((campaign / "records.jsonl").read_bytes(), "X")
    ts = [e.timestamp for e in extract_edges(recs, EdgeRules(include_mentions=True))[0]]
    t0 = min(ts)
    k = 1
    while True:
        buckets = Counter((t - t0) // (k * DAY) for t in ts)
        if all(buckets.get(i, 0) >= 16 for i in range(max(buckets) + 1)) or max(buckets) == 0:
            break
        k += 1
    assert int(out.strip()) == k * DAY


def test_repeat_is_byte_identical_and_manifest_replays(campaign, tmp_path, capsys):
    common = ["--records", str(campaign / "records.jsonl"), "--labels", str(campaign / "labels.csv"),
              "--epochs", "5", "--folds", "3", "--hidden", "8", "--seed", "4"]
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["train-detect", "--out", str(a), *common]) == 0
    assert main(["train-detect", "--out", str(b), *common]) == 0
    assert main(["train-detect", "--config", str(a / "manifest.json"), "--out", str(c)]) == 0
    for name in ("report.json", "detector.alth"):
        ref = (a / name).read_bytes()
        assert (b / name).read_bytes() == ref and (c / name).read_bytes() == ref
    configs = [json.loads((d / "config.json").read_text()) for d in (a, b, c)]
    for cfg in configs:
        cfg.pop("out")
    assert configs[0] == configs[1] == configs[2]
    report = json.loads((a / "report.json").read_text())
    assert 0 <= report["metrics"]["f1"]["mean"] <= 1


def test_console_script(tmp_path):
    exe = shutil.which("trollgraph")
    cmd = [exe] if exe else [sys.executable, "-m", "trollgraph.cli"]
    res = subprocess.run([*cmd, "schema"], capture_output=True, text=True, timeout=60)
    assert res.returncode == 0
    schema = json.loads(res.stdout)
    assert "lr" in json.dumps(schema)
    res = subprocess.run([*cmd, "train-forecast", "--out", str(tmp_path)], capture_output=True, text=True, timeout=60)
    assert res.returncode == 2 and json.loads(res.stderr)["exit_code"] == 2
