import numpy as np
import pytest

from trollgraph.ingest import EdgeRules, extract_edges, parse_records
from trollgraph.synth import PRESETS, CampaignConfig, generate_campaign, measure_rates

SMALL = dict(n_users=300, n_trolls=20, troll_cluster_count=4, duration_days=20, phase_days=5, benign_rate=30.0)


def edges_of(c, mentions=False):
    recs, errs = parse_records(c.jsonl().encode(), c.config.platform)
    assert not errs
    return recs, extract_edges(recs, EdgeRules(include_mentions=mentions))[0]


def test_no_trolls():
    c = generate_campaign(CampaignConfig(**{**SMALL, "n_trolls": 0}))
    assert set(c.labels.values()) == {"benign"}
    _, edges = edges_of(c, True)
    assert edges and all(c.labels[e.source] == "benign" and c.labels[e.target] == "benign" for e in edges)


@pytest.mark.parametrize("platform", ["X", "Reddit"])
def test_same_seed_identical_stream(platform):
    cfg = CampaignConfig(**SMALL, platform=platform, seed=3)
    assert generate_campaign(cfg).jsonl() == generate_campaign(cfg).jsonl()
    assert generate_campaign(cfg).jsonl() != generate_campaign(CampaignConfig(**SMALL, platform=platform, seed=4)).jsonl()


@pytest.mark.parametrize("platform", ["X", "Reddit"])
def test_timestamps_and_troll_participation(platform):
    c = generate_campaign(CampaignConfig(**SMALL, platform=platform, seed=5))
    key = "created_at" if platform == "X" else "created_utc"
    ts = [r[key] for r in c.records]
    assert ts == sorted(ts)
    _, edges = edges_of(c)
    cl = c.clusters
    in_cluster = {u for e in edges if e.source in cl and e.target in cl and cl[e.source] == cl[e.target]
                  for u in (e.source, e.target)}
    trolls = {u for u, lab in c.labels.items() if lab == "troll"}
    assert trolls and trolls <= in_cluster


def test_default_rate_multiplier_within_ten_percent():
    cfg = CampaignConfig()
    assert (cfg.n_users, cfg.n_trolls, cfg.duration_days, cfg.seed) == (2000, 50, 90, 7)
    rates = measure_rates(generate_campaign(cfg))
    assert abs(rates["ratio"] / cfg.intra_multiplier - 1) <= 0.10


def test_invalid_configs():
    with pytest.raises(ValueError):
        CampaignConfig(n_users=10, n_trolls=10).validate()
    with pytest.raises(ValueError):
        CampaignConfig(benign_rate=-1).validate()
    with pytest.raises(KeyError):
        CampaignConfig.from_dict({"n_user": 3})


def test_sparse_config_warns(caplog):
    generate_campaign(CampaignConfig(n_users=50, n_trolls=5, troll_cluster_count=1, duration_days=4, phase_days=2,
                                     benign_rate=1.0, targeting_rate=0.0, originals_per_user=0.0))
    assert "below 16" in caplog.text


def test_presets_valid():
    for cfg in PRESETS.values():
        cfg.validate()
    assert CampaignConfig.from_dict(PRESETS["detect"].to_dict()) == PRESETS["detect"]
