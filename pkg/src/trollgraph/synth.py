"""Synthetic influence campaigns with planted troll coordination and drift.

Benign users interact inside a per-phase active pool, picking targets by
preferential attachment. Trolls form clusters that amplify each other at a
configured multiple of the benign pairwise rate and reply to a per-cluster
audience that rotates every phase. Output is platform JSON lines plus a
label map, in the same schema the ingest parsers read.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .graph import DAY

log = logging.getLogger(__name__)

EPOCH0 = 1_577_836_800  # 2020-01-01 UTC
VOCAB = 2000
NARRATIVE_VOCAB = 40


@dataclass
class CampaignConfig:
    n_users: int = 2000
    n_trolls: int = 50
    duration_days: int = 90
    troll_cluster_count: int = 5
    # intra-cluster pairwise interaction rate as a multiple of the benign pairwise rate
    intra_multiplier: float = 200.0
    # audience replies per troll per day
    targeting_rate: float = 0.2
    # benign interactions per day
    benign_rate: float = 40.0
    phase_days: int = 15
    drift: tuple = (1.0, 1.3, 0.8, 1.1, 1.4, 0.9)
    pool_frac: float = 0.15
    pool_turnover: float = 0.7
    audience_size: int = 30
    stealth_frac: float = 0.0
    narrative_share: float = 0.4
    originals_per_user: float = 20.0
    platform: str = "X"
    seed: int = 7

    def __post_init__(self):
        self.drift = tuple(float(x) for x in self.drift)

    def validate(self) -> None:
        if not 0 <= self.n_trolls < self.n_users:
            raise ValueError("need 0 <= n_trolls < n_users")
        if self.duration_days < 1 or self.phase_days < 1:
            raise ValueError("duration_days and phase_days must be >= 1")
        for name in ("intra_multiplier", "targeting_rate", "benign_rate", "originals_per_user"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if any(m < 0 for m in self.drift) or not self.drift:
            raise ValueError("drift multipliers must be a nonempty list of values >= 0")
        if self.n_trolls and not 1 <= self.troll_cluster_count <= self.n_trolls:
            raise ValueError("troll_cluster_count must be in [1, n_trolls]")
        if not 0 < self.pool_frac <= 1 or not 0 <= self.pool_turnover <= 1:
            raise ValueError("pool_frac in (0, 1], pool_turnover in [0, 1]")
        if self.platform not in ("X", "Reddit"):
            raise ValueError(f"unknown platform {self.platform!r}")

    @classmethod
    def from_dict(cls, obj: dict) -> "CampaignConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise KeyError(f"unknown campaign config key(s): {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["drift"] = list(self.drift)
        return d


PRESETS = {
    # drifting campaign for link forecasting
    "forecast": CampaignConfig(),
    # larger troll population with some stealthy accounts, for node classification
    "detect": CampaignConfig(n_trolls=200, troll_cluster_count=10, intra_multiplier=40.0, targeting_rate=0.04,
                             benign_rate=150.0, stealth_frac=0.15, seed=11),
}


@dataclass
class Campaign:
    records: list[dict]
    labels: dict[str, str]
    config: CampaignConfig
    clusters: dict[str, int] = field(default_factory=dict)
    stealth: set = field(default_factory=set)

    def jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.records)


@dataclass
class _Action:
    ts: int
    actor: str
    target: str | None
    troll: bool


def _user_ids(n: int) -> list[str]:
    width = len(str(n - 1))
    return [f"u{i:0{width}d}" for i in range(n)]


def _text(rng, n_tokens: int, narrative: np.ndarray | None, share: float) -> str:
    toks = []
    for _ in range(n_tokens):
        if narrative is not None and rng.random() < share:
            toks.append(f"n{int(rng.choice(narrative)):04d}")
        else:
            toks.append(f"w{int(rng.integers(VOCAB)):04d}")
    return " ".join(toks)


def _weighted_pick(rng, items: np.ndarray, weights: np.ndarray, exclude=None):
    w = weights.astype(np.float64)
    if exclude is not None:
        w = w * (items != exclude)
    s = w.sum()
    if s <= 0:
        return None
    return items[int(np.searchsorted(np.cumsum(w), rng.random() * s, side="right").clip(0, len(items) - 1))]


def generate_campaign(config: CampaignConfig | None = None) -> Campaign:
    """Deterministic per seed. Returns platform records sorted by time and labels."""
    cfg = config or CampaignConfig()
    cfg.validate()
    ss = np.random.SeedSequence(cfg.seed)
    r_pool, r_benign, r_troll, r_text, r_prof = (np.random.default_rng(s) for s in ss.spawn(5))

    users = _user_ids(cfg.n_users)
    order = r_pool.permutation(cfg.n_users)
    trolls = [users[i] for i in sorted(order[:cfg.n_trolls])]
    troll_set = set(trolls)
    benign = np.array([u for u in users if u not in troll_set])
    labels = {u: ("troll" if u in troll_set else "benign") for u in users}
    activity = {u: float(a) for u, a in zip(users, r_pool.lognormal(0.0, 0.8, cfg.n_users))}

    n_stealth = int(round(cfg.stealth_frac * cfg.n_trolls))
    stealth = set(r_pool.choice(trolls, size=n_stealth, replace=False).tolist()) if n_stealth else set()
    k = max(cfg.troll_cluster_count, 1)
    clusters = {u: i % k for i, u in enumerate(r_pool.permutation(trolls).tolist())} if trolls else {}
    members = [np.array(sorted(u for u, c in clusters.items() if c == i)) for i in range(k)]
    narratives = [r_pool.choice(NARRATIVE_VOCAB * k, size=NARRATIVE_VOCAB // 2, replace=False) for _ in range(k)]

    n_phases = math.ceil(cfg.duration_days / cfg.phase_days)
    drift = [cfg.drift[p % len(cfg.drift)] for p in range(n_phases)]

    nb = len(benign)
    intra_pairs = sum(len(m) * (len(m) - 1) for m in members)
    per_day = (cfg.benign_rate * (1 + cfg.intra_multiplier * intra_pairs / max(nb * (nb - 1), 1))
               + cfg.targeting_rate * (cfg.n_trolls - n_stealth) * float(np.mean(drift)))
    if per_day < 16:
        log.warning("expected %.1f interaction edges per day, below 16; delta selection will need wide "
                    "snapshots", per_day)
    day_ts = lambda d: EPOCH0 + d * DAY  # noqa: E731

    # ---- benign background: rotating pools, preferential attachment inside the pool
    pool_size = max(2, int(round(cfg.pool_frac * len(benign))))
    pools, pool = [], np.sort(r_pool.choice(benign, size=min(pool_size, len(benign)), replace=False))
    stealth_arr = np.array(sorted(stealth))
    for p in range(n_phases):
        if p:
            n_out = int(round(cfg.pool_turnover * len(pool)))
            keep = r_pool.choice(pool, size=len(pool) - n_out, replace=False)
            fresh = r_pool.choice(np.setdiff1d(benign, keep), size=min(n_out, len(benign) - len(keep)), replace=False)
            pool = np.sort(np.concatenate([keep, fresh]))
        pools.append(pool)

    actions: list[_Action] = []
    for p in range(n_phases):
        pool = pools[p]
        actors = np.concatenate([pool, stealth_arr]) if len(stealth_arr) else pool
        act_w = np.array([activity[u] for u in actors])
        deg = np.zeros(len(pool))
        for d in range(p * cfg.phase_days, min((p + 1) * cfg.phase_days, cfg.duration_days)):
            for _ in range(r_benign.poisson(cfg.benign_rate)):
                v = _weighted_pick(r_benign, actors, act_w)
                j = np.searchsorted(pool, v)
                excl = j if j < len(pool) and pool[j] == v else None
                w = deg + 1.0
                if excl is not None:
                    w = w.copy()
                    w[excl] = 0.0
                i = int(np.searchsorted(np.cumsum(w), r_benign.random() * w.sum(), side="right").clip(0, len(pool) - 1))
                deg[i] += 1
                actions.append(_Action(day_ts(d) + int(r_benign.integers(DAY)), v, pool[i], v in stealth))

    n_bb = sum(1 for a in actions if not a.troll)
    benign_pair_rate = n_bb / max(nb * (nb - 1), 1)

    # ---- troll coordination: calibrated intra-cluster amplification
    if trolls:
        active = [u for u in trolls]
        n_intra = int(round(cfg.intra_multiplier * benign_pair_rate * intra_pairs))
        if n_intra < len(active):
            log.warning("intra-cluster rate too low to give every troll a cluster interaction; raising to %d", len(active))
            n_intra = len(active)
        day_w = np.array([drift[d // cfg.phase_days] for d in range(cfg.duration_days)])
        days = r_troll.choice(cfg.duration_days, size=n_intra, p=day_w / day_w.sum())
        # every troll acts inside its cluster at least once; other actors weighted by activity
        t_arr = np.array(trolls)
        t_w = np.array([activity[u] * (0.2 if u in stealth else 1.0) for u in trolls])
        actor_list = list(r_troll.permutation(active)) + [
            _weighted_pick(r_troll, t_arr, t_w) for _ in range(n_intra - len(active))]
        for d, v in zip(days, actor_list):
            mates = members[clusters[v]]
            if len(mates) < 2:
                continue
            u = _weighted_pick(r_troll, mates, np.ones(len(mates)), exclude=v)
            actions.append(_Action(day_ts(int(d)) + int(r_troll.integers(DAY)), v, u, True))

        # ---- targeted replies to a rotating per-cluster audience
        for p in range(n_phases):
            audiences = [r_troll.choice(benign, size=min(cfg.audience_size, nb), replace=False) for _ in range(k)]
            for d in range(p * cfg.phase_days, min((p + 1) * cfg.phase_days, cfg.duration_days)):
                for v in trolls:
                    if v in stealth:
                        continue
                    for _ in range(r_troll.poisson(cfg.targeting_rate * drift[p])):
                        aud = audiences[clusters[v]]
                        u = aud[int(r_troll.integers(len(aud)))]
                        actions.append(_Action(day_ts(d) + int(r_troll.integers(DAY)), v, u, True))

    # ---- original posts (no edge), same volume distribution for every user
    for u in users:
        for _ in range(r_text.poisson(cfg.originals_per_user * activity[u] / 1.4)):
            actions.append(_Action(day_ts(int(r_text.integers(cfg.duration_days))) + int(r_text.integers(DAY)),
                                   u, None, u in troll_set))

    actions.sort(key=lambda a: (a.ts, a.actor, a.target or ""))
    profiles = _profiles(users, r_prof)
    retweet_p = {u: float(x) for u, x in zip(users, r_prof.beta(2.0, 2.0, cfg.n_users))}
    records = _emit(cfg, actions, clusters, narratives, retweet_p, profiles, r_text)
    return Campaign(records, labels, cfg, clusters, stealth)


def _profiles(users, rng) -> dict[str, dict]:
    out = {}
    for u in users:
        out[u] = {
            "followers_count": int(rng.lognormal(5.0, 1.5)),
            "following_count": int(rng.lognormal(5.0, 1.0)),
            "description": " ".join(f"w{int(t):04d}" for t in rng.integers(VOCAB, size=rng.poisson(8))),
            "account_created_at": int(EPOCH0 - rng.integers(30, 3000) * DAY),
        }
    return out


def _emit(cfg, actions, clusters, narratives, retweet_p, profiles, rng) -> list[dict]:
    records = []
    width = len(str(len(actions)))
    for i, a in enumerate(actions):
        rid = f"r{i:0{width}d}"
        narr = narratives[clusters[a.actor]] if a.actor in clusters else None
        text = _text(rng, 4 + int(rng.poisson(8)), narr, cfg.narrative_share)
        if cfg.platform == "X":
            rec = {"tweet_id": rid, "user_id": a.actor, "created_at": a.ts, "text": text, "mentions": []}
            if a.target is not None:
                if rng.random() < retweet_p[a.actor]:
                    rec["retweet_of_user"] = a.target
                else:
                    rec["reply_to_user"] = a.target
                    rec["mentions"] = [a.target]
            rec.update(profiles[a.actor])
        else:
            sub = f"s{clusters.get(a.actor, 0) % 4}"
            if a.target is None:
                rec = {"id": rid, "author": a.actor, "created_utc": a.ts, "type": "submission",
                       "title": _text(rng, 6, narr, cfg.narrative_share), "body": text, "subreddit": sub}
            else:
                rec = {"id": rid, "author": a.actor, "created_utc": a.ts, "type": "comment",
                       "parent_author": a.target, "body": text, "subreddit": sub}
        records.append(rec)
    return records


def measure_rates(campaign: Campaign) -> dict[str, float]:
    """Empirical benign pairwise rate and intra-cluster troll pairwise rate."""
    from .ingest import extract_edges, parse_records

    recs, _ = parse_records(campaign.jsonl().encode("utf-8"), campaign.config.platform)
    edges, _ = extract_edges(recs)
    labels, cl = campaign.labels, campaign.clusters
    nb = sum(1 for v in labels.values() if v == "benign")
    bb = sum(1 for e in edges if labels[e.source] == "benign" and labels[e.target] == "benign")
    intra = sum(1 for e in edges if e.source in cl and e.target in cl and cl[e.source] == cl[e.target])
    sizes = np.bincount(list(cl.values())) if cl else np.zeros(0)
    pairs = int((sizes * (sizes - 1)).sum())
    benign_rate = bb / max(nb * (nb - 1), 1)
    intra_rate = intra / pairs if pairs else 0.0
    return {"benign_pair_rate": benign_rate, "intra_pair_rate": intra_rate,
            "ratio": intra_rate / benign_rate if benign_rate else math.inf,
            "n_edges": len(edges), "n_benign_edges": bb, "n_intra_edges": intra}
