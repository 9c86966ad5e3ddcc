"""Parse platform interaction logs and derive directed edge events.

Edges follow the ``(u, v)`` convention: ``source`` is the user acted upon
(the original author) and ``target`` is the acting user. Out-degree thus
counts how often a user is engaged by others; in-degree counts how often
the user engages others.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Fatal configuration problem (unknown platform, bad delta, ...)."""


class Platform(str, enum.Enum):
    REDDIT = "Reddit"
    X = "X"

    @classmethod
    def parse(cls, value) -> "Platform":
        if isinstance(value, Platform):
            return value
        for p in cls:
            if str(value).lower() == p.value.lower() or (p is cls.X and str(value).lower() == "twitter"):
                return p
        raise ConfigError(f"unknown platform {value!r}")


class Kind(str, enum.Enum):
    SUBMISSION = "Submission"
    COMMENT = "Comment"
    TWEET = "Tweet"
    RETWEET = "Retweet"
    REPLY = "Reply"
    MENTION = "Mention-bearing"


class Relation(str, enum.Enum):
    REPLY = "Reply"
    RESHARE_SAME_TITLE = "ReshareSameTitle"
    RETWEET = "Retweet"
    MENTION = "Mention"


@dataclass(frozen=True)
class InteractionRecord:
    record_id: str
    platform: Platform
    author: str
    created_at: int
    kind: Kind
    title: str | None = None
    text: str | None = None
    parent_author: str | None = None
    retweeted_author: str | None = None
    mentioned_authors: tuple[str, ...] = ()
    subreddit: str | None = None
    # optional thread/profile fields used by the tabular baselines
    link_id: str | None = None
    parent_id: str | None = None
    profile: dict | None = field(default=None, compare=False, hash=False)


@dataclass(frozen=True)
class EdgeEvent:
    source: str
    target: str
    timestamp: int
    relation: Relation


@dataclass(frozen=True)
class LineError:
    line: int
    message: str


@dataclass
class EdgeRules:
    include_mentions: bool = False
    same_subreddit_only: bool = False


@dataclass
class SkipReport:
    counts: Counter = field(default_factory=Counter)

    def add(self, reason: str) -> None:
        self.counts[reason] += 1

    @property
    def total(self) -> int:
        return sum(self.counts.values())


UNKNOWN_AUTHORS = frozenset({"", "[deleted]", "[removed]"})


def _int_ts(value, key):
    if isinstance(value, bool) or value is None:
        raise ValueError(f"missing or invalid {key}")
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(f"{key} must be integer epoch seconds")
        value = int(value)
    if isinstance(value, str):
        value = int(value)
    if not isinstance(value, int) or value <= 0:
        raise ValueError(f"{key} must be a positive integer")
    return value


def _str(obj, key, required=False):
    v = obj.get(key)
    if v is None:
        if required:
            raise ValueError(f"missing {key}")
        return None
    if not isinstance(v, (str, int)):
        raise ValueError(f"{key} must be a string")
    v = str(v)
    if required and not v:
        raise ValueError(f"empty {key}")
    return v


def _reddit_record(obj: dict) -> InteractionRecord:
    rtype = obj.get("type")
    if rtype == "submission":
        kind = Kind.SUBMISSION
    elif rtype == "comment":
        kind = Kind.COMMENT
    else:
        raise ValueError(f"type must be 'submission' or 'comment', got {rtype!r}")
    parent = _str(obj, "parent_author")
    if kind is Kind.COMMENT and parent is None:
        raise ValueError("comment without parent_author")
    return InteractionRecord(
        record_id=_str(obj, "id", required=True),
        platform=Platform.REDDIT,
        author=_str(obj, "author", required=True),
        created_at=_int_ts(obj.get("created_utc"), "created_utc"),
        kind=kind,
        title=_str(obj, "title"),
        text=_str(obj, "body"),
        parent_author=parent,
        subreddit=_str(obj, "subreddit"),
        link_id=_str(obj, "link_id"),
        parent_id=_str(obj, "parent_id"),
    )


PROFILE_KEYS = ("followers_count", "following_count", "description", "account_created_at", "lang")


def _x_record(obj: dict) -> InteractionRecord:
    mentions = obj.get("mentions", [])
    if not isinstance(mentions, list) or not all(isinstance(m, (str, int)) for m in mentions):
        raise ValueError("mentions must be a list of user ids")
    mentions = tuple(str(m) for m in mentions)
    reply = _str(obj, "reply_to_user")
    retweet = _str(obj, "retweet_of_user")
    if retweet is not None:
        kind = Kind.RETWEET
    elif reply is not None:
        kind = Kind.REPLY
    elif mentions:
        kind = Kind.MENTION
    else:
        kind = Kind.TWEET
    text = obj.get("text")
    if text is not None and not isinstance(text, str):
        raise ValueError("text must be a string")
    profile = {k: obj[k] for k in PROFILE_KEYS if k in obj}
    return InteractionRecord(
        record_id=_str(obj, "tweet_id", required=True),
        platform=Platform.X,
        author=_str(obj, "user_id", required=True),
        created_at=_int_ts(obj.get("created_at"), "created_at"),
        kind=kind,
        text=text,
        parent_author=reply,
        retweeted_author=retweet,
        mentioned_authors=mentions,
        profile=profile or None,
    )


def _lines(stream) -> Iterator[str]:
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    for raw in stream:
        yield raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw


def parse_records(stream: IO | bytes | Iterable, platform) -> tuple[list[InteractionRecord], list[LineError]]:
    """Parse newline-delimited JSON records.

    Malformed lines are reported as :class:`LineError` (1-based line number)
    and skipped; the rest of the stream is still parsed. Blank lines are
    ignored.
    """
    platform = Platform.parse(platform)
    build = _reddit_record if platform is Platform.REDDIT else _x_record
    records, errors = [], []
    for lineno, line in enumerate(_lines(stream), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("record is not a JSON object")
            records.append(build(obj))
        except (ValueError, TypeError) as exc:
            errors.append(LineError(lineno, str(exc)))
    if errors:
        log.warning("parse_records: %d malformed line(s)", len(errors))
    return records, errors


def normalize_title(title: str) -> str:
    return " ".join(title.casefold().split())


def extract_edges(records: Iterable[InteractionRecord], rules: EdgeRules | None = None) -> tuple[list[EdgeEvent], SkipReport]:
    """Derive interaction edges from records, in timestamp order.

    A reshare links the resubmitting user to the first user who posted that
    (normalized) title, and only when that first post is strictly earlier.
    """
    rules = rules or EdgeRules()
    ordered = sorted(records, key=lambda r: r.created_at)  # stable
    skips = SkipReport()
    edges: list[EdgeEvent] = []
    first_title: dict[tuple, tuple[str, int]] = {}

    def emit(u, v, ts, rel):
        if u in UNKNOWN_AUTHORS or u is None:
            skips.add("unknown_parent")
        elif u == v:
            skips.add("self_loop")
        else:
            edges.append(EdgeEvent(u, v, ts, rel))

    for r in ordered:
        v, ts = r.author, r.created_at
        if r.platform is Platform.REDDIT:
            if r.kind is Kind.COMMENT:
                emit(r.parent_author, v, ts, Relation.REPLY)
            elif r.kind is Kind.SUBMISSION and r.title:
                key = normalize_title(r.title)
                if not key:
                    continue
                if rules.same_subreddit_only:
                    key = (r.subreddit, key)
                orig = first_title.get(key)
                if orig is None:
                    first_title[key] = (v, ts)
                elif orig[1] < ts:
                    emit(orig[0], v, ts, Relation.RESHARE_SAME_TITLE)
        else:
            if r.kind is Kind.RETWEET:
                emit(r.retweeted_author, v, ts, Relation.RETWEET)
            elif r.kind is Kind.REPLY:
                emit(r.parent_author, v, ts, Relation.REPLY)
            if r.mentioned_authors:
                if rules.include_mentions:
                    for u in dict.fromkeys(r.mentioned_authors):
                        emit(u, v, ts, Relation.MENTION)
                else:
                    skips.counts["mention_disabled"] += len(r.mentioned_authors)
    return edges, skips


LABELS = ("troll", "benign")


def read_labels(stream) -> dict[str, str]:
    """Read a ``user_id,label`` CSV with labels in {troll, benign}."""
    if isinstance(stream, (bytes, bytearray)):
        stream = io.StringIO(stream.decode("utf-8"))
    reader = csv.DictReader(stream)
    if reader.fieldnames is None or not {"user_id", "label"} <= set(reader.fieldnames):
        raise ValueError("labels CSV must have header user_id,label")
    out = {}
    for i, row in enumerate(reader, start=2):
        lab = row["label"].strip().lower()
        if lab not in LABELS:
            raise ValueError(f"labels line {i}: label must be troll or benign, got {row['label']!r}")
        out[row["user_id"]] = lab
    return out


def write_labels(labels: dict[str, str], stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["user_id", "label"])
    for uid in sorted(labels):
        w.writerow([uid, labels[uid]])


def record_to_json(r: InteractionRecord) -> dict:
    """Inverse of the parsers: the platform JSON object for a record."""
    if r.platform is Platform.REDDIT:
        obj = {"id": r.record_id, "author": r.author, "created_utc": r.created_at,
               "type": "submission" if r.kind is Kind.SUBMISSION else "comment"}
        for key, val in (("title", r.title), ("body", r.text), ("parent_author", r.parent_author),
                         ("subreddit", r.subreddit), ("link_id", r.link_id), ("parent_id", r.parent_id)):
            if val is not None:
                obj[key] = val
        return obj
    obj = {"tweet_id": r.record_id, "user_id": r.author, "created_at": r.created_at,
           "text": r.text or "", "mentions": list(r.mentioned_authors)}
    if r.parent_author is not None:
        obj["reply_to_user"] = r.parent_author
    if r.retweeted_author is not None:
        obj["retweet_of_user"] = r.retweeted_author
    if r.profile:
        obj.update(r.profile)
    return obj
