import json

import pytest
from hypothesis import given, settings, strategies as st

from trollgraph.ingest import (ConfigError, EdgeRules, Kind, Platform, Relation, extract_edges, normalize_title,
                               parse_records, read_labels, record_to_json, write_labels)


def jl(*objs):
    return ("\n".join(json.dumps(o) for o in objs) + "\n").encode()


def reddit(id, author, ts, type="comment", **kw):
    return {"id": id, "author": author, "created_utc": ts, "type": type, **kw}


def tweet(id, user, ts, **kw):
    return {"tweet_id": id, "user_id": user, "created_at": ts, "text": kw.pop("text", "hi"), **kw}


def test_reddit_comment_fields():
    recs, errs = parse_records(jl(reddit("c1", "b", 10, parent_author="a")), "Reddit")
    assert not errs
    assert recs[0].kind is Kind.COMMENT and recs[0].parent_author == "a" and recs[0].author == "b"


def test_x_mentions_copied():
    recs, _ = parse_records(jl(tweet("t1", "v", 5, mentions=["x", "y"])), Platform.X)
    assert len(recs[0].mentioned_authors) == 2


def test_missing_timestamp_is_line_error_and_stream_continues():
    data = jl(tweet("t1", "v", 5), {"tweet_id": "t2", "user_id": "w", "text": "x"}, tweet("t3", "w", 7))
    recs, errs = parse_records(data, "X")
    assert [r.record_id for r in recs] == ["t1", "t3"]
    assert len(errs) == 1 and errs[0].line == 2


def test_malformed_json_line():
    recs, errs = parse_records(b'{"tweet_id": "t1", "user_id": "u", "created_at": 3}\nnot json\n', "X")
    assert len(recs) == 1 and errs[0].line == 2


def test_unknown_platform_is_fatal():
    with pytest.raises(ConfigError):
        parse_records(b"", "Myspace")


def test_reddit_reply_edge():
    recs, _ = parse_records(jl(reddit("s1", "u", 50, "submission", title="T"),
                               reddit("c1", "v", 100, parent_author="u")), "Reddit")
    edges, _ = extract_edges(recs)
    assert [(e.source, e.target, e.relation, e.timestamp) for e in edges] == [("u", "v", Relation.REPLY, 100)]


def test_same_title_reshare_after_normalization():
    recs, _ = parse_records(jl(reddit("s1", "u", 1, "submission", title="Breaking News!"),
                               reddit("s2", "v", 9, "submission", title=" breaking  news! ")), "Reddit")
    edges, _ = extract_edges(recs)
    assert [(e.source, e.target, e.relation, e.timestamp) for e in edges] == [
        ("u", "v", Relation.RESHARE_SAME_TITLE, 9)]


def test_normalize_title():
    assert normalize_title("  Hello \t World ") == normalize_title("hello world") == "hello world"


def test_mentions_only_with_flag():
    recs, _ = parse_records(jl(tweet("t1", "v", 5, mentions=["u", "w"])), "X")
    assert extract_edges(recs, EdgeRules(include_mentions=False))[0] == []
    edges, _ = extract_edges(recs, EdgeRules(include_mentions=True))
    assert sorted((e.source, e.target, e.relation) for e in edges) == [
        ("u", "v", Relation.MENTION), ("w", "v", Relation.MENTION)]


def test_x_reply_and_retweet_edges():
    recs, _ = parse_records(jl(tweet("t1", "v", 5, reply_to_user="u"), tweet("t2", "w", 6, retweet_of_user="u")), "X")
    edges, _ = extract_edges(recs)
    assert [(e.source, e.target, e.relation) for e in edges] == [("u", "v", Relation.REPLY), ("u", "w", Relation.RETWEET)]


def test_self_interaction_dropped_and_unknown_parent_skipped():
    recs, _ = parse_records(jl(reddit("c1", "u", 5, parent_author="u"),
                               reddit("c2", "v", 6, parent_author="[deleted]")), "Reddit")
    edges, skips = extract_edges(recs)
    assert edges == []
    assert skips.total == 2


def test_records_sorted_internally():
    recs, _ = parse_records(jl(tweet("t2", "w", 9, reply_to_user="u"), tweet("t1", "v", 5, reply_to_user="u")), "X")
    edges, _ = extract_edges(recs)
    assert [e.timestamp for e in edges] == [5, 9]


def test_labels_roundtrip(tmp_path):
    labels = {"a": "troll", "b": "benign"}
    p = tmp_path / "labels.csv"
    with open(p, "w", newline="") as f:
        write_labels(labels, f)
    with open(p, newline="") as f:
        assert read_labels(f) == labels


def test_bad_label_rejected():
    with pytest.raises(ValueError):
        read_labels(b"user_id,label\na,spy\n")


def test_record_json_roundtrip():
    objs = [tweet("t1", "v", 5, mentions=["u"], reply_to_user="u"), tweet("t2", "w", 6, retweet_of_user="v")]
    recs, _ = parse_records(jl(*objs), "X")
    again, _ = parse_records(jl(*[record_to_json(r) for r in recs]), "X")
    assert again == recs


users = st.sampled_from(list("abcdef"))


@st.composite
def x_streams(draw):
    n = draw(st.integers(0, 30))
    objs = []
    for i in range(n):
        o = tweet(f"t{i}", draw(users), draw(st.integers(1, 50)), mentions=draw(st.lists(users, max_size=3)))
        kind = draw(st.sampled_from(["plain", "reply", "rt"]))
        if kind == "reply":
            o["reply_to_user"] = draw(users)
        elif kind == "rt":
            o["retweet_of_user"] = draw(users)
        objs.append(o)
    return objs


@settings(max_examples=60, deadline=None)
@given(x_streams())
def test_edge_count_bound_and_determinism(objs):
    data = jl(*objs) if objs else b""
    recs, _ = parse_records(data, "X")
    rules = EdgeRules(include_mentions=True)
    edges, _ = extract_edges(recs, rules)
    max_m = max((len(r.mentioned_authors) for r in recs), default=0)
    assert len(edges) <= len(recs) * (1 + max_m)
    assert all(e.source != e.target for e in edges)
    assert extract_edges(parse_records(data, "X")[0], rules)[0] == edges


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(users, st.sampled_from(["A", "a ", "B"]), st.integers(1, 20)), max_size=20))
def test_reshare_source_strictly_earlier(subs):
    objs = [reddit(f"s{i}", u, ts, "submission", title=t) for i, (u, t, ts) in enumerate(subs)]
    recs, _ = parse_records(jl(*objs) if objs else b"", "Reddit")
    by_author_ts = {}
    for r in recs:
        by_author_ts.setdefault((r.author, normalize_title(r.title)), []).append(r.created_at)
    for e in extract_edges(recs)[0]:
        assert e.relation is Relation.RESHARE_SAME_TITLE
        assert any(ts < e.timestamp for key, tss in by_author_ts.items() if key[0] == e.source for ts in tss)
