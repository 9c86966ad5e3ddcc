"""External text-embedding providers and per-user embedding tables."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

log = logging.getLogger(__name__)


class EmbeddingError(RuntimeError):
    pass


@dataclass
class EmbeddingTable:
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    provider: str = "unknown"
    dim: int = 0

    def __post_init__(self):
        widths = {v.shape[0] for v in self.vectors.values()}
        if len(widths) > 1:
            raise ValueError(f"embedding table has mixed widths {sorted(widths)}")
        if widths:
            (w,) = widths
            if self.dim and self.dim != w:
                raise ValueError(f"declared dim {self.dim} != vector width {w}")
            self.dim = w
        for u, v in self.vectors.items():
            if not np.isfinite(v).all():
                raise ValueError(f"non-finite embedding for {u}")

    def __len__(self):
        return len(self.vectors)


# ---------------------------------------------------------------- file formats

EMB_MAGIC = b"EMB1"


def dump_table(table: EmbeddingTable) -> bytes:
    """``EMB1 | u32 count | u32 dim | u32 len + provider | count x (u32 len, id, f32[dim])``."""
    tag = table.provider.encode("utf-8")
    parts = [EMB_MAGIC, struct.pack("<III", len(table), table.dim, len(tag)), tag]
    for uid in sorted(table.vectors):
        raw = uid.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, np.asarray(table.vectors[uid], dtype="<f4").tobytes()]
    return b"".join(parts)


def load_table(buf: bytes) -> EmbeddingTable:
    if buf[:4] != EMB_MAGIC:
        raise ValueError("not an EMB1 table")
    count, dim, tlen = struct.unpack_from("<III", buf, 4)
    pos = 16
    provider = buf[pos:pos + tlen].decode("utf-8")
    pos += tlen
    vecs = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        uid = buf[pos:pos + ln].decode("utf-8")
        pos += ln
        vecs[uid] = np.frombuffer(buf, dtype="<f4", count=dim, offset=pos).astype(np.float32)
        pos += 4 * dim
    return EmbeddingTable(vecs, provider, dim)


def read_table(path, provider: str | None = None) -> EmbeddingTable:
    """Load an embedding table from EMB1 binary or JSON lines ``{"user_id", "vector"}``."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] == EMB_MAGIC:
        return load_table(buf)
    vecs = {}
    for lineno, line in enumerate(buf.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        obj = json.loads(line)
        vecs[str(obj["user_id"])] = np.asarray(obj["vector"], dtype=np.float32)
    return EmbeddingTable(vecs, provider or "jsonl")


def write_table(table: EmbeddingTable, path, binary: bool = False) -> None:
    if binary:
        with open(path, "wb") as f:
            f.write(dump_table(table))
        return
    with open(path, "w", encoding="utf-8") as f:
        for uid in sorted(table.vectors):
            f.write(json.dumps({"user_id": uid, "vector": [float(x) for x in table.vectors[uid]]}) + "\n")


# ---------------------------------------------------------------- providers

class Provider(Protocol):
    name: str
    dim: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


def _token_vector(token: str, dim: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
    v = np.random.default_rng(seed).standard_normal(dim)
    return v / np.linalg.norm(v)


@dataclass
class HashingProvider:
    """Offline stand-in for a sentence encoder: mean of per-token hashed unit
    vectors, L2-normalized. Texts sharing vocabulary land close together."""
    dim: int = 384
    name: str = "hashing"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for i, text in enumerate(texts):
            toks = text.split()
            if not toks:
                continue
            v = np.mean([_token_vector(t, self.dim) for t in toks], axis=0)
            out[i] = v / max(np.linalg.norm(v), 1e-12)
        return out.astype(np.float32)


@dataclass
class RandomProvider:
    """Ignores the text; returns seeded random unit vectors (an uninformative control)."""
    dim: int = 384
    seed: int = 0
    name: str = "random"

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        v = self._rng.standard_normal((len(texts), self.dim))
        return (v / np.linalg.norm(v, axis=1, keepdims=True)).astype(np.float32)


@dataclass
class HttpProvider:
    """POST ``{"texts": [...]}`` to ``<url>/embed``; expects ``{"vectors": [[...]]}``.

    The API key, when set, is read from the environment variable named by
    ``api_key_env`` and sent as a bearer token.
    """
    url: str
    dim: int = 384
    name: str = "http"
    api_key_env: str = "EMBEDDING_API_KEY"
    timeout: float = 30.0

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        body = json.dumps({"texts": list(texts)}).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        req = urllib.request.Request(self.url.rstrip("/") + "/embed", data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise EmbeddingError(f"embedding request failed: {exc}") from exc
        vecs = np.asarray(payload.get("vectors"), dtype=np.float32)
        if vecs.ndim != 2 or vecs.shape[0] != len(texts):
            raise EmbeddingError(f"provider returned shape {vecs.shape} for {len(texts)} texts")
        return vecs


# ---------------------------------------------------------------- per-user embedding

def chunk_posts(posts: Sequence[str], token_limit: int) -> list[str]:
    """Greedily pack posts into chunks of at most ``token_limit`` whitespace tokens.

    A single post longer than the limit is split across chunks.
    """
    if token_limit <= 0:
        raise ValueError("token_limit must be positive")
    chunks, cur = [], []
    for post in posts:
        toks = post.split()
        while toks:
            room = token_limit - len(cur)
            cur.extend(toks[:room])
            toks = toks[room:]
            if len(cur) == token_limit:
                chunks.append(" ".join(cur))
                cur = []
    if cur:
        chunks.append(" ".join(cur))
    return chunks


def call_with_retry(fn: Callable, *args, retries: int = 3, backoff: float = 0.5, sleep=time.sleep):
    for attempt in range(retries + 1):
        try:
            return fn(*args)
        except Exception as exc:  # provider-specific failures
            if attempt == retries:
                raise EmbeddingError(f"provider failed after {retries + 1} attempts: {exc}") from exc
            sleep(backoff * 2 ** attempt)


def embed_user_posts(posts: Sequence[str], provider, max_posts: int = 100, chunk_token_limit: int = 512,
                     batch_size: int = 16, retries: int = 3, backoff: float = 0.5, sleep=time.sleep) -> np.ndarray:
    """Mean chunk embedding of a user's most recent posts.

    ``posts`` are ordered most recent first. Zero posts give a zero vector.
    """
    recent = [p for p in posts[:max_posts] if p and p.strip()]
    if not recent:
        return np.zeros(provider.dim, dtype=np.float32)
    chunks = chunk_posts(recent, chunk_token_limit)
    vecs = []
    for i in range(0, len(chunks), batch_size):
        batch = chunks[i:i + batch_size]
        vecs.append(np.asarray(call_with_retry(provider.embed, batch, retries=retries, backoff=backoff, sleep=sleep)))
    allv = np.vstack(vecs).astype(np.float64)
    return allv.mean(axis=0).astype(np.float32)


def user_posts(records: Iterable) -> dict[str, list[str]]:
    """Group record texts (title + body) per author, most recent first."""
    by_user: dict[str, list[tuple[int, str]]] = {}
    for r in records:
        text = " ".join(t for t in (r.title, r.text) if t)
        if text:
            by_user.setdefault(r.author, []).append((r.created_at, text))
    return {u: [t for _, t in sorted(items, key=lambda x: -x[0])] for u, items in by_user.items()}


def build_table(records: Iterable, provider, users: Iterable[str] | None = None, **kw) -> tuple[EmbeddingTable, dict[str, str]]:
    """Embed every user's posts; returns the table and per-user errors."""
    posts = user_posts(records)
    vecs, errors = {}, {}
    for u in sorted(users if users is not None else posts):
        try:
            vecs[u] = embed_user_posts(posts.get(u, []), provider, **kw)
        except EmbeddingError as exc:
            errors[u] = str(exc)
    if errors:
        log.warning("embedding failed for %d user(s)", len(errors))
    return EmbeddingTable(vecs, provider.name, provider.dim), errors
