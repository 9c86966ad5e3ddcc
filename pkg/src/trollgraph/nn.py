"""Small numpy neural kernels with hand-written backward passes.

Every kernel is dtype-generic: models train in float32, gradient checks run
the same code in float64. Reductions go through numpy/BLAS calls with fixed
shapes and fixed call order, so identical inputs give bitwise-identical
outputs within a process.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

Params = dict[str, np.ndarray]

CLAMP_EPS = 1e-7


class ShapeError(ValueError):
    pass


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


# ---------------------------------------------------------------- dense layers

def linear(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"linear: x{x.shape} @ W{W.shape} + b{b.shape}")
    return x @ W + b


def linear_backward(dy: np.ndarray, x: np.ndarray, W: np.ndarray):
    """Return (dx, dW, db) for y = xW + b."""
    return dy @ W.T, x.T @ dy, dy.sum(axis=0)


# ---------------------------------------------------------------- activations

def activation(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "sigmoid":
        return expit(x)
    if kind == "tanh":
        return np.tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(dy: np.ndarray, x: np.ndarray, y: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return dy * (x > 0)
    if kind == "sigmoid":
        return dy * y * (1 - y)
    if kind == "tanh":
        return dy * (1 - y * y)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------- aggregation

class MeanAggregator:
    """Row-normalized neighbor matrix: ``M = A @ H`` averages neighbor rows.

    Built from CSR neighbor lists (distinct neighbors); rows with no
    neighbors are all-zero, so isolated nodes aggregate to a zero vector.
    """

    def __init__(self, indptr: np.ndarray, indices: np.ndarray, n: int, dtype=np.float32):
        deg = np.diff(indptr)
        data = np.repeat(1.0 / np.maximum(deg, 1), deg).astype(dtype)
        self.n = n
        self.A = sp.csr_array((data, indices, indptr), shape=(n, n))
        self.AT = self.A.T.tocsr()
        self.AT.sort_indices()

    @classmethod
    def from_graph(cls, graph, direction: str = "undirected", dtype=np.float32) -> "MeanAggregator":
        indptr, indices = graph.neighbors_csr(direction)
        return cls(indptr, indices, graph.num_nodes, dtype=dtype)

    def __call__(self, H: np.ndarray) -> np.ndarray:
        if H.shape[0] != self.n:
            raise ShapeError(f"mean_aggregate: H has {H.shape[0]} rows, graph has {self.n} nodes")
        return np.asarray(self.A @ H, dtype=H.dtype)

    def backward(self, dM: np.ndarray) -> np.ndarray:
        return np.asarray(self.AT @ dM, dtype=dM.dtype)


def mean_aggregate(graph, H: np.ndarray, direction: str = "undirected") -> np.ndarray:
    return MeanAggregator.from_graph(graph, direction, dtype=H.dtype)(H)


# ---------------------------------------------------------------- GRU

GRU_KEYS = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


def init_gru(rng: np.random.Generator, in_dim: int, hidden: int, dtype=np.float32, prefix="gru.") -> Params:
    p = {}
    for gate in "zrh":
        p[f"{prefix}W_{gate}"] = glorot(rng, in_dim, hidden, dtype)
        p[f"{prefix}U_{gate}"] = glorot(rng, hidden, hidden, dtype)
        p[f"{prefix}b_{gate}"] = np.zeros(hidden, dtype=dtype)
    return p


def gru_cell(x: np.ndarray, h: np.ndarray, p: Mapping[str, np.ndarray], prefix="gru."):
    """One GRU step. Returns (h_new, cache)."""
    W = lambda k: p[prefix + k]  # noqa: E731
    if x.shape[1] != W("W_z").shape[0] or h.shape[1] != W("U_z").shape[0] or x.shape[0] != h.shape[0]:
        raise ShapeError(f"gru_cell: x{x.shape}, h{h.shape}, W_z{W('W_z').shape}, U_z{W('U_z').shape}")
    z = expit(x @ W("W_z") + h @ W("U_z") + W("b_z"))
    r = expit(x @ W("W_r") + h @ W("U_r") + W("b_r"))
    rh = r * h
    hh = np.tanh(x @ W("W_h") + rh @ W("U_h") + W("b_h"))
    h_new = (1 - z) * hh + z * h
    return h_new, (x, h, z, r, rh, hh)


def gru_cell_backward(dh_new: np.ndarray, cache, p: Mapping[str, np.ndarray], prefix="gru."):
    """Return (dx, dh_prev, grads) for one GRU step."""
    x, h, z, r, rh, hh = cache
    W = lambda k: p[prefix + k]  # noqa: E731
    g = {}
    dz = dh_new * (h - hh)
    dhh = dh_new * (1 - z)
    dh = dh_new * z

    da_h = dhh * (1 - hh * hh)
    g["W_h"] = x.T @ da_h
    g["U_h"] = rh.T @ da_h
    g["b_h"] = da_h.sum(axis=0)
    dx = da_h @ W("W_h").T
    drh = da_h @ W("U_h").T
    dh = dh + drh * r
    dr = drh * h

    da_r = dr * r * (1 - r)
    g["W_r"] = x.T @ da_r
    g["U_r"] = h.T @ da_r
    g["b_r"] = da_r.sum(axis=0)
    dx = dx + da_r @ W("W_r").T
    dh = dh + da_r @ W("U_r").T

    da_z = dz * z * (1 - z)
    g["W_z"] = x.T @ da_z
    g["U_z"] = h.T @ da_z
    g["b_z"] = da_z.sum(axis=0)
    dx = dx + da_z @ W("W_z").T
    dh = dh + da_z @ W("U_z").T
    return dx, dh, {prefix + k: v for k, v in g.items()}


# ---------------------------------------------------------------- losses

def cross_entropy_2class(logits: np.ndarray, target: np.ndarray):
    """Mean softmax cross-entropy over rows. Returns (loss, dlogits)."""
    n = logits.shape[0]
    if n == 0:
        raise ValueError("cross_entropy: empty batch")
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ShapeError(f"cross_entropy_2class expects (n, 2) logits, got {logits.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    idx = np.arange(n)
    loss = float(-logp[idx, target].sum() / n)
    d = np.exp(logp)
    d[idx, target] -= 1
    return loss, (d / n).astype(logits.dtype)


def binary_cross_entropy(p: np.ndarray, y: np.ndarray):
    """Mean BCE on probabilities clamped to [1e-7, 1 - 1e-7]. Returns (loss, dp)."""
    n = p.shape[0]
    if n == 0:
        raise ValueError("binary_cross_entropy: empty batch")
    pc = np.clip(p, CLAMP_EPS, 1 - CLAMP_EPS)
    loss = float(-(y * np.log(pc) + (1 - y) * np.log(1 - pc)).sum() / n)
    inside = (p >= CLAMP_EPS) & (p <= 1 - CLAMP_EPS)
    dp = np.where(inside, (pc - y) / (pc * (1 - pc)), 0.0) / n
    return loss, dp.astype(p.dtype)


def loss(pred: np.ndarray, target: np.ndarray, kind: str):
    if kind == "cross_entropy_2class":
        return cross_entropy_2class(pred, target)
    if kind == "binary_cross_entropy":
        return binary_cross_entropy(pred, target)
    raise ValueError(f"unknown loss {kind!r}")


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, value: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(value), np.zeros_like(value))


def adam_step(params: Params, grads: Mapping[str, np.ndarray], states: dict[str, AdamState], lr: float) -> None:
    """In-place Adam update with bias correction. Missing states are created."""
    for name in params:
        g = grads.get(name)
        if g is None:
            continue
        st = states.get(name)
        if st is None:
            st = states[name] = AdamState.like(params[name])
        st.t += 1
        dt = params[name].dtype.type
        st.m = dt(st.beta1) * st.m + dt(1 - st.beta1) * g
        st.v = dt(st.beta2) * st.v + dt(1 - st.beta2) * (g * g)
        mhat = st.m / dt(1 - st.beta1 ** st.t)
        vhat = st.v / dt(1 - st.beta2 ** st.t)
        params[name] = params[name] - dt(lr) * mhat / (np.sqrt(vhat) + dt(st.eps))


@dataclass
class Adam:
    params: Params
    lr: float = 1e-3
    states: dict[str, AdamState] = field(default_factory=dict)

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        adam_step(self.params, grads, self.states, self.lr)


def add_grads(acc: dict[str, np.ndarray], new: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    for k, v in new.items():
        acc[k] = acc[k] + v if k in acc else v.copy()
    return acc


# ---------------------------------------------------------------- grad check

@dataclass
class GradCheckReport:
    max_rel_err: float
    per_param: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def grad_check(
    model_fn: Callable[[Params], tuple[float, Mapping[str, np.ndarray]]],
    params: Params,
    tol: float = 1e-4,
    h: float = 1e-5,
    floor: float = 1e-6,
    names: Iterable[str] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients with central differences, coordinate by coordinate.

    ``model_fn(params)`` returns ``(loss, grads)``. Parameters are promoted to
    float64 copies before probing. Relative error per coordinate is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    p64 = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, analytic = model_fn(p64)
    per = {}
    for name in names if names is not None else p64:
        val = p64[name]
        flat = val.reshape(-1)
        a = np.asarray(analytic.get(name, np.zeros_like(val)), dtype=np.float64).reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp, _ = model_fn(p64)
            flat[i] = orig - h
            fm, _ = model_fn(p64)
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            err = abs(a[i] - num) / max(abs(a[i]), abs(num), floor)
            worst = max(worst, err)
        per[name] = worst
    return GradCheckReport(max(per.values(), default=0.0), per, tol)


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"ALTH"
CKPT_VERSION = 1


def dump_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    """Serialize named tensors to the ALTH container (f32 little-endian payloads)."""
    out = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        a = np.asarray(arr, dtype="<f4")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", a.ndim))
        out.append(struct.pack(f"<{a.ndim}I", *a.shape))
        out.append(a.tobytes())
    return b"".join(out)


def load_tensors(buf: bytes, offset: int = 0) -> tuple[dict[str, np.ndarray], int]:
    """Parse an ALTH container starting at ``offset``. Returns (tensors, end offset)."""
    if buf[offset:offset + 4] != CKPT_MAGIC:
        raise ValueError("not an ALTH checkpoint")
    version, count = struct.unpack_from("<II", buf, offset + 4)
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = offset + 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = bytes(buf[pos:pos + nlen]).decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        size = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
        pos += 4 * size
        out[name] = arr
    return out, pos


def save_checkpoint(path, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(dump_tensors(tensors))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return load_tensors(f.read())[0]
