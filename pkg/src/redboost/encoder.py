"""Two-layer neighbourhood-aggregating track encoder with hand-written backprop.

Layer ``l`` computes, for every track ``t`` it is asked about::

    n_t = sum_j w_tj * h_{u_j}            (importance-weighted neighbour mean)
    h_t' = relu([h_t, n_t] @ W_l + b_l)

and the output is ``z_t = h_t^(2) @ W_out``. Row-vector convention throughout.

Input column layout of ``X``: 9 sonic bins scaled to [0, 1], 20 genre
flags, then the name block (512) and image block (1024) when enabled.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import itertools

import numpy as np

from .data_store import N_GENRE, N_SONIC, TrackFeatureTable
from .errors import ConfigError, ValidationError
from .sampler import NeighborTable

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W_out")
_tokens = itertools.count(1)


def build_input_features(features: TrackFeatureTable, use_name: bool = False, use_image: bool = False) -> np.ndarray:
    blocks = [features.sonic_scaled(), np.asarray(features.genre, dtype=np.float64)]
    for flag, block, label in ((use_name, features.name_emb, "name"), (use_image, features.image_emb, "image")):
        if flag:
            if block is None:
                raise ConfigError(f"{label} embeddings requested but not loaded")
            blocks.append(np.asarray(block, dtype=np.float64))
    return np.hstack(blocks)


def input_dim(use_name: bool = False, use_image: bool = False, name_dim: int = 512, image_dim: int = 1024) -> int:
    return N_SONIC + N_GENRE + (name_dim if use_name else 0) + (image_dim if use_image else 0)


@dataclass
class EncoderParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W_out: np.ndarray
    # bumped on every in-place update so stale forward caches are detected
    token: int = field(default_factory=lambda: next(_tokens), compare=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.W1.shape[0] // 2, self.W1.shape[1], self.W_out.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self) -> "EncoderParams":
        return EncoderParams(**{k: v.copy() for k, v in self.arrays().items()})

    def touch(self) -> None:
        self.token = next(_tokens)

    def validate(self) -> None:
        d_x, h, d = self.dims
        expected = {"W1": (2 * d_x, h), "b1": (h,), "W2": (2 * h, h), "b2": (h,), "W_out": (h, d)}
        for k, shape in expected.items():
            arr = getattr(self, k)
            if arr.shape != shape:
                raise ValidationError(f"{k} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{k} has non-finite entries")


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(d_x: int, hidden: int = 64, out: int = 64, seed: int = 0) -> EncoderParams:
    if min(d_x, hidden, out) <= 0:
        raise ConfigError(f"dims must be positive, got d_x={d_x} hidden={hidden} out={out}")
    rng = np.random.default_rng(seed)

    def uniform(fan_in, fan_out):
        b = glorot_bound(fan_in, fan_out)
        return rng.uniform(-b, b, size=(fan_in, fan_out))

    return EncoderParams(
        W1=uniform(2 * d_x, hidden),
        b1=np.zeros(hidden),
        W2=uniform(2 * hidden, hidden),
        b2=np.zeros(hidden),
        W_out=uniform(hidden, out),
    )


@dataclass
class ForwardCache:
    token: int
    tracks: np.ndarray  # output rows, in request order
    layer1_nodes: np.ndarray  # tracks whose first-layer state was computed
    local_self: np.ndarray  # position of each output track in layer1_nodes
    local_nbr: np.ndarray  # (|out|, m) positions of their neighbours in layer1_nodes
    w_out: np.ndarray  # (|out|, m) neighbour weights of output tracks
    nbr0: np.ndarray  # (|layer1|, m) global neighbour ids for layer 1
    w0: np.ndarray
    cat1: np.ndarray
    a1: np.ndarray
    h1: np.ndarray
    cat2: np.ndarray
    a2: np.ndarray
    h2: np.ndarray

    def min_abs_preactivation(self) -> float:
        return float(min(np.abs(self.a1).min(initial=np.inf), np.abs(self.a2).min(initial=np.inf)))


def forward(
    params: EncoderParams, X: np.ndarray, neighbors: NeighborTable, tracks=None
) -> tuple[np.ndarray, ForwardCache]:
    """Embeddings for ``tracks`` (default: every track) plus the backward cache."""
    d_x = params.dims[0]
    if X.ndim != 2 or X.shape[1] != d_x:
        raise ValidationError(f"X has shape {X.shape}, encoder expects {d_x} columns")
    if neighbors.index.shape[0] != X.shape[0]:
        raise ValidationError("neighbour table and feature matrix disagree on track count")
    tracks = np.arange(X.shape[0]) if tracks is None else np.asarray(tracks, dtype=np.int64)

    nbr2, w2 = neighbors.index[tracks], neighbors.weight[tracks]
    layer1_nodes = np.unique(np.concatenate([tracks, nbr2[w2 > 0]]))
    local_self = np.searchsorted(layer1_nodes, tracks)
    # zero-weight slots point at position 0; harmless since their weight is 0
    local_nbr = np.where(w2 > 0, np.searchsorted(layer1_nodes, nbr2), 0)
    local_nbr = np.minimum(local_nbr, len(layer1_nodes) - 1)

    nbr0, w0 = neighbors.index[layer1_nodes], neighbors.weight[layer1_nodes]
    agg0 = np.einsum("nm,nmd->nd", w0, X[nbr0])
    cat1 = np.hstack([X[layer1_nodes], agg0])
    a1 = cat1 @ params.W1 + params.b1
    h1 = np.maximum(a1, 0.0)

    agg1 = np.einsum("nm,nmd->nd", w2, h1[local_nbr])
    cat2 = np.hstack([h1[local_self], agg1])
    a2 = cat2 @ params.W2 + params.b2
    h2 = np.maximum(a2, 0.0)
    z = h2 @ params.W_out
    cache = ForwardCache(
        token=params.token, tracks=tracks, layer1_nodes=layer1_nodes, local_self=local_self,
        local_nbr=local_nbr, w_out=w2, nbr0=nbr0, w0=w0, cat1=cat1, a1=a1, h1=h1,
        cat2=cat2, a2=a2, h2=h2,
    )
    return z, cache


def backward(params: EncoderParams, cache: ForwardCache, grad_z: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar objective w.r.t. every parameter, given dL/dZ for the cached rows."""
    if cache.token != params.token:
        raise ValidationError("forward cache is stale: parameters changed since the forward pass")
    if grad_z.shape != (len(cache.tracks), params.W_out.shape[1]):
        raise ValidationError(f"grad_z has shape {grad_z.shape}, expected {(len(cache.tracks), params.W_out.shape[1])}")
    h = params.dims[1]

    g_wout = cache.h2.T @ grad_z
    g_a2 = (grad_z @ params.W_out.T) * (cache.a2 > 0)
    g_w2 = cache.cat2.T @ g_a2
    g_b2 = g_a2.sum(axis=0)
    g_cat2 = g_a2 @ params.W2.T

    g_h1 = np.zeros_like(cache.h1)
    np.add.at(g_h1, cache.local_self, g_cat2[:, :h])
    g_agg = g_cat2[:, h:]
    np.add.at(g_h1, cache.local_nbr, cache.w_out[:, :, None] * g_agg[:, None, :])

    g_a1 = g_h1 * (cache.a1 > 0)
    g_w1 = cache.cat1.T @ g_a1
    g_b1 = g_a1.sum(axis=0)
    return {"W1": g_w1, "b1": g_b1, "W2": g_w2, "b2": g_b2, "W_out": g_wout}


def embed_all(params: EncoderParams, X: np.ndarray, neighbors: NeighborTable) -> np.ndarray:
    return forward(params, X, neighbors)[0]


def gradient_check(
    objective,
    params: EncoderParams,
    analytic: dict[str, np.ndarray],
    eps: float = 1e-5,
    n_samples: int = 40,
    seed: int = 0,
) -> float:
    """Max relative error between ``analytic`` and central differences of ``objective``.

    ``objective(params) -> float`` must be deterministic, i.e. any sampling
    and top-k selection inside it frozen. A random subset of ``n_samples``
    coordinates per parameter array is probed. Relative error is
    ``|a - n| / max(|a|, |n|, 1e-7)``.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in PARAM_NAMES:
        arr = getattr(params, name)
        flat = arr.reshape(-1)
        picks = rng.choice(flat.size, size=min(n_samples, flat.size), replace=False)
        for idx in picks:
            orig = flat[idx]
            flat[idx] = orig + eps
            params.touch()
            f_plus = objective(params)
            flat[idx] = orig - eps
            params.touch()
            f_minus = objective(params)
            flat[idx] = orig
            params.touch()
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise ValidationError("objective is not finite during gradient check")
            numeric = (f_plus - f_minus) / (2 * eps)
            a = float(analytic[name].reshape(-1)[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-7)
            worst = max(worst, err)
    return worst
