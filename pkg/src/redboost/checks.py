"""Built-in correctness checks: finite-difference gradients and brute-force oracles.

Used by ``redboost selftest``; the test suite exercises the same routines.
"""
from __future__ import annotations

import dataclasses
import itertools
import math

import numpy as np
from scipy.special import expit

from . import encoder, objective, popularity, sampler
from .data_store import SynthSpec, generate_synthetic
from .objective import FairnessConfig

TINY_SPEC = SynthSpec(n_playlists=12, n_tracks=30, n_artists=6, n_clusters=3, min_len=4, max_len=8)


@dataclasses.dataclass
class GradProblem:
    """A frozen small training step: features, neighbours, pairs and a fairness plan."""

    params: encoder.EncoderParams
    X: np.ndarray
    neighbors: sampler.NeighborTable
    pos: np.ndarray
    neg: np.ndarray
    pool: np.ndarray
    anchors: np.ndarray  # local to pool
    S_G: np.ndarray
    bins: np.ndarray
    cfg: FairnessConfig
    plan: objective.FairnessPlan


def grad_problem(seed: int = 0, out_dim: int = 4, hidden: int = 6, boost: bool = True) -> GradProblem:
    g, feats = generate_synthetic(TINY_SPEC, seed=seed)
    X = encoder.build_input_features(feats)
    nbrs = sampler.build_neighbor_table(g, walks=50, walk_len=2, m=5, seed=seed)
    params = encoder.init_params(X.shape[1], hidden, out_dim, seed)
    # larger weights keep preactivations away from the ReLU kink
    for name in ("W1", "W2", "W_out"):
        getattr(params, name)[...] *= 3.0
    params.touch()
    pos = sampler.sample_positive_pairs(g, 16, seed)
    rng = np.random.default_rng(seed)
    neg = np.column_stack([pos[:, 0], rng.integers(0, g.n_tracks, len(pos))])
    pool = np.sort(rng.choice(g.n_tracks, 10, replace=False))
    anchors = np.arange(0, 10, 3)
    S_G = objective.apriori_similarity(pool, feats.sonic_scaled())
    counts = np.array([len(x) for x in g.track_playlists])
    bins = popularity.assign_bins(counts).bins[pool]
    cfg = FairnessConfig(gamma=0.7, alpha=2.0, k_fair=4, boost=boost)
    Z = encoder.embed_all(params, X, nbrs)
    plan = objective.make_plan(Z[pool], S_G, anchors, cfg, bins)
    return GradProblem(params, X, nbrs, pos, neg, pool, anchors, S_G, bins, cfg, plan)


def _losses(pr: GradProblem, params):
    Z, cache = encoder.forward(params, pr.X, pr.neighbors)
    u, gu = objective.utility_loss(Z, pr.pos, pr.neg)
    f, gf_pool, _ = objective.fairness_loss(Z[pr.pool], pr.S_G, pr.anchors, pr.cfg, pr.bins, plan=pr.plan)
    gf = np.zeros_like(Z)
    gf[pr.pool] = gf_pool
    return (u, gu), (f, gf), cache


def gradient_errors(seed: int = 0, eps: float = 1e-5, n_samples: int = 30, boost: bool = True) -> dict[str, float]:
    """Max relative analytic-vs-central-difference error for each loss term."""
    pr = grad_problem(seed, boost=boost)
    (u, gu), (f, gf), cache = _losses(pr, pr.params)
    gamma = pr.cfg.gamma
    analytic = {
        "utility": encoder.backward(pr.params, cache, gu),
        "fairness": encoder.backward(pr.params, cache, gf),
        "total": encoder.backward(pr.params, cache, gu + gamma * gf),
    }
    objectives = {
        "utility": lambda p: _losses(pr, p)[0][0],
        "fairness": lambda p: _losses(pr, p)[1][0],
        "total": lambda p: objective.total_loss(*(t[0] for t in _losses(pr, p)[:2]), gamma),
    }
    return {
        name: encoder.gradient_check(fn, pr.params, analytic[name], eps=eps, n_samples=n_samples, seed=seed)
        for name, fn in objectives.items()
    }


# --------------------------------------------------------------------------- oracles


def fairness_bruteforce(S_G: np.ndarray, S_Z: np.ndarray, alpha: float) -> float:
    """Sum over every triple (i, u, v) of distinct pool items, uniform weights."""
    n = S_G.shape[0]
    total = 0.0
    for i, u, v in itertools.permutations(range(n), 3):
        p_g = 1.0 if S_G[i, u] > S_G[i, v] else 0.0
        p_z = 1.0 / (1.0 + math.exp(-alpha * (S_Z[i, u] - S_Z[i, v])))
        total += -p_g * math.log(p_z) - (1.0 - p_g) * math.log(1.0 - p_z)
    return total


def fairness_oracle_gap(n: int = 8, dim: int = 5, alpha: float = 1.5, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(n, dim))
    sonic = rng.integers(0, 10, size=(n, 9)) / 9.0
    S_G = objective.apriori_similarity(np.arange(n), sonic)
    cfg = FairnessConfig(alpha=alpha, k_fair=n, weighting="uniform")
    loss, _, _ = objective.fairness_loss(Z, S_G, np.arange(n), cfg)
    S_Z = objective.cosine_matrix(Z)
    return abs(loss - fairness_bruteforce(S_G, S_Z, alpha))


def naive_bins(counts) -> list[int]:
    a_max = max(counts)
    out = []
    for a in counts:
        if a_max <= 1 or a < 1:
            out.append(0)
        else:
            out.append(min(max(math.floor(10 * math.log10(a) / math.log10(a_max)), 0), 9))
    return out


def binning_mismatches(n_vectors: int = 200, seed: int = 0) -> int:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n_vectors):
        counts = rng.integers(1, rng.integers(2, 5000), size=rng.integers(1, 50))
        bad += int(popularity.assign_bins(counts).bins.tolist() != naive_bins(counts.tolist()))
    return bad


def sigmoid_identity_gap() -> float:
    # P_Z(u, v) + P_Z(v, u) = 1 for every pair
    rng = np.random.default_rng(0)
    S = rng.normal(size=(6, 6))
    P = objective.prob_learned(S, 1.3)
    return float(np.max(np.abs(P + P.transpose(1, 0, 2) - 1.0)) + abs(expit(0.0) - 0.5))
