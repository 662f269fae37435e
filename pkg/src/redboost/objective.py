"""Loss mathematics: similarity matrices, ranking probabilities, NDCG, fairness, boost, focal.

Index conventions follow the ranking tensors: for an anchor ``i`` and
candidates ``u, v`` the pairwise probability that ``i`` is closer to ``u``
than to ``v`` is stored at ``[u, v, i]``.

The fairness loss is evaluated in two phases. :func:`fairness_plan` does
everything that is held constant for a gradient step (top-k pair
selection, |dNDCG| weights, apriori probabilities, boost rescale
constants); :func:`fairness_loss` then evaluates the differentiable part.
Re-using a plan makes the objective a smooth function of the embeddings,
which is what finite-difference checks need.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

from .errors import ConfigError, ValidationError

logger = logging.getLogger(__name__)

# tallies of degenerate inputs handled by convention (zero vectors, flat rescale)
warning_counts: Counter = Counter()


@dataclass(frozen=True)
class FairnessConfig:
    gamma: float = 1.0
    alpha: float = 1.0
    k_fair: int = 10
    boost: bool = False
    rescale: tuple[float, float] = (1.0, 10.0)
    pool_size: int = 64
    weighting: str = "delta_ndcg"  # or "uniform"

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if self.alpha <= 0:
            raise ConfigError("alpha must be > 0")
        if self.k_fair < 1:
            raise ConfigError("k_fair must be >= 1")
        if self.rescale[1] <= self.rescale[0]:
            raise ConfigError("rescale range must be increasing")
        if self.weighting not in ("delta_ndcg", "uniform"):
            raise ConfigError(f"unknown weighting {self.weighting!r}")


# --------------------------------------------------------------------------- similarity


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        warning_counts["zero_vector"] += 1
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def normalize_rows(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit-normalised rows and the original norms; zero rows stay zero."""
    norms = np.linalg.norm(A, axis=1)
    zero = norms == 0
    if zero.any():
        warning_counts["zero_vector"] += int(zero.sum())
    safe = np.where(zero, 1.0, norms)
    return A / safe[:, None], norms


def cosine_matrix(A: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity; diagonal is exactly 1 for nonzero rows."""
    An, norms = normalize_rows(np.asarray(A, dtype=np.float64))
    S = An @ An.T
    np.clip(S, -1.0, 1.0, out=S)
    idx = np.flatnonzero(norms > 0)
    S[idx, idx] = 1.0
    return S


def apriori_similarity(pool, sonic_scaled: np.ndarray) -> np.ndarray:
    """Cosine similarity of the scaled sonic vectors of ``pool`` (genre and embeddings excluded)."""
    pool = np.asarray(pool, dtype=np.int64)
    if len(pool) == 0:
        raise ValidationError("empty pool")
    return cosine_matrix(sonic_scaled[pool])


def cosine_backward(Zn: np.ndarray, norms: np.ndarray, grad_S: np.ndarray) -> np.ndarray:
    """Chain ``dL/dS`` for ``S = cos(Z, Z)`` back to ``dL/dZ``."""
    g_zn = (grad_S + grad_S.T) @ Zn
    radial = np.sum(g_zn * Zn, axis=1, keepdims=True)
    safe = np.where(norms == 0, np.inf, norms)
    return (g_zn - radial * Zn) / safe[:, None]


# --------------------------------------------------------------------------- ranking probabilities


def prob_apriori(S_G: np.ndarray) -> np.ndarray:
    """``P_G[u, v, i] = 1`` iff ``S_G[i, u] > S_G[i, v]``; ties give 0."""
    S = np.asarray(S_G)
    return (S.T[:, None, :] > S.T[None, :, :]).astype(np.float64)


def prob_learned(S: np.ndarray, alpha: float) -> np.ndarray:
    """``P_Z[u, v, i] = sigmoid(alpha * (S[i, u] - S[i, v]))``."""
    if alpha <= 0:
        raise ConfigError("alpha must be > 0")
    S = np.asarray(S, dtype=np.float64)
    return expit(alpha * (S.T[:, None, :] - S.T[None, :, :]))


def pairwise_cross_entropy(p_target, logits):
    """``-p log sigmoid(x) - (1-p) log(1 - sigmoid(x))`` in log-sigmoid form."""
    return -(p_target * log_expit(logits) + (1.0 - p_target) * log_expit(-logits))


# --------------------------------------------------------------------------- NDCG


def _discount(ranks) -> np.ndarray:
    return 1.0 / np.log2(np.asarray(ranks, dtype=np.float64) + 1.0)


def ndcg_at_k(ranked, relevance, k: int) -> float:
    """NDCG@k with linear gain and ``1/log2(rank+1)`` discount, ranks from 1.

    ``relevance`` maps item -> grade (dict) or is indexable by item. The
    ideal ordering uses every grade in ``relevance``; 0 if the ideal DCG is 0.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    if isinstance(relevance, dict):
        grade = lambda t: float(relevance.get(t, 0.0))  # noqa: E731
        all_grades = np.array(list(relevance.values()), dtype=np.float64)
    else:
        rel = np.asarray(relevance, dtype=np.float64)
        grade = lambda t: float(rel[t])  # noqa: E731
        all_grades = rel
    top = list(ranked)[:k]
    gains = np.array([grade(t) for t in top], dtype=np.float64)
    dcg = float(np.sum(gains * _discount(np.arange(1, len(top) + 1))))
    ideal = np.sort(all_grades)[::-1][:k]
    idcg = float(np.sum(ideal * _discount(np.arange(1, len(ideal) + 1))))
    return 0.0 if idcg == 0 else dcg / idcg


def delta_ndcg_weight(ranking, u, v, k: int, relevant) -> float:
    """``|NDCG@k(ranking) - NDCG@k(ranking with u and v swapped)|`` for binary relevance."""
    ranking = list(ranking)
    rel = {t: 1.0 for t in relevant}
    swapped = ranking.copy()
    iu, iv = swapped.index(u), swapped.index(v)
    swapped[iu], swapped[iv] = swapped[iv], swapped[iu]
    return abs(ndcg_at_k(ranking, rel, k) - ndcg_at_k(swapped, rel, k))


def swap_delta_matrix(ranks: np.ndarray, rel: np.ndarray, k: int, n_relevant: int) -> np.ndarray:
    """Closed-form |dNDCG@k| for swapping every pair of items.

    ``ranks`` are 1-based positions in the current list, ``rel`` binary
    grades, ``n_relevant`` the number of relevant items in the universe.
    """
    disc = np.where(ranks <= k, _discount(ranks), 0.0)
    idcg = float(np.sum(_discount(np.arange(1, min(k, n_relevant) + 1))))
    if idcg == 0:
        return np.zeros((len(ranks), len(ranks)))
    return np.abs((rel[:, None] - rel[None, :]) * (disc[:, None] - disc[None, :])) / idcg


def _rank_desc(scores: np.ndarray) -> np.ndarray:
    """Order by descending score, ties by ascending position."""
    return np.lexsort((np.arange(len(scores)), -scores))


# --------------------------------------------------------------------------- boost


def boost_matrix(bins) -> np.ndarray:
    """``B[i, j] = |bin_i - bin_j|`` for the pool's popularity bins."""
    b = np.asarray(bins, dtype=np.float64)
    return np.abs(b[:, None] - b[None, :])


def rescale_constants(S: np.ndarray, low: float = 1.0, high: float = 10.0) -> tuple[float, float]:
    """Affine ``(scale, offset)`` mapping the off-diagonal range of ``S`` onto ``[low, high]``.

    A constant matrix maps to the midpoint with scale 0.
    """
    n = S.shape[0]
    off = S[~np.eye(n, dtype=bool)] if n > 1 else S.reshape(-1)
    lo, hi = float(off.min()), float(off.max())
    if hi - lo <= 1e-12:
        warning_counts["flat_rescale"] += 1
        logger.warning("similarity pool is constant; rescale maps to the midpoint")
        return 0.0, (low + high) / 2.0
    scale = (high - low) / (hi - lo)
    return scale, low - scale * lo


def apply_boost(S_Z: np.ndarray, B: np.ndarray, rescale=(1.0, 10.0), constants=None) -> np.ndarray:
    """``S_Z' = rescale(S_Z) + B`` with per-pool min-max rescaling."""
    scale, offset = constants if constants is not None else rescale_constants(S_Z, *rescale)
    return scale * S_Z + offset + B


# --------------------------------------------------------------------------- fairness loss


@dataclass
class AnchorTerms:
    anchor: int  # local index in the pool
    items: np.ndarray  # local indices of the selected candidates
    p_g: np.ndarray  # (|items|, |items|) apriori probabilities
    weight: np.ndarray  # (|items|, |items|) pair weights, zero diagonal


@dataclass
class FairnessPlan:
    """Per-step constants of the fairness loss."""

    terms: list[AnchorTerms]
    scale: float = 1.0
    offset: float = 0.0
    boost: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def fairness_plan(
    S_G: np.ndarray,
    S_rank: np.ndarray,
    anchors,
    k_fair: int,
    weighting: str = "delta_ndcg",
) -> list[AnchorTerms]:
    """Select pairs and weights for each anchor (all indices local to the pool).

    Candidates for anchor ``i`` are every other pool item. The pair set is
    the union of the apriori top-k (by ``S_G``) and learned top-k (by
    ``S_rank``); with ``k_fair >= |pool| - 1`` that is every candidate. The
    |dNDCG@k| weight of a pair is the NDCG change of the learned ranking
    when the two are swapped, relevance being apriori top-k membership.
    """
    n = S_G.shape[0]
    if n < 3:
        raise ValidationError("fairness pool needs at least 3 items")
    if k_fair < 1:
        raise ConfigError("k_fair must be >= 1")
    k = min(k_fair, n - 1)
    terms = []
    for i in np.asarray(anchors, dtype=np.int64):
        cand = np.delete(np.arange(n), i)
        g_order = cand[_rank_desc(S_G[i, cand])]
        z_order = cand[_rank_desc(S_rank[i, cand])]
        items = np.union1d(g_order[:k], z_order[:k])
        s_g = S_G[i, items]
        p_g = (s_g[:, None] > s_g[None, :]).astype(np.float64)
        if weighting == "uniform":
            w = np.ones((len(items), len(items)))
        else:
            ranks = np.empty(n, dtype=np.int64)
            ranks[z_order] = np.arange(1, len(z_order) + 1)
            rel = np.zeros(n)
            rel[g_order[:k]] = 1.0
            w = swap_delta_matrix(ranks[items], rel[items], k, k)
        np.fill_diagonal(w, 0.0)
        terms.append(AnchorTerms(anchor=int(i), items=items, p_g=p_g, weight=w))
    return terms


def fairness_terms_loss(terms: list[AnchorTerms], S: np.ndarray, alpha: float):
    """Weighted pairwise cross-entropy summed over anchors; returns ``(loss, dL/dS)``."""
    grad = np.zeros_like(S)
    total = 0.0
    for t in terms:
        s = S[t.anchor, t.items]
        x = alpha * (s[:, None] - s[None, :])
        total += float(np.sum(t.weight * pairwise_cross_entropy(t.p_g, x)))
        g = t.weight * (expit(x) - t.p_g)
        grad[t.anchor, t.items] += alpha * (g.sum(axis=1) - g.sum(axis=0))
    return total, grad


def make_plan(Z_pool, S_G, anchors, cfg: FairnessConfig, bins=None) -> FairnessPlan:
    Zn, _ = normalize_rows(np.asarray(Z_pool, dtype=np.float64))
    S_Z = Zn @ Zn.T
    scale, offset, B = 1.0, 0.0, None
    S_rank = S_Z
    if cfg.boost:
        if bins is None:
            raise ConfigError("boost requires popularity bins for the pool")
        B = boost_matrix(bins)
        scale, offset = rescale_constants(S_Z, *cfg.rescale)
        S_rank = apply_boost(S_Z, B, constants=(scale, offset))
    terms = fairness_plan(S_G, S_rank, anchors, cfg.k_fair, cfg.weighting)
    return FairnessPlan(terms=terms, scale=scale, offset=offset, boost=B)


def fairness_loss(
    Z_pool: np.ndarray,
    S_G: np.ndarray,
    anchors,
    cfg: FairnessConfig,
    bins=None,
    plan: FairnessPlan | None = None,
    reduction: str = "sum",
):
    """Fairness loss over a candidate pool and its gradient w.r.t. the pool embeddings.

    ``anchors`` are local pool indices. Returns ``(loss, dL/dZ_pool, plan)``;
    pass the plan back in to evaluate at perturbed embeddings with the same
    selection, weights and rescale constants.
    """
    Zn, norms = normalize_rows(np.asarray(Z_pool, dtype=np.float64))
    S_Z = Zn @ Zn.T
    if plan is None:
        plan = make_plan(Z_pool, S_G, anchors, cfg, bins)
    S_eff = S_Z if plan.boost is None else plan.scale * S_Z + plan.offset + plan.boost
    loss, g_eff = fairness_terms_loss(plan.terms, S_eff, cfg.alpha)
    g_S = g_eff * plan.scale if plan.boost is not None else g_eff
    if reduction == "mean":
        n = max(len(plan.terms), 1)
        loss, g_S = loss / n, g_S / n
    elif reduction != "sum":
        raise ConfigError(f"unknown reduction {reduction!r}")
    return loss, cosine_backward(Zn, norms, g_S), plan


# --------------------------------------------------------------------------- utility


def focal_loss(logits, labels, gamma_f: float = 2.0, alpha_f: float = 0.5):
    """Mean binary focal loss over a batch; returns ``(loss, dL/dlogits)``.

    ``p_t`` is ``sigmoid(x)`` for label 1 and ``1 - sigmoid(x)`` for label 0;
    the class weight is ``alpha_f`` for positives and ``1 - alpha_f`` for
    negatives.
    """
    x = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.size == 0:
        raise ValidationError("empty batch")
    sign = np.where(y > 0.5, 1.0, -1.0)
    alpha_t = np.where(y > 0.5, alpha_f, 1.0 - alpha_f)
    log_pt = log_expit(sign * x)
    pt = expit(sign * x)
    one_minus = expit(-sign * x)
    mod = one_minus**gamma_f
    loss = -alpha_t * mod * log_pt
    # d/dx of -alpha (1-p)^g log p with p = sigmoid(s x)
    grad = alpha_t * sign * mod * (gamma_f * pt * log_pt - one_minus)
    n = x.size
    return float(loss.sum() / n), grad / n


def pair_logits(Z: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    return np.sum(Z[pairs[:, 0]] * Z[pairs[:, 1]], axis=1)


def utility_loss(Z: np.ndarray, pos: np.ndarray, neg: np.ndarray, gamma_f: float = 2.0, alpha_f: float = 0.5):
    """Focal loss on dot-product logits of positive and negative pairs.

    Pair entries index rows of ``Z``. Returns ``(loss, dL/dZ)``.
    """
    pairs = np.vstack([pos, neg])
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    logits = pair_logits(Z, pairs)
    loss, g = focal_loss(logits, labels, gamma_f, alpha_f)
    grad = np.zeros_like(Z)
    np.add.at(grad, pairs[:, 0], g[:, None] * Z[pairs[:, 1]])
    np.add.at(grad, pairs[:, 1], g[:, None] * Z[pairs[:, 0]])
    return loss, grad


def total_loss(utility: float, fairness: float, gamma: float) -> float:
    value = utility + gamma * fairness
    if not math.isfinite(value):
        raise ValidationError(f"non-finite total loss (utility={utility}, fairness={fairness})")
    return value
