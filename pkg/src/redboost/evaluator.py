"""Accuracy, music and popularity-fairness metrics over a recommendation run."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import ValidationError
from .objective import ndcg_at_k, normalize_rows
from .recommender import RecommendationRun

METRICS = ("recall", "ndcg", "artist_recall", "flow", "diversity", "pct_lt", "lt_coverage", "artist_coverage")
PER_PLAYLIST = ("recall", "ndcg", "artist_recall", "flow", "diversity", "pct_lt")
SELECTION_METRICS = ("recall", "ndcg", "artist_recall", "pct_lt", "lt_coverage")


def _holdout_for(run: RecommendationRun, holdouts: dict[int, np.ndarray]) -> list[np.ndarray]:
    missing = [p for p in run.playlists if p not in holdouts]
    if missing:
        raise ValidationError(f"{len(missing)} recommended playlists have no holdout, e.g. {missing[:3]}")
    return [holdouts[p] for p in run.playlists]


def recall_per_playlist(run, holdouts) -> np.ndarray:
    out = []
    for rec, gold in zip(run.items, _holdout_for(run, holdouts)):
        gold = set(np.asarray(gold).tolist())
        out.append(len(gold.intersection(rec.tolist())) / len(gold))
    return np.asarray(out)


def ndcg_per_playlist(run, holdouts, k: int | None = None) -> np.ndarray:
    out = []
    for rec, gold in zip(run.items, _holdout_for(run, holdouts)):
        rel = {int(t): 1.0 for t in gold}
        out.append(ndcg_at_k(rec.tolist(), rel, k or max(len(rec), 1)))
    return np.asarray(out)


def artist_recall_per_playlist(run, holdouts, track_artist) -> np.ndarray:
    out = []
    for rec, gold in zip(run.items, _holdout_for(run, holdouts)):
        gold_a = set(track_artist[np.asarray(gold)].tolist())
        rec_a = set(track_artist[rec].tolist())
        out.append(len(gold_a & rec_a) / len(gold_a))
    return np.asarray(out)


def flow_per_playlist(run, sonic_scaled) -> np.ndarray:
    """Mean pairwise sonic cosine within each list; a single-item list scores 1."""
    out = []
    for rec in run.items:
        n = len(rec)
        if n < 2:
            out.append(1.0)
            continue
        V, _ = normalize_rows(sonic_scaled[rec])
        s = V.sum(axis=0)
        pair_sum = (s @ s - np.sum(V * V)) / 2.0
        out.append(pair_sum / (n * (n - 1) / 2))
    return np.asarray(out)


def diversity_per_playlist(run, track_artist) -> np.ndarray:
    return np.asarray([len(set(track_artist[rec].tolist())) / len(rec) if len(rec) else 0.0 for rec in run.items])


def pct_lt_per_playlist(run, long_tail) -> np.ndarray:
    long_tail = np.asarray(long_tail, dtype=np.int64)
    return np.asarray([np.isin(rec, long_tail).mean() if len(rec) else 0.0 for rec in run.items])


def lt_coverage(run, long_tail) -> float:
    long_tail = np.asarray(long_tail, dtype=np.int64)
    if len(long_tail) == 0:
        return 0.0
    seen = np.unique(np.concatenate(run.items)) if run.items else np.zeros(0, np.int64)
    return len(np.intersect1d(seen, long_tail)) / len(long_tail)


def artist_coverage(run, track_artist, n_artists: int) -> float:
    if not run.items:
        return 0.0
    seen = np.unique(track_artist[np.concatenate(run.items)])
    return len(seen) / n_artists


@dataclass
class EvalReport:
    metrics: dict[str, float]
    per_playlist: dict[str, list[float]]
    playlists: list[str]
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dict(self.metrics)
        d["per_playlist"] = self.per_playlist
        d["playlists"] = self.playlists
        d["config"] = self.config
        return d


def evaluate_all(
    run: RecommendationRun,
    holdouts: dict[int, np.ndarray],
    track_artist: np.ndarray,
    n_artists: int,
    sonic_scaled: np.ndarray,
    long_tail: np.ndarray,
    playlist_names=None,
    config: dict | None = None,
    k: int | None = None,
) -> EvalReport:
    k = k or max((len(r) for r in run.items), default=1)
    per = {
        "recall": recall_per_playlist(run, holdouts),
        "ndcg": ndcg_per_playlist(run, holdouts, k),
        "artist_recall": artist_recall_per_playlist(run, holdouts, track_artist),
        "flow": flow_per_playlist(run, sonic_scaled),
        "diversity": diversity_per_playlist(run, track_artist),
        "pct_lt": pct_lt_per_playlist(run, long_tail),
    }
    metrics = {k: float(v.mean()) if len(v) else 0.0 for k, v in per.items()}
    metrics["lt_coverage"] = float(lt_coverage(run, long_tail))
    metrics["artist_coverage"] = float(artist_coverage(run, track_artist, n_artists))
    names = [playlist_names[p] if playlist_names is not None else str(p) for p in run.playlists]
    return EvalReport(
        metrics=metrics,
        per_playlist={k: [float(x) for x in v] for k, v in per.items()},
        playlists=names,
        config=dict(config or {}),
    )


# --------------------------------------------------------------------------- significance


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # min(W+, W-)
    p_value: float
    n: int  # non-zero differences used
    exact: bool
    all_zero: bool = False


def _avg_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_v = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_signed_rank(a, b, exact_max_n: int = 12) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped and tied magnitudes get average ranks.
    For ``n <= exact_max_n`` the p-value enumerates all ``2**n`` sign
    assignments; above that the normal approximation with tie and
    continuity corrections is used.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("samples must be equal-length vectors")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return WilcoxonResult(statistic=0.0, p_value=1.0, n=0, exact=True, all_zero=True)
    if n < 6:
        raise ValidationError(f"need at least 6 non-zero differences, got {n}")
    ranks = _avg_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    total = float(ranks.sum())
    stat = min(w_plus, total - w_plus)
    mean = total / 2.0
    if n <= exact_max_n:
        # distribution of W+ over all sign patterns; ranks may be half-integers
        twice = np.rint(2 * ranks).astype(np.int64)
        dist = np.zeros(int(twice.sum()) + 1)
        dist[0] = 1.0
        for r in twice:
            shifted = np.zeros_like(dist)
            shifted[r:] = dist[: len(dist) - r]
            dist = dist + shifted
        dist /= dist.sum()
        support = np.arange(len(dist)) / 2.0
        obs = abs(w_plus - mean)
        p = float(dist[np.abs(support - mean) >= obs - 1e-9].sum())
        return WilcoxonResult(statistic=stat, p_value=min(p, 1.0), n=n, exact=True)
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    if var <= 0:
        return WilcoxonResult(statistic=stat, p_value=1.0, n=n, exact=False)
    z = (abs(w_plus - mean) - 0.5) / math.sqrt(var)
    p = float(2 * norm.sf(max(z, 0.0)))
    return WilcoxonResult(statistic=stat, p_value=min(p, 1.0), n=n, exact=False)


def wilcoxon_enumerate(a, b) -> float:
    """Brute-force two-sided p over every sign pattern; slow, for checking."""
    d = np.asarray(a, float) - np.asarray(b, float)
    d = d[d != 0]
    ranks = _avg_ranks(np.abs(d))
    mean = ranks.sum() / 2.0
    obs = abs(ranks[d > 0].sum() - mean)
    hits = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        w = float(np.dot(signs, ranks))
        hits += abs(w - mean) >= obs - 1e-9
    return hits / 2 ** len(d)


# --------------------------------------------------------------------------- model selection


def model_selection_score(reports: list[dict], keys=SELECTION_METRICS) -> list[float]:
    """Min-max scale each metric across runs, then average; flat metrics score 0.5."""
    if not reports:
        return []
    table = np.array([[float(r[k]) for k in keys] for r in reports])
    lo, hi = table.min(axis=0), table.max(axis=0)
    span = hi - lo
    scaled = np.where(span > 0, (table - lo) / np.where(span > 0, span, 1.0), 0.5)
    return [float(x) for x in scaled.mean(axis=1)]
