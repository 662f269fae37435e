"""Log-binned track popularity and long-tail membership."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data_store import InteractionGraph, SplitAssignment
from .errors import ConfigError, ValidationError

N_BINS = 10


@dataclass(frozen=True)
class PopularityIndex:
    counts: np.ndarray  # train-interaction count per item
    log_pop: np.ndarray  # log10(count), -inf where count == 0
    bins: np.ndarray  # 0..9

    @property
    def n_items(self) -> int:
        return len(self.counts)

    def bin_track_counts(self) -> np.ndarray:
        return np.bincount(self.bins, minlength=N_BINS)

    def bin_interaction_shares(self) -> np.ndarray:
        mass = np.bincount(self.bins, weights=self.counts.astype(np.float64), minlength=N_BINS)
        return mass / mass.sum()


def count_appearances(g: InteractionGraph, split: SplitAssignment) -> np.ndarray:
    """Number of train playlists containing each track (0 if never in train)."""
    train = split.train
    if len(train) == 0:
        raise ValidationError("split has no train playlists")
    counts = np.zeros(g.n_tracks, dtype=np.int64)
    for p in train:
        counts[g.playlist_tracks[p]] += 1
    return counts


def _log10_exact(values: np.ndarray) -> np.ndarray:
    # libm log10 per distinct value; numpy's vectorised log10 can differ by an ulp
    uniq, inverse = np.unique(values, return_inverse=True)
    logs = np.array([math.log10(v) if v > 0 else -math.inf for v in uniq.tolist()])
    return logs[inverse].reshape(values.shape)


def assign_bins(counts) -> PopularityIndex:
    """Ten equal-width bins over ``[0, log10(max count)]``; top edge goes to bin 9.

    Tracks with count 0 or 1 land in bin 0. If the largest count is 1
    there is no spread to bin over and every track gets bin 0.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim != 1 or counts.size == 0:
        raise ValidationError("counts must be a non-empty vector")
    if np.any(counts < 0):
        raise ValidationError("counts must be non-negative")
    a_max = int(counts.max())
    if a_max < 1:
        raise ValidationError("all counts are zero; no train signal to bin")
    log_pop = _log10_exact(counts)
    bins = np.zeros(len(counts), dtype=np.int64)
    if a_max > 1:
        top = math.log10(a_max)
        pos = counts >= 1
        raw = np.floor(N_BINS * log_pop[pos] / top)
        bins[pos] = np.clip(raw, 0, N_BINS - 1).astype(np.int64)
    return PopularityIndex(counts=counts, log_pop=log_pop, bins=bins)


def popularity_index(g: InteractionGraph, split: SplitAssignment) -> PopularityIndex:
    return assign_bins(count_appearances(g, split))


def short_head(index: PopularityIndex, fraction: float = 0.2) -> np.ndarray:
    """The ``ceil(fraction * |T|)`` highest-count tracks, ties by ascending id."""
    if not 0 < fraction < 1:
        raise ConfigError("long-tail fraction must lie in (0, 1)")
    n = index.n_items
    size = int(math.ceil(fraction * n - 1e-9))
    order = np.lexsort((np.arange(n), -index.counts))
    return np.sort(order[:size])


def long_tail_set(index: PopularityIndex, fraction: float = 0.2) -> np.ndarray:
    """Complement of :func:`short_head`, as a sorted id array."""
    mask = np.ones(index.n_items, dtype=bool)
    mask[short_head(index, fraction)] = False
    return np.flatnonzero(mask)


def breakdown_report(index: PopularityIndex) -> dict[int, dict[str, float]]:
    tracks = index.bin_track_counts()
    shares = index.bin_interaction_shares()
    return {b: {"tracks": int(tracks[b]), "interaction_share": float(shares[b])} for b in range(N_BINS)}


def artist_popularity(track_counts: np.ndarray, track_artist: np.ndarray, n_artists: int) -> PopularityIndex:
    """Artist-level index: the same binning applied to summed track counts."""
    summed = np.bincount(track_artist, weights=track_counts, minlength=n_artists)
    return assign_bins(np.rint(summed).astype(np.int64))
