"""Random-walk neighbourhoods, co-occurrence positives, uniform negatives and fairness pools.

Every sampler takes the graph it should walk on; pass the train-only
subgraph during training so evaluation playlists never leak in.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_store import InteractionGraph
from .errors import ConfigError, ValidationError


def _rng(seed, *stream) -> np.random.Generator:
    return np.random.default_rng([int(seed), *(int(s) for s in stream)])


@dataclass(frozen=True)
class _CSR:
    t_ptr: np.ndarray
    t_idx: np.ndarray  # playlists of each track
    p_ptr: np.ndarray
    p_idx: np.ndarray  # tracks of each playlist


def _csr(g: InteractionGraph) -> _CSR:
    t_deg = np.array([len(x) for x in g.track_playlists], dtype=np.int64)
    p_deg = np.array([len(x) for x in g.playlist_tracks], dtype=np.int64)
    t_idx = np.concatenate(g.track_playlists) if g.n_tracks else np.zeros(0, np.int64)
    p_idx = np.concatenate(g.playlist_tracks) if g.n_playlists else np.zeros(0, np.int64)
    return _CSR(
        t_ptr=np.concatenate([[0], np.cumsum(t_deg)]),
        t_idx=t_idx.astype(np.int64),
        p_ptr=np.concatenate([[0], np.cumsum(p_deg)]),
        p_idx=p_idx.astype(np.int64),
    )


@dataclass(frozen=True)
class NeighborTable:
    """Padded per-track neighbour lists: ``index[t, j]`` with weight ``weight[t, j]``.

    Unused slots hold index 0 and weight 0, so weighted sums need no masking.
    """

    index: np.ndarray  # (|T|, m) int64
    weight: np.ndarray  # (|T|, m) float64, rows sum to 1 or are all zero

    @property
    def m(self) -> int:
        return self.index.shape[1]

    def neighbors(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        keep = self.weight[t] > 0
        return self.index[t][keep], self.weight[t][keep]

    def permuted(self, perm: np.ndarray) -> "NeighborTable":
        """Relabel tracks: new id ``perm[old]``."""
        inv = np.argsort(perm)
        return NeighborTable(index=perm[self.index[inv]], weight=self.weight[inv].copy())


def random_walk_neighbors(
    g: InteractionGraph,
    anchor: int,
    walks: int = 200,
    walk_len: int = 2,
    m: int = 20,
    seed: int = 0,
    csr: _CSR | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Top-``m`` tracks by visit count over ``walks`` track->playlist->track walks.

    ``walk_len`` counts hops, so it must be even. Visits to the anchor are
    not tallied. Returns ``(neighbors, weights)`` with weights summing to 1,
    or two empty arrays for an isolated anchor.
    """
    if walk_len < 2 or walk_len % 2:
        raise ConfigError("walk_len must be even and >= 2")
    if walks < 1 or m < 1:
        raise ConfigError("walks and m must be >= 1")
    csr = csr or _csr(g)
    empty = (np.zeros(0, np.int64), np.zeros(0, np.float64))
    if csr.t_ptr[anchor + 1] == csr.t_ptr[anchor]:
        return empty
    rng = _rng(seed, anchor)
    cur = np.full(walks, anchor, dtype=np.int64)
    visits = np.zeros(g.n_tracks, dtype=np.int64)
    for _ in range(walk_len // 2):
        deg = csr.t_ptr[cur + 1] - csr.t_ptr[cur]
        pl = csr.t_idx[csr.t_ptr[cur] + (rng.random(walks) * deg).astype(np.int64)]
        size = csr.p_ptr[pl + 1] - csr.p_ptr[pl]
        cur = csr.p_idx[csr.p_ptr[pl] + (rng.random(walks) * size).astype(np.int64)]
        np.add.at(visits, cur, 1)
    visits[anchor] = 0
    hit = np.flatnonzero(visits)
    if len(hit) == 0:
        return empty
    order = np.lexsort((hit, -visits[hit]))[:m]
    top = hit[order]
    w = visits[top].astype(np.float64)
    return top, w / w.sum()


def build_neighbor_table(
    g: InteractionGraph, walks: int = 200, walk_len: int = 2, m: int = 20, seed: int = 0
) -> NeighborTable:
    csr = _csr(g)
    index = np.zeros((g.n_tracks, m), dtype=np.int64)
    weight = np.zeros((g.n_tracks, m), dtype=np.float64)
    for t in range(g.n_tracks):
        nb, w = random_walk_neighbors(g, t, walks, walk_len, m, seed, csr=csr)
        index[t, : len(nb)] = nb
        weight[t, : len(nb)] = w
    return NeighborTable(index=index, weight=weight)


def two_step_kernel(g: InteractionGraph, anchor: int) -> np.ndarray:
    """Exact probability of each track after one track->playlist->track step."""
    probs = np.zeros(g.n_tracks)
    pls = g.track_playlists[anchor]
    for p in pls:
        tracks = g.playlist_tracks[p]
        probs[tracks] += 1.0 / (len(pls) * len(tracks))
    return probs


def sample_positive_pairs(g: InteractionGraph, batch: int, seed: int = 0) -> np.ndarray:
    """Draw ``batch`` ordered track pairs sharing a playlist, shape ``(batch, 2)``.

    Uniform over the multiset of (playlist, unordered pair) occurrences: a
    playlist is chosen with probability proportional to ``C(|p|, 2)``, then
    two distinct members uniformly, in random order.
    """
    sizes = np.array([len(t) for t in g.playlist_tracks], dtype=np.int64)
    n_pairs = sizes * (sizes - 1) // 2
    total = n_pairs.sum()
    if total == 0:
        raise ValidationError("no playlist with at least two tracks to draw positives from")
    rng = _rng(seed)
    pl = rng.choice(len(sizes), size=batch, p=n_pairs / total)
    s = sizes[pl]
    i = (rng.random(batch) * s).astype(np.int64)
    j = (rng.random(batch) * (s - 1)).astype(np.int64)
    j = j + (j >= i)
    out = np.empty((batch, 2), dtype=np.int64)
    for r, (p, a, b) in enumerate(zip(pl, i, j)):
        tracks = g.playlist_tracks[p]
        out[r] = tracks[a], tracks[b]
    return out


def cooccurring(g: InteractionGraph, anchor: int) -> np.ndarray:
    pls = g.track_playlists[anchor]
    if len(pls) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate([g.playlist_tracks[p] for p in pls]))


def negative_candidates(g: InteractionGraph, anchor: int) -> np.ndarray:
    mask = np.ones(g.n_tracks, dtype=bool)
    mask[cooccurring(g, anchor)] = False
    mask[anchor] = False
    return np.flatnonzero(mask)


def sample_negatives(g: InteractionGraph, anchor: int, n: int, seed: int = 0) -> np.ndarray:
    """``n`` tracks drawn with replacement, uniform over tracks never co-occurring with ``anchor``."""
    if g.n_tracks <= 1:
        raise ValidationError("need more than one track to sample negatives")
    cand = negative_candidates(g, anchor)
    if len(cand) == 0:
        raise ValidationError(f"track {anchor} co-occurs with every other track; no negatives")
    return cand[_rng(seed, anchor).integers(0, len(cand), size=n)]


def sample_fairness_batch(
    n_tracks: int, anchors, pool_size: int, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Candidate pool for the fairness loss: the anchors plus uniform fill-up.

    Returns ``(anchors, pool)``, both sorted ascending; ``pool`` has
    exactly ``pool_size`` distinct tracks.
    """
    anchors = np.unique(np.asarray(anchors, dtype=np.int64))
    if pool_size > n_tracks:
        raise ConfigError(f"pool_size {pool_size} exceeds catalog size {n_tracks}")
    if pool_size < len(anchors):
        raise ConfigError(f"pool_size {pool_size} is smaller than the {len(anchors)} anchors")
    rest = np.setdiff1d(np.arange(n_tracks), anchors)
    fill = _rng(seed).choice(rest, size=pool_size - len(anchors), replace=False)
    return anchors, np.sort(np.concatenate([anchors, fill]))
