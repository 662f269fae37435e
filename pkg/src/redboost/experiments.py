"""Popularity-bias analyses: counterfactual duplicates, artist neighbourhoods, gamma sweeps."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from . import popularity
from .data_store import TRAIN, InteractionGraph, SplitAssignment, TrackFeatureTable
from .errors import ConfigError, ValidationError
from .objective import normalize_rows
from .popularity import N_BINS, PopularityIndex
from .recommender import RecommendationRun, artist_embedding

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------- counterfactual duplicates


@dataclass
class Counterfactual:
    graph: InteractionGraph
    features: TrackFeatureTable
    split: SplitAssignment
    originals: np.ndarray  # duplicated track ids
    duplicates: np.ndarray  # their copies, same order


def counterfactual_duplicate(
    g: InteractionGraph,
    features: TrackFeatureTable,
    index: PopularityIndex,
    split: SplitAssignment,
    n_top: int = 100,
    seed: int = 0,
) -> Counterfactual:
    """Copy the ``n_top`` most popular tracks as degree-1 twins.

    Each copy gets a fresh id (appended after the existing tracks), the
    same feature rows and artist, and a single edge to a uniformly chosen
    train playlist, placed after that playlist's last track.
    """
    if n_top < 1:
        raise ConfigError("n_top must be >= 1")
    if n_top > g.n_tracks:
        raise ConfigError("n_top exceeds the number of tracks")
    train = split.playlists(TRAIN)
    if len(train) == 0:
        raise ValidationError("no train playlists to attach duplicates to")
    originals = np.lexsort((np.arange(g.n_tracks), -index.counts))[:n_top]
    duplicates = np.arange(g.n_tracks, g.n_tracks + n_top)
    rng = np.random.default_rng(seed)
    hosts = rng.choice(train, size=n_top)

    tracks = [t.copy() for t in g.playlist_tracks]
    positions = [p.copy() for p in g.playlist_positions]
    for orig, dup, host in zip(originals, duplicates, hosts):
        last = positions[host][-1] if len(positions[host]) else -1
        tracks[host] = np.append(tracks[host], dup)
        positions[host] = np.append(positions[host], last + 1)
    names = list(g.track_names) + [f"cf::{g.track_names[t]}" for t in originals]
    aug = InteractionGraph(
        playlist_tracks=tuple(tracks),
        playlist_positions=tuple(positions),
        track_artist=np.concatenate([g.track_artist, g.track_artist[originals]]),
        playlist_names=g.playlist_names,
        track_names=tuple(names),
        artist_names=g.artist_names,
    )

    def extend(block):
        return None if block is None else np.vstack([block, block[originals]])

    feats = TrackFeatureTable(
        sonic=extend(np.asarray(features.sonic)),
        genre=extend(np.asarray(features.genre)),
        name_emb=extend(features.name_emb),
        image_emb=extend(features.image_emb),
    )
    new_split = dataclasses.replace(split)
    return Counterfactual(aug, feats, new_split, originals, duplicates)


# --------------------------------------------------------------------------- PCA


@dataclass
class PCAResult:
    coords: np.ndarray  # (n, 2)
    components: np.ndarray  # (2, d) orthonormal rows
    eigenvalues: np.ndarray  # top-2 covariance eigenvalues
    mean: np.ndarray
    rank_deficient: bool = False

    @property
    def explained_variance(self) -> float:
        return float(self.eigenvalues.sum())


def pca_2d(points: np.ndarray) -> PCAResult:
    """Project centred data onto the top two covariance eigenvectors.

    Each component's largest-magnitude coordinate is made positive. Data
    of rank < 2 gets a zeroed second component and ``rank_deficient``.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3 or X.shape[1] < 2:
        raise ValidationError(f"PCA needs at least 3 points in >= 2 dims, got {X.shape}")
    mean = X.mean(axis=0)
    C = X - mean
    cov = C.T @ C / (X.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:2]
    vals = np.clip(vals[order], 0.0, None)
    comps = vecs[:, order].T.copy()
    for r in range(2):
        j = int(np.argmax(np.abs(comps[r])))
        if comps[r, j] < 0:
            comps[r] = -comps[r]
    tol = max(vals[0], 1.0) * 1e-12 * X.shape[1]
    deficient = bool(vals[1] <= tol)
    if deficient:
        comps[1] = 0.0
        vals[1] = 0.0
    return PCAResult(coords=C @ comps.T, components=comps, eigenvalues=vals, mean=mean, rank_deficient=deficient)


def centroid_distance(coords: np.ndarray, labels) -> float:
    """Euclidean distance between the centroids of label-0 and label-1 points."""
    labels = np.asarray(labels)
    a, b = coords[labels == 0], coords[labels == 1]
    if len(a) == 0 or len(b) == 0:
        raise ValidationError("both groups need at least one point")
    return float(np.linalg.norm(a.mean(axis=0) - b.mean(axis=0)))


@dataclass
class CentroidReport:
    method: str
    distance: float
    orientation: int  # sign of the first PCA coordinate of (duplicate centroid - original centroid)
    og_centroid: tuple[float, float]
    cf_centroid: tuple[float, float]


def centroid_report(Z: np.ndarray, originals, duplicates, method: str, normalize: bool = True) -> tuple[CentroidReport, np.ndarray, np.ndarray]:
    """PCA of one embedding set (unit rows by default) and the original/duplicate centroid gap."""
    E = normalize_rows(Z)[0] if normalize else np.asarray(Z, dtype=np.float64)
    pca = pca_2d(E)
    og, cf = pca.coords[originals], pca.coords[duplicates]
    labels = np.concatenate([np.zeros(len(og)), np.ones(len(cf))])
    dist = centroid_distance(np.vstack([og, cf]), labels)
    delta = cf.mean(axis=0) - og.mean(axis=0)
    report = CentroidReport(
        method=method,
        distance=dist,
        orientation=int(np.sign(delta[0])),
        og_centroid=tuple(map(float, og.mean(axis=0))),
        cf_centroid=tuple(map(float, cf.mean(axis=0))),
    )
    return report, og, cf


# --------------------------------------------------------------------------- artist neighbourhoods


def artist_neighbor_popularity(
    artist_emb: np.ndarray, artist_index: PopularityIndex, n: int = 100, query_bin: int | None = None
) -> float:
    """Mean popularity bin of the ``n`` cosine-nearest artists of every top-bin artist.

    ``query_bin`` defaults to the highest occupied bin. Ties among
    neighbours are broken by ascending artist id.
    """
    A = artist_emb.shape[0]
    if A < 2:
        raise ValidationError("need at least two artists")
    bins = artist_index.bins
    query_bin = int(bins.max()) if query_bin is None else query_bin
    queries = np.flatnonzero(bins == query_bin)
    if len(queries) == 0:
        raise ValidationError(f"no artist in bin {query_bin}")
    n = min(n, A - 1)
    En, _ = normalize_rows(artist_emb)
    means = []
    for q in queries:
        s = En @ En[q]
        others = np.delete(np.arange(A), q)
        order = np.lexsort((others, -s[others]))[:n]
        means.append(bins[others[order]].mean())
    return float(np.mean(means))


def artist_analysis(Z, g: InteractionGraph, track_counts: np.ndarray, n: int = 100) -> float:
    art_index = popularity.artist_popularity(track_counts, g.track_artist, g.n_artists)
    return artist_neighbor_popularity(artist_embedding(Z, g.track_artist, g.n_artists), art_index, n)


# --------------------------------------------------------------------------- visibility


def visibility_by_bin(run: RecommendationRun, index: PopularityIndex) -> np.ndarray:
    """Share of all recommended slots that fall in each popularity bin."""
    if not run.items or sum(len(r) for r in run.items) == 0:
        raise ValidationError("run has no recommendations")
    items = np.concatenate(run.items)
    counts = np.bincount(index.bins[items], minlength=N_BINS).astype(np.float64)
    return counts / counts.sum()
