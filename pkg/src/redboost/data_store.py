"""Bipartite playlist/track graph: ingestion, validation, splits and synthetic data."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ParseError, ValidationError

logger = logging.getLogger(__name__)

N_SONIC = 9
N_GENRE = 20
SONIC_LEVELS = 10
NAME_DIM = 512
IMAGE_DIM = 1024

TRAIN, VALID, TEST = 0, 1, 2
SPLIT_NAMES = ("train", "valid", "test")

INTERACTION_HEADER = ["playlist_id", "track_id", "artist_id", "position"]


@dataclass(frozen=True)
class InteractionGraph:
    """Immutable playlist-track bipartite graph over dense integer ids.

    ``playlist_tracks[p]`` lists track ids in position order and
    ``playlist_positions[p]`` holds the matching (strictly increasing)
    positions. The inverted index ``track_playlists`` is derived.
    """

    playlist_tracks: tuple[np.ndarray, ...]
    playlist_positions: tuple[np.ndarray, ...]
    track_artist: np.ndarray
    playlist_names: tuple[str, ...]
    track_names: tuple[str, ...]
    artist_names: tuple[str, ...]
    track_playlists: tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self):
        n_t = len(self.track_names)
        if len(self.track_artist) != n_t:
            raise ValidationError("track_artist length does not match track count")
        if len(self.playlist_tracks) != len(self.playlist_names):
            raise ValidationError("playlist count mismatch")
        inv: list[list[int]] = [[] for _ in range(n_t)]
        for p, (tracks, pos) in enumerate(zip(self.playlist_tracks, self.playlist_positions)):
            if len(tracks) != len(pos):
                raise ValidationError(f"playlist {self.playlist_names[p]}: tracks/positions mismatch")
            if len(pos) > 1 and np.any(np.diff(pos) <= 0):
                raise ValidationError(f"playlist {self.playlist_names[p]}: positions not strictly increasing")
            if len(np.unique(tracks)) != len(tracks):
                raise ValidationError(f"playlist {self.playlist_names[p]}: duplicate track")
            for t in tracks:
                inv[int(t)].append(p)
        object.__setattr__(
            self, "track_playlists", tuple(np.asarray(x, dtype=np.int64) for x in inv)
        )

    @property
    def n_tracks(self) -> int:
        return len(self.track_names)

    @property
    def n_playlists(self) -> int:
        return len(self.playlist_names)

    @property
    def n_artists(self) -> int:
        return len(self.artist_names)

    @property
    def n_edges(self) -> int:
        return int(sum(len(t) for t in self.playlist_tracks))

    def subgraph(self, playlists: Sequence[int]) -> "InteractionGraph":
        """Keep only the given playlists; the track and artist sets are unchanged."""
        playlists = [int(p) for p in playlists]
        return InteractionGraph(
            playlist_tracks=tuple(self.playlist_tracks[p] for p in playlists),
            playlist_positions=tuple(self.playlist_positions[p] for p in playlists),
            track_artist=self.track_artist,
            playlist_names=tuple(self.playlist_names[p] for p in playlists),
            track_names=self.track_names,
            artist_names=self.artist_names,
        )

    def edges(self) -> np.ndarray:
        """All (playlist, track) pairs as an ``(E, 2)`` array, playlist-major."""
        rows = [
            np.column_stack([np.full(len(t), p, dtype=np.int64), t])
            for p, t in enumerate(self.playlist_tracks)
            if len(t)
        ]
        if not rows:
            return np.zeros((0, 2), dtype=np.int64)
        return np.vstack(rows)

    def stats(self) -> dict:
        return {
            "playlists": self.n_playlists,
            "tracks": self.n_tracks,
            "artists": self.n_artists,
            "edges": self.n_edges,
        }


def load_interactions(path, format: str = "csv") -> InteractionGraph:
    """Read a ``playlist_id,track_id,artist_id,position`` CSV into a graph.

    Dense ids follow the sorted order of the original string ids so that
    writing and re-reading a graph reproduces the same numbering.
    """
    if format != "csv":
        raise ConfigError(f"unsupported interactions format: {format}")
    path = Path(path)
    rows: list[tuple[str, str, str, int]] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != INTERACTION_HEADER:
            raise ParseError(f"{path}:1: expected header {','.join(INTERACTION_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            pid, tid, aid, pos = (x.strip() for x in row)
            if not pid or not tid or not aid:
                raise ParseError(f"{path}:{lineno}: empty identifier")
            try:
                position = int(pos)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: position {pos!r} is not an integer") from None
            rows.append((pid, tid, aid, position))
    return graph_from_rows(rows)


def graph_from_rows(rows: Sequence[tuple[str, str, str, int]]) -> InteractionGraph:
    track_artist: dict[str, str] = {}
    seen: set[tuple[str, str]] = set()
    by_playlist: dict[str, list[tuple[int, str]]] = {}
    for pid, tid, aid, position in rows:
        if (pid, tid) in seen:
            raise ValidationError(f"duplicate edge ({pid}, {tid})")
        seen.add((pid, tid))
        prev = track_artist.setdefault(tid, aid)
        if prev != aid:
            raise ValidationError(f"track {tid} has conflicting artists {prev!r} and {aid!r}")
        by_playlist.setdefault(pid, []).append((position, tid))

    playlist_names = tuple(sorted(by_playlist))
    track_names = tuple(sorted(track_artist))
    artist_names = tuple(sorted(set(track_artist.values())))
    t_index = {t: i for i, t in enumerate(track_names)}
    a_index = {a: i for i, a in enumerate(artist_names)}

    tracks, positions = [], []
    for pid in playlist_names:
        entries = sorted(by_playlist[pid])
        pos = [e[0] for e in entries]
        if len(set(pos)) != len(pos):
            raise ValidationError(f"playlist {pid}: repeated position")
        positions.append(np.asarray(pos, dtype=np.int64))
        tracks.append(np.asarray([t_index[e[1]] for e in entries], dtype=np.int64))
    return InteractionGraph(
        playlist_tracks=tuple(tracks),
        playlist_positions=tuple(positions),
        track_artist=np.asarray([a_index[track_artist[t]] for t in track_names], dtype=np.int64),
        playlist_names=playlist_names,
        track_names=track_names,
        artist_names=artist_names,
    )


def write_interactions(g: InteractionGraph, path) -> None:
    from .io_utils import atomic_writer

    with atomic_writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INTERACTION_HEADER)
        for p, (tracks, pos) in enumerate(zip(g.playlist_tracks, g.playlist_positions)):
            for t, k in zip(tracks, pos):
                w.writerow([
                    g.playlist_names[p],
                    g.track_names[t],
                    g.artist_names[g.track_artist[t]],
                    int(k),
                ])


# --------------------------------------------------------------------------- splits


@dataclass
class SplitAssignment:
    """Playlist-level train/valid/test assignment plus peek/holdout lists."""

    split: np.ndarray  # per playlist: TRAIN, VALID or TEST
    peek_k: int | None = None
    peek: dict[int, np.ndarray] = field(default_factory=dict)
    holdout: dict[int, np.ndarray] = field(default_factory=dict)
    excluded: list[int] = field(default_factory=list)

    def playlists(self, which: int) -> np.ndarray:
        return np.flatnonzero(self.split == which)

    @property
    def train(self) -> np.ndarray:
        return self.playlists(TRAIN)

    def evaluated(self, which: int = TEST) -> list[int]:
        """Playlists of a split that have a peek/holdout partition, ascending."""
        return [int(p) for p in self.playlists(which) if int(p) in self.holdout]


def split_playlists(g: InteractionGraph, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> SplitAssignment:
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ConfigError(f"split fractions must be three positive numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {sum(fractions)}")
    n = g.n_playlists
    n_valid = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    n_train = n - n_valid - n_test
    if min(n_train, n_valid, n_test) <= 0:
        raise ConfigError(
            f"split of {n} playlists into {fractions} leaves an empty split "
            f"({n_train}/{n_valid}/{n_test})"
        )
    order = np.random.default_rng(seed).permutation(n)
    split = np.empty(n, dtype=np.int8)
    split[order[:n_train]] = TRAIN
    split[order[n_train : n_train + n_valid]] = VALID
    split[order[n_train + n_valid :]] = TEST
    return SplitAssignment(split=split)


def split_peek_holdout(g: InteractionGraph, split: SplitAssignment, peek_k: int) -> SplitAssignment:
    """Partition each valid/test playlist into a positional peek prefix and holdout.

    The peek is clamped to ``|p| - 1`` so the holdout is never empty;
    single-track playlists are excluded and counted.
    """
    if peek_k < 1:
        raise ConfigError("peek_k must be >= 1")
    peek, holdout, excluded = {}, {}, []
    for p in np.flatnonzero(split.split != TRAIN):
        tracks = g.playlist_tracks[p]
        if len(tracks) < 2:
            excluded.append(int(p))
            continue
        k = min(peek_k, len(tracks) - 1)
        peek[int(p)] = tracks[:k].copy()
        holdout[int(p)] = tracks[k:].copy()
    if excluded:
        logger.warning("excluded %d evaluation playlists with fewer than 2 tracks", len(excluded))
    return SplitAssignment(
        split=split.split.copy(), peek_k=peek_k, peek=peek, holdout=holdout, excluded=excluded
    )


def write_splits(g: InteractionGraph, split: SplitAssignment, path) -> None:
    from .io_utils import atomic_writer

    with atomic_writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["playlist_id", "split"])
        for p, s in enumerate(split.split):
            w.writerow([g.playlist_names[p], SPLIT_NAMES[s]])


def load_splits(g: InteractionGraph, path) -> SplitAssignment:
    index = {name: i for i, name in enumerate(g.playlist_names)}
    split = np.full(g.n_playlists, -1, dtype=np.int8)
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["playlist_id", "split"]:
            raise ParseError(f"{path}:1: expected header playlist_id,split")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 or row[1].strip() not in SPLIT_NAMES:
                raise ParseError(f"{path}:{lineno}: malformed split row")
            if row[0].strip() not in index:
                raise ValidationError(f"{path}:{lineno}: unknown playlist {row[0]!r}")
            split[index[row[0].strip()]] = SPLIT_NAMES.index(row[1].strip())
    if np.any(split < 0):
        raise ValidationError(f"{path}: {int(np.sum(split < 0))} playlists have no split")
    return SplitAssignment(split=split)


# --------------------------------------------------------------------------- features


@dataclass(frozen=True)
class TrackFeatureTable:
    sonic: np.ndarray  # (|T|, 9) ints in 0..9
    genre: np.ndarray  # (|T|, 20) in {0, 1}
    name_emb: np.ndarray | None = None
    image_emb: np.ndarray | None = None

    def __post_init__(self):
        sonic = np.asarray(self.sonic)
        genre = np.asarray(self.genre)
        if sonic.ndim != 2 or sonic.shape[1] != N_SONIC:
            raise ValidationError(f"sonic block must be (|T|, {N_SONIC}), got {sonic.shape}")
        if genre.shape != (sonic.shape[0], N_GENRE):
            raise ValidationError(f"genre block must be (|T|, {N_GENRE}), got {genre.shape}")
        if sonic.size and (sonic.min() < 0 or sonic.max() > SONIC_LEVELS - 1):
            raise ValidationError("sonic entries must lie in 0..9")
        if not np.all((genre == 0) | (genre == 1)):
            raise ValidationError("genre entries must be 0 or 1")
        for name in ("name_emb", "image_emb"):
            block = getattr(self, name)
            if block is not None and np.asarray(block).shape[0] != sonic.shape[0]:
                raise ValidationError(f"{name} has {np.asarray(block).shape[0]} rows, expected {sonic.shape[0]}")

    @property
    def n_tracks(self) -> int:
        return self.sonic.shape[0]

    def sonic_scaled(self) -> np.ndarray:
        return np.asarray(self.sonic, dtype=np.float64) / (SONIC_LEVELS - 1)


FEATURE_HEADER = (
    ["track_id"] + [f"sonic_{i}" for i in range(N_SONIC)] + [f"genre_{i}" for i in range(N_GENRE)]
)


def load_features(g: InteractionGraph, path, name_emb=None, image_emb=None) -> TrackFeatureTable:
    index = {name: i for i, name in enumerate(g.track_names)}
    sonic = np.full((g.n_tracks, N_SONIC), -1, dtype=np.int64)
    genre = np.zeros((g.n_tracks, N_GENRE), dtype=np.int64)
    seen = np.zeros(g.n_tracks, dtype=bool)
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != FEATURE_HEADER:
            raise ParseError(f"{path}:1: expected header track_id,sonic_0..sonic_8,genre_0..genre_19")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(FEATURE_HEADER):
                raise ParseError(f"{path}:{lineno}: expected {len(FEATURE_HEADER)} fields")
            tid = row[0].strip()
            if tid not in index:
                continue  # feature rows for tracks absent from the graph are ignored
            try:
                values = [int(x) for x in row[1:]]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer feature value") from None
            i = index[tid]
            sonic[i] = values[:N_SONIC]
            genre[i] = values[N_SONIC:]
            seen[i] = True
    if not seen.all():
        missing = [g.track_names[i] for i in np.flatnonzero(~seen)[:5]]
        raise ValidationError(f"{path}: missing features for {int((~seen).sum())} tracks, e.g. {missing}")
    return TrackFeatureTable(
        sonic=sonic,
        genre=genre,
        name_emb=load_dense(g, name_emb) if name_emb else None,
        image_emb=load_dense(g, image_emb) if image_emb else None,
    )


def load_dense(g: InteractionGraph, path) -> np.ndarray:
    """Read a ``track_id,v0..v{d-1}`` file into a ``(|T|, d)`` float64 block."""
    index = {name: i for i, name in enumerate(g.track_names)}
    out = None
    seen = np.zeros(g.n_tracks, dtype=bool)
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0].strip() != "track_id" or len(header) < 2:
            raise ParseError(f"{path}:1: expected header track_id,v0,...")
        d = len(header) - 1
        out = np.zeros((g.n_tracks, d), dtype=np.float64)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise ParseError(f"{path}:{lineno}: expected {d + 1} fields")
            tid = row[0].strip()
            if tid not in index:
                continue
            try:
                out[index[tid]] = [float(x) for x in row[1:]]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric value") from None
            seen[index[tid]] = True
    if not seen.all():
        raise ValidationError(f"{path}: missing rows for {int((~seen).sum())} tracks")
    return out


def write_features(g: InteractionGraph, features: TrackFeatureTable, path) -> None:
    from .io_utils import atomic_writer

    with atomic_writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FEATURE_HEADER)
        for i, name in enumerate(g.track_names):
            w.writerow([name, *map(int, features.sonic[i]), *map(int, features.genre[i])])


def write_dense(track_names: Sequence[str], block: np.ndarray, path) -> None:
    from .io_utils import atomic_writer

    with atomic_writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["track_id"] + [f"v{j}" for j in range(block.shape[1])])
        for name, row in zip(track_names, block):
            w.writerow([name, *(repr(float(x)) for x in row)])


# --------------------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SynthSpec:
    n_playlists: int = 50
    n_tracks: int = 300
    n_artists: int = 60
    skew: float = 1.0
    n_clusters: int = 6
    min_len: int = 10
    max_len: int = 30
    cluster_affinity: float = 0.8  # probability a playlist slot is drawn from its own cluster
    sonic_noise: float = 0.8  # std of per-track sonic bin jitter around the cluster centre


def track_weights(n_tracks: int, skew: float, rng: np.random.Generator) -> np.ndarray:
    """Power-law selection weights ``rank**-skew`` over a random popularity ranking."""
    ranks = rng.permutation(n_tracks) + 1
    w = ranks.astype(np.float64) ** (-float(skew))
    return w / w.sum()


def generate_synthetic(spec: SynthSpec, seed: int = 0) -> tuple[InteractionGraph, TrackFeatureTable]:
    """Cluster-structured playlists with power-law track popularity.

    Each track belongs to one of ``n_clusters`` sonic/genre clusters;
    popularity rank is drawn independently of cluster so every cluster
    has both head and tail tracks. Every track is placed in at least one
    playlist so that the CSV form of the graph covers the full catalog.
    """
    if spec.n_tracks < spec.n_clusters or spec.n_clusters < 1:
        raise ConfigError("need at least one track per cluster")
    if spec.n_artists < spec.n_clusters or spec.n_artists > spec.n_tracks:
        raise ConfigError("need n_clusters <= n_artists <= n_tracks")
    if spec.n_playlists < 1 or spec.min_len < 1 or spec.max_len < spec.min_len:
        raise ConfigError("invalid playlist count or length range")
    if spec.skew < 0:
        raise ConfigError("skew must be non-negative")
    rng = np.random.default_rng(seed)
    n_t, n_c = spec.n_tracks, spec.n_clusters

    cluster = np.arange(n_t) % n_c
    centres = rng.integers(1, SONIC_LEVELS - 1, size=(n_c, N_SONIC))
    sonic = np.clip(
        np.rint(centres[cluster] + rng.normal(0.0, spec.sonic_noise, size=(n_t, N_SONIC))),
        0,
        SONIC_LEVELS - 1,
    ).astype(np.int64)
    genre = np.zeros((n_t, N_GENRE), dtype=np.int64)
    genre[np.arange(n_t), cluster % N_GENRE] = 1
    flip = rng.random(n_t) < 0.1
    genre[flip, rng.integers(0, N_GENRE, size=int(flip.sum()))] = 1

    # artists are cluster-specific; every artist gets at least one track
    artist_cluster = np.arange(spec.n_artists) % n_c
    track_artist = np.empty(n_t, dtype=np.int64)
    for c in range(n_c):
        members = np.flatnonzero(cluster == c)
        artists = np.flatnonzero(artist_cluster == c)
        assign = np.concatenate([artists, rng.choice(artists, size=len(members) - len(artists))])
        track_artist[members] = rng.permutation(assign)

    weights = track_weights(n_t, spec.skew, rng)
    in_cluster = [np.flatnonzero(cluster == c) for c in range(n_c)]
    playlists: list[list[int]] = []
    for _ in range(spec.n_playlists):
        c = int(rng.integers(n_c))
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        chosen: list[int] = []
        taken = np.zeros(n_t, dtype=bool)
        while len(chosen) < min(length, n_t):
            pool = in_cluster[c] if rng.random() < spec.cluster_affinity else np.arange(n_t)
            pool = pool[~taken[pool]]
            if len(pool) == 0:
                pool = np.flatnonzero(~taken)
            w = weights[pool]
            t = int(pool[rng.choice(len(pool), p=w / w.sum())])
            taken[t] = True
            chosen.append(t)
        playlists.append(chosen)
    present = np.zeros(n_t, dtype=bool)
    for pl in playlists:
        present[pl] = True
    for t in np.flatnonzero(~present):
        candidates = [i for i, pl in enumerate(playlists) if int(t) not in pl]
        playlists[int(rng.choice(candidates))].append(int(t))

    width_p = len(str(spec.n_playlists - 1))
    width_t = len(str(n_t - 1))
    width_a = len(str(spec.n_artists - 1))
    g = InteractionGraph(
        playlist_tracks=tuple(np.asarray(pl, dtype=np.int64) for pl in playlists),
        playlist_positions=tuple(np.arange(len(pl), dtype=np.int64) for pl in playlists),
        track_artist=track_artist,
        playlist_names=tuple(f"p{i:0{width_p}d}" for i in range(spec.n_playlists)),
        track_names=tuple(f"t{i:0{width_t}d}" for i in range(n_t)),
        artist_names=tuple(f"a{i:0{width_a}d}" for i in range(spec.n_artists)),
    )
    return g, TrackFeatureTable(sonic=sonic, genre=genre)


def sonic_cluster_cosines(features: TrackFeatureTable, n_clusters: int) -> tuple[float, float]:
    """Mean within-cluster and cross-cluster pairwise sonic cosine for synthetic data."""
    x = features.sonic_scaled()
    norms = np.linalg.norm(x, axis=1)
    norms[norms == 0] = math.inf
    xn = x / norms[:, None]
    s = xn @ xn.T
    cluster = np.arange(features.n_tracks) % n_clusters
    same = cluster[:, None] == cluster[None, :]
    off = ~np.eye(features.n_tracks, dtype=bool)
    return float(s[same & off].mean()), float(s[~same].mean())
