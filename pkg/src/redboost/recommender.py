"""Playlist embeddings, cosine top-k retrieval and the Features / MostPop baselines."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_store import InteractionGraph, TrackFeatureTable
from .encoder import build_input_features
from .errors import ConfigError, ParseError, ValidationError
from .io_utils import atomic_writer
from .objective import normalize_rows
from .popularity import PopularityIndex


@dataclass
class RecommendationRun:
    """Ranked recommendations per evaluated playlist (dense ids)."""

    playlists: list[int]
    items: list[np.ndarray]
    scores: list[np.ndarray]
    method: str = "model"
    config: dict = field(default_factory=dict)

    def as_dict(self) -> dict[int, np.ndarray]:
        return dict(zip(self.playlists, self.items))


def playlist_embedding(Z: np.ndarray, peek) -> np.ndarray:
    peek = np.asarray(peek, dtype=np.int64)
    if len(peek) == 0:
        raise ValidationError("empty peek set")
    return Z[peek].mean(axis=0)


def _top_k(scores: np.ndarray, k: int, exclude) -> tuple[np.ndarray, np.ndarray]:
    ids = np.arange(len(scores))
    keep = np.ones(len(scores), dtype=bool)
    keep[np.asarray(list(exclude), dtype=np.int64)] = False
    ids, s = ids[keep], scores[keep]
    if k < len(s):
        # cheap pre-selection, then an exact (score desc, id asc) sort on the survivors
        cut = np.partition(-s, k - 1)[k - 1]
        sel = -s <= cut
        ids, s = ids[sel], s[sel]
    order = np.lexsort((ids, -s))[:k]
    return ids[order], s[order]


def recommend_topk(Z: np.ndarray, query: np.ndarray, k: int = 100, exclude=()) -> tuple[np.ndarray, np.ndarray]:
    """Top-``k`` catalogue tracks by cosine to ``query``; ties by ascending track id."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    Zn, _ = normalize_rows(np.asarray(Z, dtype=np.float64))
    qn = np.linalg.norm(query)
    q = query / qn if qn > 0 else query
    return _top_k(Zn @ q, k, exclude)


def recommend_playlists(Z: np.ndarray, peeks: dict[int, np.ndarray], k: int = 100, method: str = "model") -> RecommendationRun:
    """Mean-of-peek playlist embedding, cosine retrieval, peek tracks excluded."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    Zn, _ = normalize_rows(np.asarray(Z, dtype=np.float64))
    pids = sorted(peeks)
    items, scores = [], []
    for p in pids:
        q = playlist_embedding(Z, peeks[p])
        qn = np.linalg.norm(q)
        q = q / qn if qn > 0 else q
        it, sc = _top_k(Zn @ q, k, peeks[p])
        items.append(it)
        scores.append(sc)
    return RecommendationRun(playlists=pids, items=items, scores=scores, method=method)


def features_baseline(features: TrackFeatureTable, use_name: bool = False, use_image: bool = False) -> np.ndarray:
    """Raw model-input features used directly as track embeddings."""
    return build_input_features(features, use_name, use_image)


def mostpop_baseline(index: PopularityIndex, peeks: dict[int, np.ndarray], k: int = 100) -> RecommendationRun:
    """Same popularity-ordered list for everyone, peek tracks skipped and backfilled."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    order = np.lexsort((np.arange(index.n_items), -index.counts))
    pids = sorted(peeks)
    items, scores = [], []
    for p in pids:
        excluded = set(np.asarray(peeks[p]).tolist())
        picked = []
        for t in order:
            if int(t) not in excluded:
                picked.append(int(t))
                if len(picked) == k:
                    break
        arr = np.asarray(picked, dtype=np.int64)
        items.append(arr)
        scores.append(index.counts[arr].astype(np.float64))
    return RecommendationRun(playlists=pids, items=items, scores=scores, method="mostpop")


def artist_embedding(Z: np.ndarray, track_artist: np.ndarray, n_artists: int | None = None) -> np.ndarray:
    """Mean embedding of each artist's tracks."""
    n_artists = int(track_artist.max()) + 1 if n_artists is None else n_artists
    counts = np.bincount(track_artist, minlength=n_artists)
    if np.any(counts == 0):
        raise ValidationError("every artist needs at least one track")
    sums = np.zeros((n_artists, Z.shape[1]))
    np.add.at(sums, track_artist, Z)
    return sums / counts[:, None]


# --------------------------------------------------------------------------- run files

RUN_HEADER = ["playlist_id", "rank", "track_id", "score"]


def write_run(run: RecommendationRun, g: InteractionGraph, path) -> None:
    with atomic_writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_HEADER)
        for p, items, scores in zip(run.playlists, run.items, run.scores):
            for r, (t, s) in enumerate(zip(items, scores), start=1):
                w.writerow([g.playlist_names[p], r, g.track_names[t], repr(float(s))])


def load_run(g: InteractionGraph, path, method: str = "loaded") -> RecommendationRun:
    p_index = {n: i for i, n in enumerate(g.playlist_names)}
    t_index = {n: i for i, n in enumerate(g.track_names)}
    rows: dict[int, list[tuple[int, int, float]]] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != RUN_HEADER:
            raise ParseError(f"{path}:1: expected header {','.join(RUN_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 fields")
            try:
                p, t = p_index[row[0]], t_index[row[2]]
            except KeyError as exc:
                raise ValidationError(f"{path}:{lineno}: unknown id {exc}") from None
            try:
                rank, score = int(row[1]), float(row[3])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad rank or score") from None
            rows.setdefault(p, []).append((rank, t, score))
    pids = sorted(rows)
    items, scores = [], []
    for p in pids:
        entries = sorted(rows[p])
        items.append(np.asarray([e[1] for e in entries], dtype=np.int64))
        scores.append(np.asarray([e[2] for e in entries], dtype=np.float64))
    return RecommendationRun(playlists=pids, items=items, scores=scores, method=method)
