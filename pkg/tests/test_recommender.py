import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from redboost import pipeline
from redboost import recommender as rc
from redboost.errors import ConfigError, ParseError, ValidationError
from redboost.popularity import PopularityIndex, assign_bins

from conftest import make_graph


def exhaustive_topk(Z, q, k, exclude=()):
    Zn = Z / np.maximum(np.linalg.norm(Z, axis=1, keepdims=True), 1e-300)
    qn = q / np.linalg.norm(q)
    scored = [(-float(Zn[t] @ qn), t) for t in range(len(Z)) if t not in set(exclude)]
    scored.sort()
    return [t for _, t in scored[:k]]


def test_playlist_embedding_is_mean():
    Z = np.array([[1.0, 0.0], [0.0, 3.0], [5.0, 5.0]])
    assert rc.playlist_embedding(Z, [0, 1]).tolist() == [0.5, 1.5]
    with pytest.raises(ValidationError):
        rc.playlist_embedding(Z, [])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40), st.integers(2, 30))
def test_topk_matches_exhaustive_sort(seed, k, n):
    rng = np.random.default_rng(seed)
    # coarse values force plenty of exact ties
    Z = rng.integers(-2, 3, size=(n, 3)).astype(float)
    Z[np.all(Z == 0, axis=1)] = 1.0
    q = rng.normal(size=3)
    exclude = rng.choice(n, size=min(2, n - 1), replace=False).tolist()
    ids, scores = rc.recommend_topk(Z, q, k, exclude)
    assert ids.tolist() == exhaustive_topk(Z, q, k, exclude)
    assert np.all(np.diff(scores) <= 0)


def test_ties_break_by_id():
    Z = np.ones((5, 2))
    ids, _ = rc.recommend_topk(Z, np.array([1.0, 1.0]), 3)
    assert ids.tolist() == [0, 1, 2]


def test_k_larger_than_catalogue():
    Z = np.eye(4)
    run = rc.recommend_playlists(Z, {0: np.array([1])}, k=100)
    assert sorted(run.items[0].tolist()) == [0, 2, 3]
    with pytest.raises(ConfigError):
        rc.recommend_playlists(Z, {0: np.array([1])}, k=0)


def test_mostpop_examples():
    counts = np.array([5, 9, 1, 9, 3])
    index = PopularityIndex(counts=counts, log_pop=np.log10(counts), bins=assign_bins(counts).bins)
    run = rc.mostpop_baseline(index, {0: np.array([1]), 1: np.array([], dtype=np.int64)}, k=3)
    assert run.items[0].tolist() == [3, 0, 4]  # 1 is in the peek, backfilled from below
    assert run.items[1].tolist() == [1, 3, 0]
    assert run.method == "mostpop"


def test_artist_embedding():
    Z = np.array([[1.0, 1.0], [3.0, 1.0], [0.0, 4.0]])
    A = rc.artist_embedding(Z, np.array([0, 0, 1]))
    assert A.tolist() == [[2.0, 1.0], [0.0, 4.0]]
    same = rc.artist_embedding(np.tile([[0.2, 0.7]], (3, 1)), np.array([0, 0, 0]))
    assert np.allclose(same, [[0.2, 0.7]], rtol=0, atol=1e-15)
    with pytest.raises(ValidationError):
        rc.artist_embedding(Z, np.array([0, 0, 2]), 3)


def test_features_baseline_flows_better_than_mostpop(synth):
    g, feats = synth
    ds = pipeline.prepare(g, feats, split_seed=0)
    _, f_rep = pipeline.features_run(ds, k=20)
    _, m_rep = pipeline.mostpop(ds, k=20)
    assert f_rep.metrics["flow"] > m_rep.metrics["flow"]


def test_run_file_round_trip(tmp_path):
    g = make_graph({"p1": ["a", "b", "c"], "p2": ["c", "d"]})
    run = rc.RecommendationRun(
        playlists=[0, 1], items=[np.array([3, 2]), np.array([0])], scores=[np.array([0.9, 0.1]), np.array([1 / 3])]
    )
    path = tmp_path / "run.csv"
    rc.write_run(run, g, path)
    back = rc.load_run(g, path)
    assert back.playlists == [0, 1]
    assert [x.tolist() for x in back.items] == [[3, 2], [0]]
    assert back.scores[1][0] == 1 / 3
    bad = tmp_path / "bad.csv"
    bad.write_text("playlist,rank\n")
    with pytest.raises(ParseError):
        rc.load_run(g, bad)
    unknown = tmp_path / "unk.csv"
    unknown.write_text("playlist_id,rank,track_id,score\np1,1,zzz,0.5\n")
    with pytest.raises(ValidationError):
        rc.load_run(g, unknown)
