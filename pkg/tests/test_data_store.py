import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from redboost.data_store import (
    TEST,
    TRAIN,
    VALID,
    SplitAssignment,
    SynthSpec,
    TrackFeatureTable,
    generate_synthetic,
    graph_from_rows,
    load_features,
    load_interactions,
    load_splits,
    sonic_cluster_cosines,
    split_peek_holdout,
    split_playlists,
    write_features,
    write_interactions,
    write_splits,
)
from redboost.errors import ConfigError, ParseError, ValidationError

from conftest import make_graph, random_features


def _write(tmp_path, text, name="inter.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_minimal_graph(tmp_path):
    p = _write(tmp_path, "playlist_id,track_id,artist_id,position\np1,t1,a1,0\np1,t2,a1,1\n")
    g = load_interactions(p)
    assert (g.n_playlists, g.n_tracks, g.n_edges) == (1, 2, 2)
    assert g.stats() == {"playlists": 1, "tracks": 2, "artists": 1, "edges": 2}
    assert [t.tolist() for t in g.track_playlists] == [[0], [0]]


def test_duplicate_edge_rejected(tmp_path):
    p = _write(tmp_path, "playlist_id,track_id,artist_id,position\np1,t1,a1,3\np1,t1,a1,5\n")
    with pytest.raises(ValidationError, match="duplicate edge"):
        load_interactions(p)


def test_conflicting_artist_rejected():
    with pytest.raises(ValidationError, match="conflicting artists"):
        graph_from_rows([("p1", "t1", "a1", 0), ("p2", "t1", "a2", 0)])


def test_parse_errors_carry_line_numbers(tmp_path):
    p = _write(tmp_path, "playlist_id,track_id,artist_id,position\np1,t1,a1,0\np1,t2,a1\n")
    with pytest.raises(ParseError, match=r":3:"):
        load_interactions(p)
    p = _write(tmp_path, "playlist_id,track_id,artist_id,position\np1,t1,a1,first\n")
    with pytest.raises(ParseError, match=r":2:"):
        load_interactions(p)
    p = _write(tmp_path, "pid,tid,aid,pos\n")
    with pytest.raises(ParseError, match=r":1:"):
        load_interactions(p)


def test_positions_order_tracks_and_dense_ids_follow_sorted_names():
    g = graph_from_rows([("p", "z", "a", 7), ("p", "b", "a", 2), ("p", "m", "a", 4)])
    assert g.track_names == ("b", "m", "z")
    assert g.playlist_tracks[0].tolist() == [0, 1, 2]
    assert g.playlist_positions[0].tolist() == [2, 4, 7]


def test_large_scale_stats_summary():
    # a graph with the published MPD subset sizes reports exactly those sizes
    n_p, n_t, n_a = 11_100, 183_408, 37_509
    rows = [(f"p{i % n_p}", f"t{i}", f"a{i % n_a}", i) for i in range(n_t)]
    g = graph_from_rows(rows)
    assert g.stats() == {"playlists": 11_100, "tracks": 183_408, "artists": 37_509, "edges": 183_408}


# --------------------------------------------------------------------------- splits


def test_split_sizes_exact():
    g = make_graph({f"p{i}": ["x", "y"] for i in range(10)})
    s = split_playlists(g, (0.8, 0.1, 0.1), seed=4)
    assert [int(np.sum(s.split == k)) for k in (TRAIN, VALID, TEST)] == [8, 1, 1]


def test_split_deterministic():
    g = make_graph({f"p{i}": ["x", "y"] for i in range(40)})
    a = split_playlists(g, (0.7, 0.15, 0.15), seed=9)
    b = split_playlists(g, (0.7, 0.15, 0.15), seed=9)
    assert a.split.tobytes() == b.split.tobytes()


@pytest.mark.parametrize("fractions", [(0.5, 0.5, 0.5), (0.9, 0.1, 0.0), (1.0, 0.0, 0.0)])
def test_split_bad_fractions(fractions):
    g = make_graph({f"p{i}": ["x"] for i in range(10)})
    with pytest.raises(ConfigError):
        split_playlists(g, fractions, 0)


def test_split_empty_partition_is_error():
    g = make_graph({f"p{i}": ["x"] for i in range(3)})
    with pytest.raises(ConfigError, match="empty split"):
        split_playlists(g, (0.8, 0.1, 0.1), 0)


def _all_test_split(g):
    return SplitAssignment(split=np.full(g.n_playlists, TEST, dtype=np.int8))


def test_peek_prefix_clamp_and_exclusion():
    g = make_graph({"a": ["t3", "t7", "t9"], "b": ["t1", "t2"], "c": ["t5"]})
    names = dict(zip(g.track_names, range(g.n_tracks)))
    s = split_peek_holdout(g, _all_test_split(g), peek_k=2)
    assert s.peek[0].tolist() == [names["t3"], names["t7"]]
    assert s.holdout[0].tolist() == [names["t9"]]
    s5 = split_peek_holdout(g, _all_test_split(g), peek_k=5)
    assert s5.peek[1].tolist() == [names["t1"]] and s5.holdout[1].tolist() == [names["t2"]]
    assert s5.excluded == [2] and 2 not in s5.holdout
    with pytest.raises(ConfigError):
        split_peek_holdout(g, _all_test_split(g), peek_k=0)


def test_split_file_round_trip(tmp_path):
    g = make_graph({f"p{i}": ["x", "y"] for i in range(20)})
    s = split_playlists(g, (0.8, 0.1, 0.1), 1)
    write_splits(g, s, tmp_path / "s.csv")
    assert load_splits(g, tmp_path / "s.csv").split.tolist() == s.split.tolist()
    (tmp_path / "bad.csv").write_text("playlist_id,split\np0,train\n")
    with pytest.raises(ValidationError, match="no split"):
        load_splits(g, tmp_path / "bad.csv")


# --------------------------------------------------------------------------- features


def test_feature_validation():
    with pytest.raises(ValidationError):
        TrackFeatureTable(sonic=np.full((2, 9), 10), genre=np.zeros((2, 20)))
    with pytest.raises(ValidationError):
        TrackFeatureTable(sonic=np.zeros((2, 9)), genre=np.full((2, 20), 2))
    with pytest.raises(ValidationError):
        TrackFeatureTable(sonic=np.zeros((2, 9)), genre=np.zeros((2, 20)), name_emb=np.zeros((3, 4)))


def test_features_round_trip_and_missing_rows(tmp_path):
    g = make_graph({"p": ["a", "b", "c"]})
    f = random_features(3, seed=2)
    write_features(g, f, tmp_path / "f.csv")
    back = load_features(g, tmp_path / "f.csv")
    assert np.array_equal(back.sonic, f.sonic) and np.array_equal(back.genre, f.genre)
    lines = (tmp_path / "f.csv").read_text().splitlines()
    (tmp_path / "g.csv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ValidationError, match="missing features"):
        load_features(g, tmp_path / "g.csv")


# --------------------------------------------------------------------------- synthetic data


def test_synthetic_cluster_coherence():
    spec = SynthSpec(n_playlists=50, n_tracks=300, skew=1.0, n_clusters=6)
    g, f = generate_synthetic(spec, seed=0)
    assert g.n_tracks == 300
    within, cross = sonic_cluster_cosines(f, 6)
    # independent recomputation of both means
    x = f.sonic_scaled()
    xn = x / np.linalg.norm(x, axis=1, keepdims=True)
    c = np.arange(300) % 6
    w_vals, c_vals = [], []
    for i in range(300):
        for j in range(i + 1, 300):
            (w_vals if c[i] == c[j] else c_vals).append(float(xn[i] @ xn[j]))
    assert within == pytest.approx(np.mean(w_vals), abs=1e-12)
    assert cross == pytest.approx(np.mean(c_vals), abs=1e-12)
    assert within > cross


def test_synthetic_zero_skew_is_uniform():
    # one giant cluster and no forced coverage effects: frequencies ~ multinomial
    spec = SynthSpec(n_playlists=400, n_tracks=40, n_artists=4, n_clusters=1, skew=0.0, min_len=5, max_len=5)
    g, _ = generate_synthetic(spec, seed=5)
    counts = np.array([len(p) for p in g.track_playlists])
    n, k = counts.sum(), len(counts)
    expected = n / k
    sigma = np.sqrt(n * (1 / k) * (1 - 1 / k))
    assert np.all(np.abs(counts - expected) <= 3.5 * sigma)


def test_synthetic_deterministic_and_bytes(tmp_path):
    a = generate_synthetic(SynthSpec(), seed=7)
    b = generate_synthetic(SynthSpec(), seed=7)
    write_interactions(a[0], tmp_path / "a.csv")
    write_interactions(b[0], tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert np.array_equal(a[1].sonic, b[1].sonic)


def test_synthetic_bad_spec():
    with pytest.raises(ConfigError):
        generate_synthetic(SynthSpec(n_tracks=4, n_clusters=6, n_artists=4), seed=0)


def test_subgraph_keeps_catalog():
    g = make_graph({"p": ["a", "b"], "q": ["b", "c"]})
    sub = g.subgraph([1])
    assert sub.n_tracks == 3 and sub.n_playlists == 1
    assert [len(x) for x in sub.track_playlists] == [0, 1, 1]


# --------------------------------------------------------------------------- properties

playlist_dicts = st.dictionaries(
    st.text("pq", min_size=1, max_size=3),
    st.lists(st.sampled_from([f"t{i}" for i in range(12)]), min_size=1, max_size=8, unique=True),
    min_size=1,
    max_size=6,
)


@settings(max_examples=60, deadline=None)
@given(playlist_dicts)
def test_round_trip_property(tmp_path_factory, playlists):
    g = make_graph(playlists, artist_of=lambda t: f"a{int(t[1:]) % 3}")
    path = tmp_path_factory.mktemp("rt") / "g.csv"
    write_interactions(g, path)
    h = load_interactions(path)
    assert h.track_names == g.track_names and h.playlist_names == g.playlist_names
    assert np.array_equal(h.track_artist, g.track_artist)
    for a, b, c, d in zip(g.playlist_tracks, h.playlist_tracks, g.playlist_positions, h.playlist_positions):
        assert np.array_equal(a, b) and np.array_equal(c, d)
    # both directions of every edge
    for p, tracks in enumerate(g.playlist_tracks):
        for t in tracks:
            assert p in g.track_playlists[t]


@settings(max_examples=60, deadline=None)
@given(playlist_dicts, st.integers(1, 6))
def test_peek_holdout_partition_property(playlists, peek_k):
    g = make_graph(playlists)
    s = split_peek_holdout(g, _all_test_split(g), peek_k)
    for p in range(g.n_playlists):
        tracks = g.playlist_tracks[p]
        if len(tracks) < 2:
            assert p in s.excluded
            continue
        peek, hold = s.peek[p], s.holdout[p]
        assert len(hold) >= 1 and len(peek) == min(peek_k, len(tracks) - 1)
        assert np.array_equal(np.concatenate([peek, hold]), tracks)
