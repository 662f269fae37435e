import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from redboost.data_store import TEST, TRAIN, SplitAssignment
from redboost.errors import ConfigError, ValidationError
from redboost.popularity import (
    artist_popularity,
    assign_bins,
    breakdown_report,
    count_appearances,
    long_tail_set,
    short_head,
)

from conftest import make_graph


def oracle_bin(a, a_max):
    if a < 1 or a_max <= 1:
        return 0
    return min(max(math.floor(10 * math.log10(a) / math.log10(a_max)), 0), 9)


def test_counts_use_train_only():
    g = make_graph({"p0": ["x", "y"], "p1": ["x"], "p2": ["x", "z"], "p3": ["w", "x"]})
    split = SplitAssignment(split=np.array([TRAIN, TRAIN, TRAIN, TEST], dtype=np.int8))
    counts = count_appearances(g, split)
    ids = dict(zip(g.track_names, range(g.n_tracks)))
    assert counts[ids["x"]] == 3
    assert counts[ids["w"]] == 0
    assert counts.sum() == sum(len(g.playlist_tracks[p]) for p in (0, 1, 2))


def test_counts_need_train():
    g = make_graph({"p0": ["x"]})
    with pytest.raises(ValidationError):
        count_appearances(g, SplitAssignment(split=np.array([TEST], dtype=np.int8)))


def test_bins_worked_example():
    counts = [1, 3, 10, 31, 100, 316, 1000]
    expected = [oracle_bin(a, 1000) for a in counts]
    assert expected == [0, 1, 3, 4, 6, 8, 9]
    assert assign_bins(counts).bins.tolist() == expected


def test_bin_edges():
    idx = assign_bins([0, 1, 5, 77])
    assert idx.bins[0] == 0 and idx.bins[1] == 0 and idx.bins[3] == 9
    assert np.isneginf(idx.log_pop[0]) and idx.log_pop[1] == 0.0
    assert assign_bins([1, 1, 1]).bins.tolist() == [0, 0, 0]
    with pytest.raises(ValidationError):
        assign_bins([0, 0])


def test_long_tail_sizes_and_ties():
    idx = assign_bins([5, 5, 5, 1, 1, 1, 1, 1, 1, 1])
    assert len(long_tail_set(idx, 0.2)) == 8
    # ties among the count-5 tracks go to the lower ids
    assert short_head(idx, 0.2).tolist() == [0, 1]
    assert len(long_tail_set(idx, 0.999)) == 0
    with pytest.raises(ConfigError):
        long_tail_set(idx, 1.0)


def test_breakdown_uniform_counts_matches_oracle():
    counts = [7] * 5 + [3]
    rep = breakdown_report(assign_bins(counts))
    want = {}
    for a in counts:
        b = oracle_bin(a, 7)
        want[b] = want.get(b, 0) + 1
    assert {b: v["tracks"] for b, v in rep.items() if v["tracks"]} == want
    assert sum(v["interaction_share"] for v in rep.values()) == pytest.approx(1.0, abs=1e-9)


def test_breakdown_single_track():
    rep = breakdown_report(assign_bins([4]))
    occupied = [b for b, v in rep.items() if v["tracks"]]
    assert occupied == [9] and rep[9]["interaction_share"] == 1.0


def test_artist_popularity_sums_tracks():
    idx = artist_popularity(np.array([10, 90, 1, 0]), np.array([0, 0, 1, 2]), 3)
    assert idx.counts.tolist() == [100, 1, 0]
    assert idx.bins.tolist() == [9, 0, 0]


count_vectors = st.lists(st.integers(0, 100_000), min_size=1, max_size=60).filter(lambda c: max(c) >= 1)


@settings(max_examples=300, deadline=None)
@given(count_vectors)
def test_bins_oracle_and_monotone(counts):
    idx = assign_bins(counts)
    a_max = max(counts)
    assert idx.bins.tolist() == [oracle_bin(a, a_max) for a in counts]
    order = np.argsort(counts, kind="stable")
    assert np.all(np.diff(idx.bins[order]) >= 0)
    if a_max > 1:
        assert idx.bins[int(np.argmax(counts))] == 9


@settings(max_examples=100, deadline=None)
@given(count_vectors, st.floats(0.01, 0.99))
def test_head_tail_partition(counts, f):
    idx = assign_bins(counts)
    head, tail = short_head(idx, f), long_tail_set(idx, f)
    assert len(np.intersect1d(head, tail)) == 0
    assert sorted(np.concatenate([head, tail]).tolist()) == list(range(len(counts)))
    assert len(head) == math.ceil(f * len(counts) - 1e-9)
    if len(head) and len(tail):
        assert idx.counts[head].min() >= idx.counts[tail].max()
