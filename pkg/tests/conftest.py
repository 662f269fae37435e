import numpy as np
import pytest

from redboost.data_store import SynthSpec, TrackFeatureTable, generate_synthetic, graph_from_rows


def make_graph(playlists, artist_of=None):
    """Graph from ``{playlist: [track, ...]}``; artist defaults to ``a<track>``."""
    rows = []
    for pid, tracks in playlists.items():
        for pos, tid in enumerate(tracks):
            artist = artist_of(tid) if artist_of else f"a{tid}"
            rows.append((pid, tid, artist, pos))
    return graph_from_rows(rows)


def random_features(n, seed=0):
    rng = np.random.default_rng(seed)
    genre = np.zeros((n, 20), dtype=np.int64)
    genre[np.arange(n), rng.integers(0, 20, n)] = 1
    return TrackFeatureTable(sonic=rng.integers(0, 10, size=(n, 9)), genre=genre)


@pytest.fixture(scope="session")
def synth():
    return generate_synthetic(SynthSpec(), seed=3)


@pytest.fixture(scope="session")
def small_synth():
    spec = SynthSpec(n_playlists=30, n_tracks=80, n_artists=16, n_clusters=4, min_len=5, max_len=12)
    return generate_synthetic(spec, seed=11)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
