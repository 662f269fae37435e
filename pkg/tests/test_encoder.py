import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from redboost import encoder
from redboost.data_store import TrackFeatureTable
from redboost.encoder import backward, build_input_features, forward, gradient_check, init_params
from redboost.errors import ConfigError, ValidationError
from redboost.sampler import NeighborTable, build_neighbor_table

from conftest import make_graph, random_features


def naive_forward(params, X, index, weight, t):
    """Per-track loop implementation of the two-layer encoder."""

    def layer1(u):
        agg = np.zeros(X.shape[1])
        for j, w in zip(index[u], weight[u]):
            if w > 0:
                agg += w * X[j]
        return np.maximum(np.concatenate([X[u], agg]) @ params.W1 + params.b1, 0.0)

    agg = np.zeros(params.W1.shape[1])
    for j, w in zip(index[t], weight[t]):
        if w > 0:
            agg += w * layer1(j)
    h2 = np.maximum(np.concatenate([layer1(t), agg]) @ params.W2 + params.b2, 0.0)
    return h2 @ params.W_out


@pytest.fixture
def toy():
    g = make_graph({"p1": ["a", "b", "c"], "p2": ["c", "d"], "p3": ["e", "f", "a"], "p4": ["iso"]})
    feats = random_features(g.n_tracks, seed=4)
    X = build_input_features(feats)
    nbrs = build_neighbor_table(g, walks=40, m=3, seed=2)
    params = init_params(X.shape[1], 5, 3, seed=1)
    params.b1[:] = 0.1
    params.b2[:] = 0.05
    return g, X, nbrs, params


def test_input_layout():
    sonic = np.zeros((2, 9), dtype=np.int64)
    sonic[0, 0] = 9
    genre = np.zeros((2, 20), dtype=np.int64)
    genre[1, 3] = 1
    X = build_input_features(TrackFeatureTable(sonic=sonic, genre=genre))
    assert X.shape == (2, 29) and X[0, 0] == 1.0 and X[1, 0] == 0.0 and X[1, 9 + 3] == 1.0
    name, image = np.ones((2, 512)), np.full((2, 1024), 2.0)
    full = build_input_features(TrackFeatureTable(sonic, genre, name, image), True, True)
    assert full.shape[1] == 29 + 512 + 1024 == encoder.input_dim(True, True)
    assert np.all(full[:, 29:541] == 1.0) and np.all(full[:, 541:] == 2.0)
    with pytest.raises(ConfigError):
        build_input_features(TrackFeatureTable(sonic, genre), use_name=True)


def test_init_deterministic_and_bounded():
    a, b = init_params(29, 16, 8, seed=3), init_params(29, 16, 8, seed=3)
    for k in encoder.PARAM_NAMES:
        assert np.array_equal(getattr(a, k), getattr(b, k))
    assert np.abs(a.W1).max() <= np.sqrt(6 / (58 + 16))
    assert np.abs(a.W2).max() <= np.sqrt(6 / (32 + 16))
    assert np.abs(a.W_out).max() <= np.sqrt(6 / (16 + 8))
    with pytest.raises(ConfigError):
        init_params(29, 0, 8)


def test_zero_params_give_zero_embeddings(toy):
    g, X, nbrs, params = toy
    for k in encoder.PARAM_NAMES:
        getattr(params, k)[...] = 0.0
    Z, _ = forward(params, X, nbrs)
    assert np.all(Z == 0.0)


def test_forward_matches_naive_oracle(toy):
    g, X, nbrs, params = toy
    Z, _ = forward(params, X, nbrs)
    for t in range(g.n_tracks):
        assert np.allclose(Z[t], naive_forward(params, X, nbrs.index, nbrs.weight, t), atol=1e-13)


def test_two_track_hand_computation():
    # a-b share a playlist: each is the other's only neighbour with weight 1
    X = np.array([[1.0, 0.0], [0.0, 2.0]])
    nbrs = NeighborTable(index=np.array([[1], [0]]), weight=np.array([[1.0], [1.0]]))
    I2 = np.eye(2)
    params = encoder.EncoderParams(
        W1=np.vstack([I2, I2]), b1=np.zeros(2), W2=np.vstack([I2, np.zeros((2, 2))]), b2=np.zeros(2), W_out=I2
    )
    Z, _ = forward(params, X, nbrs)
    # layer 1: self + neighbour = [1, 2] for both; layer 2 keeps self part only
    assert np.array_equal(Z, np.array([[1.0, 2.0], [1.0, 2.0]]))


def test_isolated_track_depends_only_on_itself(toy):
    g, X, nbrs, params = toy
    iso = g.track_names.index("iso")
    Z, _ = forward(params, X, nbrs)
    X2 = X.copy()
    others = [t for t in range(g.n_tracks) if t != iso]
    X2[others] = np.random.default_rng(0).random((len(others), X.shape[1]))
    Z2, _ = forward(params, X2, nbrs)
    assert np.array_equal(Z[iso], Z2[iso])


def test_subset_rows_equal_full_rows(toy):
    g, X, nbrs, params = toy
    full, _ = forward(params, X, nbrs)
    sub, _ = forward(params, X, nbrs, [4, 1])
    assert np.array_equal(sub, full[[4, 1]])


def test_forward_shape_errors(toy):
    g, X, nbrs, params = toy
    with pytest.raises(ValidationError):
        forward(params, X[:, :5], nbrs)


def test_backward_zero_and_stale(toy):
    g, X, nbrs, params = toy
    Z, cache = forward(params, X, nbrs)
    grads = backward(params, cache, np.zeros_like(Z))
    assert all(np.all(v == 0) for v in grads.values())
    grads = backward(params, cache, np.random.default_rng(0).normal(size=Z.shape))
    assert all(np.all(np.isfinite(v)) and v.shape == getattr(params, k).shape for k, v in grads.items())
    params.W1[0, 0] += 1.0
    params.touch()
    with pytest.raises(ValidationError, match="stale"):
        backward(params, cache, np.zeros_like(Z))


def test_gradient_check_on_linear_objective(toy):
    g, X, nbrs, params = toy
    rng = np.random.default_rng(5)
    C = rng.normal(size=(g.n_tracks, 3))
    obj = lambda p: float(np.sum(C * forward(p, X, nbrs)[0]))  # noqa: E731
    _, cache = forward(params, X, nbrs)
    assert cache.min_abs_preactivation() > 1e-6
    err = gradient_check(obj, params, backward(params, cache, C), eps=1e-5, n_samples=50)
    assert err < 1e-6


def test_gradient_check_quadratic_surrogate(toy):
    _, _, _, params = toy
    # targets one unit away from the current values: every gradient entry is O(1)
    target = {k: v - 1.0 for k, v in params.arrays().items()}
    obj = lambda p: 0.5 * sum(float(np.sum((v - target[k]) ** 2)) for k, v in p.arrays().items())  # noqa: E731
    analytic = {k: v - target[k] for k, v in params.arrays().items()}
    # central differences are exact for quadratics, so a coarse step only trims round-off
    assert gradient_check(obj, params, analytic, eps=1e-3) < 1e-9


def test_gradient_check_detects_corruption(toy):
    g, X, nbrs, params = toy
    C = np.ones((g.n_tracks, 3))
    obj = lambda p: float(np.sum(C * forward(p, X, nbrs)[0]))  # noqa: E731
    _, cache = forward(params, X, nbrs)
    grads = backward(params, cache, C)
    grads["W_out"] = grads["W_out"] * 1.01
    assert gradient_check(obj, params, grads, n_samples=100) > 1e-3


def test_gradient_check_rejects_nonfinite(toy):
    _, _, _, params = toy
    with pytest.raises(ValidationError):
        gradient_check(lambda p: float("nan"), params, {k: v * 0 for k, v in params.arrays().items()})


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_permutation_equivariance(seed):
    g = make_graph({"p1": ["a", "b", "c"], "p2": ["c", "d"], "p3": ["e", "a"]})
    X = build_input_features(random_features(g.n_tracks, seed=seed % 97))
    nbrs = build_neighbor_table(g, walks=30, m=3, seed=seed)
    params = init_params(X.shape[1], 4, 3, seed=seed)
    perm = np.random.default_rng(seed).permutation(g.n_tracks)  # new id of old track i
    Xp = np.empty_like(X)
    Xp[perm] = X
    Z, _ = forward(params, X, nbrs)
    Zp, _ = forward(params, Xp, nbrs.permuted(perm))
    assert np.allclose(Zp[perm], Z, atol=1e-14)
    Z2, _ = forward(params, X, nbrs)
    assert Z.tobytes() == Z2.tobytes()
