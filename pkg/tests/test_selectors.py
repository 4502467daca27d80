import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedsim.data import distribute_unique, generate_synthetic
from fedsim.managers import SequentialManager, SimClient
from fedsim.model import ModelSpec, TrainConfig, init_params
from fedsim.selectors import (
    ClusterSelector,
    RandomSelector,
    SelectorState,
    cluster_init,
    kmeans,
    select_clustered,
    select_random,
)


# -- random ------------------------------------------------------------------

def test_select_random_examples():
    pool = list(range(100))
    picked = select_random(pool, 10, np.random.default_rng(0))
    assert len(set(picked)) == 10 and set(picked) <= set(pool)
    assert sorted(select_random([4, 2, 9], 3, np.random.default_rng(1))) == [2, 4, 9]
    assert picked == select_random(pool, 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        select_random([1, 2], 3, np.random.default_rng(0))


def test_select_random_is_roughly_uniform():
    rng = np.random.default_rng(5)
    hits = np.zeros(20)
    for _ in range(2000):
        hits[select_random(range(20), 5, rng)] += 1
    # each id expected 500 times; binomial sd ~19
    assert np.all(np.abs(hits - 500) < 100)


# -- k-means -----------------------------------------------------------------

def brute_force_sse(x, k):
    best = np.inf
    for labels in itertools.product(range(k), repeat=len(x)):
        labels = np.array(labels)
        if len(set(labels)) != k:
            continue
        sse = sum(((x[labels == c] - x[labels == c].mean(axis=0)) ** 2).sum() for c in range(k))
        best = min(best, sse)
    return best


def test_kmeans_examples():
    pts = np.array([[0, 0], [0, 1], [10, 10], [10, 11]], dtype=float)
    res = kmeans(pts, 2, seed=0)
    a = res.assignments
    assert a[0] == a[1] and a[2] == a[3] and a[0] != a[2]
    assert res.sse == pytest.approx(brute_force_sse(pts, 2))

    own = kmeans(pts, 4, seed=3)
    assert len(set(own.assignments.tolist())) == 4 and own.sse == 0.0

    one = kmeans(pts, 1)
    assert np.allclose(one.centroids[0], pts.mean(axis=0))


def test_kmeans_errors():
    with pytest.raises(ValueError):
        kmeans(np.zeros((0, 2)), 1)
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), 4)


def test_kmeans_duplicate_points():
    pts = np.zeros((5, 3))
    res = kmeans(pts, 3, seed=1)
    assert res.sse == 0.0 and len(res.assignments) == 5


def test_kmeans_near_optimal_on_small_instances():
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(20):
        x = rng.normal(size=(7, 2))
        hits += kmeans(x, 3, seed=int(rng.integers(1000))).sse <= brute_force_sse(x, 3) + 1e-9
    assert hits >= 15


points = st.integers(2, 25).flatmap(lambda n: arrays(
    np.float64, (n, 3), elements=st.floats(-50, 50, allow_nan=False)))


@settings(max_examples=60, deadline=None)
@given(points, st.integers(1, 5), st.integers(0, 1000))
def test_kmeans_properties(x, k, seed):
    k = min(k, len(x))
    res = kmeans(x, k, seed=seed)
    hist = np.array(res.sse_history)
    assert np.all(np.diff(hist) <= 1e-9 * (1 + hist[:-1]))
    assert res.assignments.min() >= 0 and res.assignments.max() < k
    # centroids are the cluster means
    for c in range(k):
        members = x[res.assignments == c]
        if len(members):
            assert np.allclose(res.centroids[c], members.mean(axis=0), atol=1e-9)
    # no single-point move lowers the SSE
    def sse(assign):
        return sum(((x[assign == c] - x[assign == c].mean(axis=0)) ** 2).sum()
                   for c in range(k) if np.any(assign == c))
    base = sse(res.assignments)
    for i in range(len(x)):
        for c in range(k):
            if c == res.assignments[i]:
                continue
            moved = res.assignments.copy()
            moved[i] = c
            assert sse(moved) >= base - 1e-7 * (1 + base)


# -- clustered selection -----------------------------------------------------

def test_select_clustered_two_per_cluster():
    cluster_of = {cid: cid % 5 for cid in range(50)}
    for seed in range(10):
        picked = select_clustered(cluster_of, 5, 10, np.random.default_rng(seed))
        assert len(set(picked)) == 10
        assert np.bincount([cluster_of[i] for i in picked], minlength=5).tolist() == [2] * 5


def test_select_clustered_one_per_cluster_and_small_cluster():
    cluster_of = {cid: cid % 4 for cid in range(20)}
    picked = select_clustered(cluster_of, 4, 4, np.random.default_rng(0))
    assert sorted(cluster_of[i] for i in picked) == [0, 1, 2, 3]

    lopsided = {0: 0, 1: 1, 2: 1, 3: 1, 4: 1, 5: 1}
    picked = select_clustered(lopsided, 2, 4, np.random.default_rng(3))
    assert 0 in picked and len(set(picked)) == 4


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=40), st.integers(1, 40), st.integers(0, 99))
def test_select_clustered_properties(labels, cr, seed):
    k = max(labels) + 1
    cluster_of = dict(enumerate(labels))
    cr = min(cr, len(labels))
    picked = select_clustered(cluster_of, k, cr, np.random.default_rng(seed))
    assert len(picked) == cr == len(set(picked))
    nonempty = len(set(labels))
    if nonempty == k:
        assert len({cluster_of[i] for i in picked}) >= min(k, cr)


def test_selector_state_roundtrip():
    st_ = SelectorState("cluster", 10, 5, {3: 1, 0: 4})
    raw = st_.to_dict()
    assert list(raw["cluster_of"]) == ["0", "3"]
    assert SelectorState.from_dict(raw) == st_


# -- warm-up clustering ------------------------------------------------------

def _unique_clients(seed):
    data = generate_synthetic(10, 30, 8, seed=seed)
    plan = distribute_unique(data, None, seed)
    cfg = TrainConfig(1, None, 0.5)
    return [SimClient(cid, c, cfg) for cid, c in plan.containers(data).items()]


def test_cluster_init_identical_clients_single_cluster(blobs):
    cfg = TrainConfig(1, None, 0.1)
    clients = [SimClient(i, blobs, cfg) for i in range(10)]
    spec = ModelSpec.logistic(blobs.dim, 3)
    state = cluster_init(SequentialManager(clients), spec, init_params(spec, 0), 1, seed=0)
    assert state.cluster_of == {i: 0 for i in range(10)}


def test_cluster_init_separates_unique_clients():
    singleton = 0
    for seed in range(20):
        clients = _unique_clients(seed)
        spec = ModelSpec.logistic(8, 10)
        state = cluster_init(SequentialManager(clients), spec, init_params(spec, seed), 10, seed=seed)
        assert sorted(state.cluster_of) == list(range(10))
        singleton += len(set(state.cluster_of.values())) == 10
    assert singleton >= 18


def test_cluster_init_with_pca_and_errors():
    clients = _unique_clients(0)
    spec = ModelSpec.logistic(8, 10)
    state = cluster_init(SequentialManager(clients), spec, init_params(spec, 0), 5, seed=0, pca_dims=3)
    assert set(state.cluster_of.values()) <= set(range(5))
    with pytest.raises(ValueError):
        cluster_init(SequentialManager(clients), spec, init_params(spec, 0), 11, seed=0)


def test_selector_objects_roundtrip_state():
    clients = _unique_clients(1)
    spec = ModelSpec.logistic(8, 10)
    mgr = SequentialManager(clients)
    sel = ClusterSelector(cr=4, k=2)
    with pytest.raises(RuntimeError):
        sel.select(mgr.ids(), np.random.default_rng(0))
    sel.initialize(mgr, spec, init_params(spec, 0), 0)
    other = ClusterSelector(cr=1, k=1)
    other.load_state_dict(sel.state_dict())
    a = sel.select(mgr.ids(), np.random.default_rng(9))
    b = other.select(mgr.ids(), np.random.default_rng(9))
    assert a == b and len(a) == 4

    rnd = RandomSelector(3)
    rnd2 = RandomSelector(1)
    rnd2.load_state_dict(rnd.state_dict())
    assert rnd2.cr == 3
