import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from fedsim.errors import DispatchError
from fedsim.managers import (
    ParallelManager,
    SequentialManager,
    SimClient,
    derive_seed,
    make_manager,
    train_client,
)
from fedsim.model import ModelSpec, TrainConfig, init_params


def _same(a, b):
    return [(u.client_id, u.sample_count, u.bytes_payload) for u in a] == \
        [(u.client_id, u.sample_count, u.bytes_payload) for u in b] and \
        all(np.array_equal(x.params.values, y.params.values) for x, y in zip(a, b))


def test_derive_seed_stable_and_distinct():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert derive_seed(1, 2) != derive_seed(2, 1)
    assert derive_seed("a", 1) != derive_seed("a1")
    assert 0 <= derive_seed(123, "x") < 2**64


@pytest.mark.parametrize("workers", [1, 4])
def test_parallel_matches_sequential(small_fed, workers):
    spec, clients, _ = small_fed
    g = init_params(spec, 1)
    seq = SequentialManager(clients).dispatch(clients, g, spec, 99)
    par = ParallelManager(clients, workers)
    try:
        out = par.dispatch(clients, g, spec, 99)
    finally:
        par.close()
    assert _same(seq, out)


def test_updates_sorted_and_exactly_the_selection(small_fed):
    spec, clients, _ = small_fed
    mgr = SequentialManager(clients)
    picked = mgr.lookup([5, 1, 3])
    ups = mgr.dispatch(picked, init_params(spec, 0), spec, 7)
    assert [u.client_id for u in ups] == [1, 3, 5]
    with pytest.raises(ValueError):
        mgr.dispatch(mgr.lookup([1, 1]), init_params(spec, 0), spec, 7)
    with pytest.raises(ValueError):
        mgr.dispatch([], init_params(spec, 0), spec, 7)


def test_single_client_update(small_fed):
    spec, clients, _ = small_fed
    (u,) = SequentialManager(clients[:1]).dispatch(clients[:1], init_params(spec, 0), spec, 3)
    assert u.sample_count == len(clients[0].data)


def test_logreg_payload_bytes(ten_class):
    spec = ModelSpec.logistic(784, 10)
    assert spec.num_params == 7850
    data = ten_class.subset(np.arange(5))
    x = np.zeros((5, 784))
    from fedsim.data import DataContainer

    client = SimClient(0, DataContainer(x, data.labels, 10), TrainConfig())
    u = train_client(client, init_params(spec, 0), spec, 0)
    assert u.bytes_payload == 62_800 == 7850 * 8


def test_dispatch_does_not_mutate_global(small_fed):
    spec, clients, _ = small_fed
    g = init_params(spec, 4)
    before = g.values.copy()
    SequentialManager(clients).dispatch(clients, g, spec, 1)
    assert np.array_equal(g.values, before)
    with pytest.raises(ValueError):
        g.values[0] = 1.0


def test_dispatch_error_names_failing_clients(small_fed):
    spec, clients, _ = small_fed
    wrong = ModelSpec.logistic(clients[0].data.dim + 1, 10)
    for mgr in (SequentialManager(clients), ParallelManager(clients, 2)):
        with pytest.raises(DispatchError) as info:
            mgr.dispatch(clients[:2], init_params(wrong, 0), wrong, 1)
        assert sorted(info.value.failures) == [0, 1]
        assert "0" in str(info.value) and "1" in str(info.value)
        mgr.close()


@settings(max_examples=10, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(order=st.permutations(list(range(8))), seed=st.integers(0, 2**40))
def test_selection_order_never_changes_results(small_fed, order, seed):
    spec, clients, _ = small_fed
    mgr = SequentialManager(clients)
    g = init_params(spec, 0)
    a = mgr.dispatch(mgr.lookup(order[:4]), g, spec, seed)
    b = mgr.dispatch(mgr.lookup(sorted(order[:4])), g, spec, seed)
    assert _same(a, b)


def test_make_manager(small_fed):
    _, clients, _ = small_fed
    assert isinstance(make_manager("sequential", clients), SequentialManager)
    assert make_manager("parallel", clients, 3).workers == 3
    with pytest.raises(ValueError):
        make_manager("mpi", clients)
    with pytest.raises(ValueError):
        ParallelManager(clients, 0)
