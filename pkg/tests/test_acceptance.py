"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v -s`` or as a
script: ``python3 tests/test_acceptance.py``. The MNIST criterion (11) runs
only when ``FEDSIM_MNIST_DIR`` points at a directory holding the four
``*-ubyte`` files; otherwise it is skipped.
"""

import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from fedsim.config import build_experiment, validate
from fedsim.core import StopCriteria, aggregate_fedavg, run_federated
from fedsim.data import (
    DataContainer,
    distribute_dirichlet,
    distribute_label,
    distribute_shard,
    distribute_unique,
    validate_plan,
)
from fedsim.events import Subscriber
from fedsim.managers import ParallelManager, SequentialManager, SimClient
from fedsim.model import ModelSpec, ParamVector, TrainConfig, init_params, loss_and_grad
from fedsim.selectors import RandomSelector
from fedsim.subscribers import (
    BandwidthAccountant,
    CheckpointSubscriber,
    DivergenceAnalyzer,
    MetricsStore,
    load_checkpoint,
)

RESULTS = {}


def report(num, name, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:>2}: {name}" + (f" ({detail})" if detail else "")
    RESULTS[num] = line
    print(line)
    assert ok, line


# -- shared experiment settings ----------------------------------------------
# A 10-class problem whose class means are close together relative to the
# feature scale, so a single full-batch step moves the model only part way
# and local epochs and label skew visibly matter.

SYNTH = {"kind": "synthetic", "num_classes": 10, "per_class": 600, "dim": 20,
         "separation": 0.3, "noise": 0.1}


def experiment(seed, distributor, epochs=1, selector=None, rounds=30, lr=0.6, dataset=SYNTH):
    raw = {
        "seed": seed,
        "dataset": dict(dataset),
        "distributor": distributor,
        "model": {"kind": "logistic"},
        "train": {"epochs": epochs, "batch_size": None, "learning_rate": lr},
        "selector": selector or {"kind": "random", "cr": 10},
        "stop": {"max_rounds": rounds},
    }
    return build_experiment(validate(raw))


def accuracies(exp, subscribers=()):
    fed = exp.federation(list(subscribers))
    ctx = fed.run()
    fed.manager.close()
    return np.array([r.global_metrics.accuracy for r in ctx.history])


def dirichlet(alpha):
    return {"kind": "dirichlet", "alpha": alpha, "num_clients": 50, "records_per_client": 90}


# -- 1 -----------------------------------------------------------------------

def test_c01_fedavg_oracle():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        m, d = int(rng.integers(2, 11)), int(rng.integers(1, 51))
        vecs = rng.normal(scale=rng.uniform(0.1, 100), size=(m, d))
        counts = rng.integers(1, 1000, size=m)
        out = aggregate_fedavg([(ParamVector(v, ((1, d),)), int(n)) for v, n in zip(vecs, counts)]).values
        total = int(counts.sum())
        ref = [sum(float(vecs[j, i]) * int(counts[j]) for j in range(m)) / total for i in range(d)]
        worst = max(worst, float(np.max(np.abs(out - ref) / np.maximum(1.0, np.abs(ref)))))
    elapsed = time.perf_counter() - start
    report(1, "FedAvg matches weighted-mean oracle", worst <= 1e-12 and elapsed < 1.0,
           f"max rel err {worst:.2e}, {elapsed:.2f}s")


# -- 2 -----------------------------------------------------------------------

def test_c02_distributor_invariants():
    start = time.perf_counter()
    labels = np.repeat(np.arange(10), 6000)
    mnist_like = DataContainer(np.zeros((len(labels), 1)), labels, 10)
    small = DataContainer(np.zeros((3000, 1)), np.repeat(np.arange(10), 300), 10)
    problems = []
    for seed in range(100):
        plans = {
            "shard": distribute_shard(small, 30, 2, seed),
            "label": distribute_label(small, 3, 50, 20, seed),
            "unique": distribute_unique(small, 100, seed),
            "dirichlet": distribute_dirichlet(small, 0.5, 20, 100, seed),
        }
        for name, plan in plans.items():
            try:
                validate_plan(plan, small)
            except AssertionError as exc:
                problems.append(f"{name}/{seed}: {exc}")
        sets = [set(plans["unique"].labels_of(k)) for k in range(plans["unique"].num_clients)]
        if any(a & b for i, a in enumerate(sets) for b in sets[i + 1:]):
            problems.append(f"unique/{seed}: overlapping label sets")
        if any(len(plans["label"].labels_of(k)) != 3 for k in range(20)):
            problems.append(f"label/{seed}: wrong label count")
    s2 = distribute_shard(mnist_like, 300, 2, 0)
    s5 = distribute_shard(mnist_like, 300, 5, 0)
    arithmetic = (s2.info["total_shards"], s2.num_clients, s5.num_clients)
    elapsed = time.perf_counter() - start
    ok = not problems and arithmetic == (200, 100, 40) and elapsed < 30
    report(2, "distributor invariants and shard arithmetic", ok,
           f"shards/S=2/S=5 = {arithmetic}, {len(problems)} violations, {elapsed:.1f}s")


# -- 3 -----------------------------------------------------------------------

def test_c03_gradient_check():
    rng = np.random.default_rng(3)
    worst, cases = 0.0, 0
    specs = [ModelSpec.logistic(4, 3), ModelSpec.logistic(6, 5), ModelSpec.mlp(4, (5,), 3),
             ModelSpec.mlp(3, (4, 3), 4)]
    for i in range(24):
        spec = specs[i % len(specs)]
        x = rng.normal(size=(7, spec.input_dim))
        y = rng.integers(0, spec.num_classes, size=7)
        data = DataContainer(x, y, spec.num_classes)
        p = init_params(spec, i).values + rng.normal(scale=0.3, size=spec.num_params)
        base = ParamVector(p, spec.layer_shapes)
        _, g = loss_and_grad(base, spec, data.features, data.labels)
        num = np.zeros_like(p)
        h = 1e-6
        for j in range(len(p)):
            e = np.zeros_like(p)
            e[j] = h
            lp, _ = loss_and_grad(base, spec, data.features, data.labels, values=p + e)
            lm, _ = loss_and_grad(base, spec, data.features, data.labels, values=p - e)
            num[j] = (lp - lm) / (2 * h)
        rel = np.linalg.norm(g - num) / max(np.linalg.norm(g) + np.linalg.norm(num), 1e-12)
        worst = max(worst, rel)
        cases += 1
    report(3, "analytic vs finite-difference gradients", worst <= 1e-5 and cases >= 20,
           f"{cases} cases, max rel err {worst:.1e}")


# -- 4 -----------------------------------------------------------------------

def test_c04_determinism_and_resume(tmp_path):
    def fed(rounds, subs):
        exp = experiment(4, dirichlet(1.0), rounds=rounds)
        return exp.federation(subs)

    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    fed(10, [MetricsStore(a)]).run()
    fed(10, [MetricsStore(b)]).run()
    same_files = a.read_bytes() == b.read_bytes()

    full = fed(10, []).run()
    ck = tmp_path / "c.mfck"
    fed(10, [CheckpointSubscriber(ck, every=5)]).run(until_round=5)
    resumed = fed(10, []).run(load_checkpoint(ck))
    same_history = resumed.history == full.history and resumed.global_params == full.global_params
    report(4, "determinism and checkpoint resume", same_files and same_history,
           f"metrics identical={same_files}, resumed history identical={same_history}")


# -- 5 -----------------------------------------------------------------------

def test_c05_parallel_equivalence():
    exp = experiment(5, dirichlet(1.0))
    clients = exp.clients[:8]
    clients = [SimClient(c.id, c.data, TrainConfig(3, 16, 0.3)) for c in clients]
    g = init_params(exp.spec, 5)

    def key(ups):
        return [(u.client_id, u.sample_count, u.bytes_payload, u.params.values.tobytes()) for u in ups]

    ref = key(SequentialManager(clients).dispatch(clients, g, exp.spec, 77))
    same = True
    for workers in (1, 4):
        mgr = ParallelManager(clients, workers)
        same &= key(mgr.dispatch(clients, g, exp.spec, 77)) == ref
        mgr.close()
    report(5, "parallel(1), parallel(4) and sequential identical", same)


# -- 6 -----------------------------------------------------------------------

def test_c06_epoch_trend():
    start = time.perf_counter()
    final = {1: [], 20: []}
    for seed in range(3):
        for e in (1, 20):
            final[e].append(accuracies(experiment(seed, dirichlet(10.0), epochs=e))[29])
    gap = np.mean(final[20]) - np.mean(final[1])
    elapsed = time.perf_counter() - start
    report(6, "more local epochs give higher accuracy", gap >= 0.03 and elapsed < 180,
           f"E=20 {np.mean(final[20]):.3f} vs E=1 {np.mean(final[1]):.3f}, gap {gap:+.3f}, {elapsed:.0f}s")


# -- 7 -----------------------------------------------------------------------

def test_c07_non_iid_degradation():
    acc, spread = {10.0: [], 0.5: []}, {10.0: [], 0.5: []}
    for seed in range(3):
        for alpha in (10.0, 0.5):
            curve = accuracies(experiment(seed, dirichlet(alpha)))
            acc[alpha].append(curve[29])
            # round-to-round volatility: std of successive accuracy changes
            spread[alpha].append(np.std(np.diff(curve)))
    iid, non = np.mean(acc[10.0]), np.mean(acc[0.5])
    s_iid, s_non = np.mean(spread[10.0]), np.mean(spread[0.5])
    report(7, "Non-IID lowers accuracy and raises volatility", iid >= non and s_non > s_iid,
           f"acc IID {iid:.3f} vs Non-IID {non:.3f}; step std IID {s_iid:.4f} vs Non-IID {s_non:.4f}")


# -- 8 -----------------------------------------------------------------------

# well-separated classes: IID clients approach a common optimum, so their
# spread shrinks once the shared model fits the data
SEPARABLE = {"kind": "synthetic", "num_classes": 10, "per_class": 600, "dim": 20}


def _divergence(seed, labels_per_client):
    # round 1 is the first round trained from the common initial model
    dist = {"kind": "label", "labels_per_client": labels_per_client,
            "records_per_client": 200, "num_clients": 20}
    exp = experiment(seed, dist, selector={"kind": "random", "cr": 20}, rounds=11, dataset=SEPARABLE)
    an = DivergenceAnalyzer(d=2, rounds=[1, 11])
    accuracies(exp, [an])
    return an.results[1].mean_pairwise_distance, an.results[11].mean_pairwise_distance


def test_c08_weight_divergence():
    wins, subsided = 0, 0
    first_iid, last_iid = [], []
    for seed in range(10):
        non_first, _ = _divergence(seed, 1)
        iid_first, iid_last = _divergence(seed, 10)
        wins += non_first > iid_first
        subsided += iid_last < iid_first
        first_iid.append(iid_first)
        last_iid.append(iid_last)
    ok = wins >= 9 and np.mean(last_iid) < np.mean(first_iid)
    report(8, "Non-IID weights diverge more, IID divergence subsides", ok,
           f"L=1 > L=10 in {wins}/10 seeds; IID round-10 < round-0 in {subsided}/10 seeds, "
           f"mean {np.mean(last_iid):.4f} vs {np.mean(first_iid):.4f}")


# -- 9 -----------------------------------------------------------------------

def test_c09_cluster_selector():
    dist = {"kind": "label", "labels_per_client": 2, "records_per_client": 90, "num_clients": 50}
    stats = {"cluster": ([], []), "random": ([], [])}
    for seed in range(3):
        for kind, sel in (("cluster", {"kind": "cluster", "cr": 10, "k": 5}),
                          ("random", {"kind": "random", "cr": 10})):
            window = accuracies(experiment(seed, dist, selector=sel, rounds=40))[19:40]
            stats[kind][0].append(window.mean())
            stats[kind][1].append(window.std())
    c_mean, c_std = np.mean(stats["cluster"][0]), np.mean(stats["cluster"][1])
    r_mean, r_std = np.mean(stats["random"][0]), np.mean(stats["random"][1])
    report(9, "cluster selector better and steadier than random", c_mean >= r_mean and c_std <= r_std,
           f"rounds 20-40 mean/std cluster {c_mean:.3f}/{c_std:.3f}, random {r_mean:.3f}/{r_std:.3f}")


# -- 10 ----------------------------------------------------------------------

def test_c10_bandwidth_ledger():
    checks = []
    # the 784-input, 10-class logistic model has 7850 parameters
    rng = np.random.default_rng(10)
    x = rng.normal(size=(600, 784))
    y = np.arange(600) % 10
    data = DataContainer(x, y, 10)
    spec = ModelSpec.logistic(784, 10)
    clients = [SimClient(i, data.subset(np.arange(i * 50, i * 50 + 50)), TrainConfig(1, None, 0.1))
               for i in range(10)]
    acct = BandwidthAccountant()
    ctx = run_federated(spec, SequentialManager(clients), data, RandomSelector(10), StopCriteria(1),
                        subscribers=[acct])
    checks.append(acct.total == ctx.cumulative_bytes == 1_256_000)

    for rounds, cr in ((7, 4), (12, 10)):
        exp = experiment(1, dirichlet(10.0), rounds=rounds, selector={"kind": "random", "cr": cr})
        acct = BandwidthAccountant()
        ctx = exp.federation([acct]).run()
        expected = rounds * cr * exp.spec.num_params * 8 * 2
        checks.append(acct.total == ctx.cumulative_bytes == expected)
    report(10, "cumulative bytes equal R x CR x param bytes x 2", all(checks),
           "7850-parameter round = 1,256,000 B" if checks[0] else "")


# -- 11 ----------------------------------------------------------------------

MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
               "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def _mnist_dir():
    root = os.environ.get("FEDSIM_MNIST_DIR")
    if not root:
        return None
    root = Path(root)
    found = {}
    for name in MNIST_FILES:
        for cand in (root / name, root / f"{name}.gz"):
            if cand.exists():
                found[name] = str(cand)
    return found if len(found) == 4 else None


@pytest.mark.slow
def test_c11_mnist_label_iid():
    files = _mnist_dir()
    if files is None:
        line = "[SKIP] criterion 11: MNIST label-IID convergence (set FEDSIM_MNIST_DIR to run)"
        RESULTS[11] = line
        print(line)
        pytest.skip("MNIST files not present")
    raw = {
        "seed": 0,
        "dataset": {"kind": "idx", "images": files[MNIST_FILES[0]], "labels": files[MNIST_FILES[1]],
                    "test_images": files[MNIST_FILES[2]], "test_labels": files[MNIST_FILES[3]]},
        "distributor": {"kind": "label", "labels_per_client": 10, "records_per_client": 600,
                        "num_clients": 100},
        "model": {"kind": "logistic"},
        "train": {"epochs": 50, "batch_size": 50, "learning_rate": 0.01},
        "selector": {"kind": "random", "cr": 10},
        "stop": {"max_rounds": 200, "target_accuracy": 0.85},
    }
    exp = build_experiment(validate(raw))
    acc = accuracies(exp)
    report(11, "MNIST label-IID reaches 0.85 within 200 rounds", acc.max() >= 0.85,
           f"best {acc.max():.3f} after {len(acc)} rounds")


# -- 12 ----------------------------------------------------------------------

class OrderProbe(Subscriber):
    def __init__(self):
        self.names = []
        self.trained = {}

    def on_event(self, event, ctx):
        self.names.append(type(event).__name__)
        if type(event).__name__ == "ClientTrained":
            self.trained[event.round] = self.trained.get(event.round, 0) + 1


def test_c12_event_ordering():
    cr = 6
    exp = experiment(12, dirichlet(1.0), rounds=3, selector={"kind": "random", "cr": cr})
    probe = OrderProbe()
    exp.federation([probe]).run()
    per_round = ["RoundStarted", "TrainersSelected"] + ["ClientTrained"] * cr + \
        ["UpdatesAggregated", "RoundFinished"]
    expected = ["FederationStarted"] + per_round * 3 + ["FederationFinished"]
    ok = probe.names == expected and probe.trained == {1: cr, 2: cr, 3: cr}
    report(12, "per-round event order and ClientTrained count", ok, f"{len(probe.names)} events")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
