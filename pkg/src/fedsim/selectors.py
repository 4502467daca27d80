"""Client selection: uniform random, and K-Means clusters over warm-up weights."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .managers import derive_seed
from .model import TrainConfig
from .pca import pca

logger = logging.getLogger(__name__)


def select_random(pool: Sequence[int], cr: int, rng: np.random.Generator) -> list:
    """``cr`` distinct ids drawn uniformly without replacement, returned sorted."""
    pool = sorted(pool)
    if not 1 <= cr <= len(pool):
        raise ValueError(f"cannot select {cr} clients from a pool of {len(pool)}")
    return sorted(int(i) for i in rng.choice(pool, size=cr, replace=False))


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    sse: float
    sse_history: list = field(default_factory=list)
    iterations: int = 0


def _sq_dists(x, centroids):
    return ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _sse(x, assign, centroids):
    return float(((x - centroids[assign]) ** 2).sum())


def _kmeanspp(x, k, rng):
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # every remaining point coincides with a centre
            nxt = next(i for i in range(n) if i not in chosen)
        else:
            nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        chosen.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[chosen].copy()


def _means(x, assign, centroids):
    out = centroids.copy()
    for c in range(centroids.shape[0]):
        members = assign == c
        if members.any():
            out[c] = x[members].mean(axis=0)
    return out


def kmeans(points, k: int, max_iters: int = 100, seed: int = 0) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds, then single-point refinement.

    The refinement pass moves a point to another cluster whenever that lowers
    the total SSE, so the result is also stable under single reassignments.
    ``sse_history`` records the objective after every assignment and update
    step and never increases.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("kmeans needs a non-empty 2-D array of points")
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(x, k, rng)
    assign = np.argmin(_sq_dists(x, centroids), axis=1)
    history = [_sse(x, assign, centroids)]

    it = 0
    for it in range(1, max_iters + 1):
        centroids = _means(x, assign, centroids)
        history.append(_sse(x, assign, centroids))
        new_assign = np.argmin(_sq_dists(x, centroids), axis=1)
        history.append(_sse(x, new_assign, centroids))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

    centroids = _means(x, assign, centroids)
    sizes = np.bincount(assign, minlength=k)
    for _ in range(max_iters):
        moved = False
        for i in range(n):
            a = assign[i]
            if sizes[a] <= 1:
                continue
            d2 = ((centroids - x[i]) ** 2).sum(axis=1)
            gain_out = sizes[a] / (sizes[a] - 1) * d2[a]
            cost_in = sizes / (sizes + 1.0) * d2
            cost_in[a] = np.inf
            b = int(np.argmin(cost_in))
            if cost_in[b] < gain_out * (1 - 1e-12):
                assign[i] = b
                sizes[a] -= 1
                sizes[b] += 1
                centroids[a] = x[assign == a].mean(axis=0)
                centroids[b] = x[assign == b].mean(axis=0)
                moved = True
        if not moved:
            break
        history.append(_sse(x, assign, centroids))

    sse = _sse(x, assign, centroids)
    return KMeansResult(assign.astype(np.int64), centroids, sse, history, it)


def select_clustered(cluster_of: dict, k: int, cr: int, rng: np.random.Generator) -> list:
    """Spread ``cr`` picks over ``k`` clusters.

    Each cluster gets ``cr // k`` picks, and the first ``cr % k`` clusters in a
    shuffled order get one more. A cluster smaller than its quota gives all
    its members and the shortfall is drawn from the clients not yet picked.
    """
    pool = sorted(cluster_of)
    if not 1 <= cr <= len(pool):
        raise ValueError(f"cannot select {cr} clients from a pool of {len(pool)}")
    members = [[cid for cid in pool if cluster_of[cid] == c] for c in range(k)]
    base, extra = divmod(cr, k)
    chosen = []
    for rank, c in enumerate(rng.permutation(k)):
        quota = base + (1 if rank < extra else 0)
        take = min(quota, len(members[c]))
        if take:
            chosen.extend(int(i) for i in rng.choice(members[c], size=take, replace=False))
    deficit = cr - len(chosen)
    if deficit:
        picked = set(chosen)
        rest = [cid for cid in pool if cid not in picked]
        chosen.extend(int(i) for i in rng.choice(rest, size=deficit, replace=False))
    return sorted(chosen)


@dataclass
class SelectorState:
    kind: str
    client_ratio: int
    k: Optional[int] = None
    cluster_of: Optional[dict] = None

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "client_ratio": self.client_ratio}
        if self.k is not None:
            out["k"] = self.k
        if self.cluster_of is not None:
            out["cluster_of"] = {str(cid): int(c) for cid, c in sorted(self.cluster_of.items())}
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "SelectorState":
        cluster_of = raw.get("cluster_of")
        if cluster_of is not None:
            cluster_of = {int(cid): int(c) for cid, c in cluster_of.items()}
        return cls(raw["kind"], int(raw["client_ratio"]), raw.get("k"), cluster_of)


def cluster_init(manager, spec, init_params, k: int, seed: int, cr: int = None,
                 train_cfg: TrainConfig = None, pca_dims: int = None,
                 max_iters: int = 100) -> SelectorState:
    """Warm-up round: every client trains once from ``init_params``; cluster the results.

    Defaults to one full-batch epoch at the clients' learning rate. With
    ``pca_dims`` the flattened weights are projected before clustering.
    """
    ids = manager.ids()
    if not 1 <= k <= len(ids):
        raise ValueError(f"k={k} must lie in [1, {len(ids)}]")
    if train_cfg is None:
        lr = manager.clients[ids[0]].train_cfg.learning_rate
        train_cfg = TrainConfig(epochs=1, batch_size=None, learning_rate=lr)
    updates = manager.dispatch(manager.lookup(ids), init_params, spec,
                               derive_seed(seed, "cluster-init"), train_cfg=train_cfg)
    weights = np.stack([u.params.values for u in updates])
    if pca_dims:
        weights = pca(weights, pca_dims).projected
    result = kmeans(weights, k, max_iters=max_iters, seed=derive_seed(seed, "kmeans"))
    cluster_of = {u.client_id: int(c) for u, c in zip(updates, result.assignments)}
    logger.info("cluster selector: sizes %s", np.bincount(result.assignments, minlength=k).tolist())
    return SelectorState("cluster", cr if cr is not None else k, k, cluster_of)


class RandomSelector:
    kind = "random"

    def __init__(self, cr: int):
        if cr < 1:
            raise ValueError("client ratio must be >= 1")
        self.cr = cr

    def initialize(self, manager, spec, init_params, seed):
        pass

    def select(self, pool, rng) -> list:
        return select_random(pool, self.cr, rng)

    def state_dict(self) -> dict:
        return SelectorState(self.kind, self.cr).to_dict()

    def load_state_dict(self, raw: dict):
        self.cr = int(raw["client_ratio"])


class ClusterSelector:
    """Picks clients evenly across K-Means clusters found in a warm-up round."""

    kind = "cluster"

    def __init__(self, cr: int, k: int, train_cfg: TrainConfig = None,
                 pca_dims: int = None, max_iters: int = 100):
        if cr < 1 or k < 1:
            raise ValueError("client ratio and k must be >= 1")
        self.cr = cr
        self.k = k
        self.train_cfg = train_cfg
        self.pca_dims = pca_dims
        self.max_iters = max_iters
        self.state = None

    def initialize(self, manager, spec, init_params, seed):
        self.state = cluster_init(manager, spec, init_params, self.k, seed, cr=self.cr,
                                  train_cfg=self.train_cfg, pca_dims=self.pca_dims,
                                  max_iters=self.max_iters)

    def select(self, pool, rng) -> list:
        if self.state is None:
            raise RuntimeError("cluster selector used before initialize()")
        pool = set(pool)
        cluster_of = {cid: c for cid, c in self.state.cluster_of.items() if cid in pool}
        return select_clustered(cluster_of, self.k, self.cr, rng)

    def state_dict(self) -> dict:
        if self.state is None:
            return SelectorState(self.kind, self.cr, self.k).to_dict()
        return self.state.to_dict()

    def load_state_dict(self, raw: dict):
        self.state = SelectorState.from_dict(raw)
        self.cr = self.state.client_ratio
        self.k = self.state.k
