"""Strategies that split one container's records among simulated clients.

Every distributor returns a :class:`DistributionPlan` of record indices into
the source container; nothing is copied until :meth:`DistributionPlan.containers`
is called. All of them are pure functions of their arguments and seed.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import InsufficientDataError
from .container import DataContainer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DistributionPlan:
    assignments: dict
    label_histogram: np.ndarray
    info: dict = field(default_factory=dict)

    @classmethod
    def build(cls, data: DataContainer, assignments, **info) -> "DistributionPlan":
        frozen = {}
        for cid, idx in enumerate(assignments):
            arr = np.sort(np.asarray(idx, dtype=np.int64))
            arr.setflags(write=False)
            frozen[cid] = arr
        hist = np.zeros((len(frozen), data.num_classes), dtype=np.int64)
        for cid, idx in frozen.items():
            hist[cid] = np.bincount(data.labels[idx], minlength=data.num_classes)
        hist.setflags(write=False)
        return cls(frozen, hist, info)

    @property
    def num_clients(self) -> int:
        return len(self.assignments)

    def client_sizes(self) -> list:
        return [len(self.assignments[cid]) for cid in sorted(self.assignments)]

    def labels_of(self, client_id: int) -> set:
        return set(np.flatnonzero(self.label_histogram[client_id]).tolist())

    def containers(self, data: DataContainer) -> dict:
        return {cid: data.subset(idx) for cid, idx in self.assignments.items()}


def validate_plan(plan: DistributionPlan, data: DataContainer) -> None:
    """Raise ``ValueError`` unless indices are valid, disjoint and the histogram agrees."""
    seen = np.zeros(len(data), dtype=bool)
    if sorted(plan.assignments) != list(range(plan.num_clients)):
        raise ValueError("client ids must be 0..K-1")
    if plan.label_histogram.shape != (plan.num_clients, data.num_classes):
        raise ValueError(f"histogram shaped {plan.label_histogram.shape}")
    for cid, idx in plan.assignments.items():
        if idx.size and (idx.min() < 0 or idx.max() >= len(data)):
            raise ValueError(f"client {cid} holds an out-of-range index")
        if np.unique(idx).size != idx.size or seen[idx].any():
            raise ValueError(f"client {cid} shares records with another client")
        seen[idx] = True
        counts = np.bincount(data.labels[idx], minlength=data.num_classes)
        if not np.array_equal(counts, plan.label_histogram[cid]):
            raise ValueError(f"histogram row {cid} disagrees with the assigned labels")


def _label_pools(data: DataContainer, rng) -> list:
    """Per-label index arrays, each independently shuffled."""
    return [rng.permutation(np.flatnonzero(data.labels == c)) for c in range(data.num_classes)]


def distribute_shard(data: DataContainer, shard_size: int, shards_per_client: int, seed: int,
                     per_label: bool = True) -> DistributionPlan:
    """Deal fixed-size shards of label-sorted records, ``shards_per_client`` each.

    With ``per_label`` (default) every shard holds a single label and each
    label's tail shorter than ``shard_size`` is dropped. With ``per_label=False``
    the whole label-sorted array is sliced, so a shard may straddle two labels.
    """
    if shard_size < 1 or shards_per_client < 1:
        raise ValueError("shard_size and shards_per_client must be >= 1")
    order = np.argsort(data.labels, kind="stable")
    if per_label:
        shards = []
        for c in range(data.num_classes):
            members = order[data.labels[order] == c]
            usable = len(members) - len(members) % shard_size
            shards.extend(members[:usable].reshape(-1, shard_size))
    else:
        usable = len(order) - len(order) % shard_size
        shards = list(order[:usable].reshape(-1, shard_size))
    if len(shards) < shards_per_client:
        raise InsufficientDataError(
            f"only {len(shards)} shards of {shard_size} records; each client needs {shards_per_client}"
        )
    rng = np.random.default_rng(seed)
    dealt = rng.permutation(len(shards))
    num_clients = len(shards) // shards_per_client
    assignments = [
        np.concatenate([shards[s] for s in dealt[k * shards_per_client:(k + 1) * shards_per_client]])
        for k in range(num_clients)
    ]
    return DistributionPlan.build(data, assignments, total_shards=len(shards))


def distribute_label(data: DataContainer, labels_per_client: int, records_per_client: int,
                     num_clients: int, seed: int) -> DistributionPlan:
    """Give every client exactly ``labels_per_client`` labels, chosen round-robin.

    Labels are visited in a seeded shuffled cycle so each label is handed out
    as evenly as possible; a client's records are split evenly over its labels.
    """
    C = data.num_classes
    L = labels_per_client
    if not 1 <= L <= C:
        raise ValueError(f"labels_per_client must lie in [1, {C}]")
    if records_per_client < L:
        raise ValueError("records_per_client must be at least labels_per_client")
    if num_clients < 1:
        raise ValueError("num_clients must be >= 1")
    rng = np.random.default_rng(seed)
    cycle = rng.permutation(C)

    base, extra = divmod(records_per_client, L)
    demand = np.zeros(C, dtype=np.int64)
    wants = []
    for k in range(num_clients):
        labels = [int(cycle[(k * L + j) % C]) for j in range(L)]
        counts = [base + (1 if j < extra else 0) for j in range(L)]
        wants.append(list(zip(labels, counts)))
        for c, n in zip(labels, counts):
            demand[c] += n

    supply = data.label_counts()
    short = np.flatnonzero(demand > supply)
    if short.size:
        c = int(short[0])
        raise InsufficientDataError(
            f"label {c}: {demand[c]} records requested but only {supply[c]} available"
        )

    pools = _label_pools(data, rng)
    taken = np.zeros(C, dtype=np.int64)
    assignments = []
    for want in wants:
        chunk = []
        for c, n in want:
            chunk.append(pools[c][taken[c]:taken[c] + n])
            taken[c] += n
        assignments.append(np.concatenate(chunk))
    return DistributionPlan.build(data, assignments)


def distribute_unique(data: DataContainer, records_per_client: Optional[int], seed: int) -> DistributionPlan:
    """One client per label present in ``data``; client k holds only the k-th label."""
    rng = np.random.default_rng(seed)
    present = np.flatnonzero(data.label_counts())
    assignments = []
    for c in present:
        members = np.flatnonzero(data.labels == c)
        if records_per_client is None:
            assignments.append(members)
            continue
        if records_per_client > len(members):
            raise InsufficientDataError(
                f"label {c}: {records_per_client} records requested but only {len(members)} available"
            )
        assignments.append(rng.choice(members, size=records_per_client, replace=False))
    return DistributionPlan.build(data, assignments, client_labels=[int(c) for c in present])


def largest_remainder(proportions, total: int) -> np.ndarray:
    """Integer counts summing to ``total`` closest to ``proportions * total``.

    Floors first, then hands the leftover units to the largest fractional
    parts (ties broken by lower index).
    """
    raw = np.asarray(proportions, dtype=np.float64) * total
    counts = np.floor(raw).astype(np.int64)
    leftover = total - int(counts.sum())
    if leftover > 0:
        frac = raw - counts
        order = np.lexsort((np.arange(frac.size), -frac))
        counts[order[:leftover]] += 1
    return counts


def distribute_dirichlet(data: DataContainer, alpha: float, num_clients: int,
                         records_per_client: int, seed: int) -> DistributionPlan:
    """Per-client label mix drawn from a symmetric Dirichlet(alpha).

    When a label runs dry the missing records come from whichever label has
    the most records left; the number of such reassigned records is reported in
    ``plan.info["reassigned"]``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if num_clients < 1 or records_per_client < 1:
        raise ValueError("num_clients and records_per_client must be >= 1")
    if num_clients * records_per_client > len(data):
        raise InsufficientDataError(
            f"{num_clients} x {records_per_client} records requested but only {len(data)} available"
        )
    C = data.num_classes
    rng = np.random.default_rng(seed)
    pools = _label_pools(data, rng)
    remaining = np.array([len(p) for p in pools], dtype=np.int64)
    taken = np.zeros(C, dtype=np.int64)
    proportions = np.empty((num_clients, C))
    reassigned = 0
    assignments = []
    for k in range(num_clients):
        p = rng.dirichlet(np.full(C, float(alpha)))
        proportions[k] = p
        target = np.minimum(largest_remainder(p, records_per_client), remaining)
        deficit = records_per_client - int(target.sum())
        while deficit > 0:
            spare = remaining - target
            c = int(np.argmax(spare))
            if spare[c] <= 0:
                break
            move = min(deficit, int(spare[c]))
            target[c] += move
            deficit -= move
            reassigned += move
        chunk = [pools[c][taken[c]:taken[c] + target[c]] for c in range(C)]
        taken += target
        remaining -= target
        assignments.append(np.concatenate(chunk))
    if reassigned:
        logger.warning("dirichlet: %d records reassigned after label supply ran out", reassigned)
    return DistributionPlan.build(data, assignments, proportions=proportions, reassigned=reassigned)


def export_heatmap(plan: DistributionPlan) -> str:
    """CSV of the client x label count matrix, header ``label_0..label_{C-1}``."""
    out = io.StringIO()
    C = plan.label_histogram.shape[1]
    out.write(",".join(f"label_{c}" for c in range(C)) + "\n")
    for row in plan.label_histogram:
        out.write(",".join(str(int(v)) for v in row) + "\n")
    return out.getvalue()
