"""Weight-divergence analysis over the client models of selected rounds."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from ..events import ClientTrained, Subscriber, UpdatesAggregated
from ..pca import pca

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DivergenceResult:
    round: int
    client_ids: tuple
    projected: np.ndarray
    explained_variance: np.ndarray
    mean_pairwise_distance: float


def analyze(round: int, client_params, d: int = 2, client_ids=None) -> DivergenceResult:
    """PCA projection of the clients' flattened weights plus their mean pairwise distance.

    The distance is Euclidean and taken on the raw weights, not the projection.
    """
    weights = np.stack([np.asarray(getattr(p, "values", p), dtype=np.float64) for p in client_params])
    k, p = weights.shape
    if k < 2:
        raise ValueError("divergence analysis needs at least two clients")
    if not 1 <= d <= min(k, p):
        raise ValueError(f"d={d} must lie in [1, {min(k, p)}]")
    result = pca(weights, d)
    ids = tuple(client_ids) if client_ids is not None else tuple(range(k))
    return DivergenceResult(round, ids, result.projected, result.explained_variance,
                            float(pdist(weights).mean()))


class DivergenceAnalyzer(Subscriber):
    """Runs :func:`analyze` on the client updates of chosen rounds.

    A round is analysed if it is listed in ``rounds`` or, with ``every``, if
    it is round 1, 1 + every, 1 + 2*every, ... With ``out_dir`` each analysis
    writes ``divergence_round_<r>.csv`` (client_id, c1..cd) and appends to
    ``divergence_summary.csv`` (round, mean_pairwise_distance).
    """

    def __init__(self, d: int = 2, every: int = None, rounds=None, out_dir=None):
        if every is None and rounds is None:
            every = 1
        self.d = d
        self.every = every
        self.rounds = set(rounds or ())
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.results = {}
        self._pending = {}

    def wants(self, r: int) -> bool:
        return r in self.rounds or (self.every is not None and (r - 1) % self.every == 0)

    def on_event(self, event, ctx):
        if isinstance(event, ClientTrained) and self.wants(event.round):
            self._pending[event.client_id] = event.params
        elif isinstance(event, UpdatesAggregated) and self._pending:
            ids = sorted(self._pending)
            params = [self._pending[i] for i in ids]
            self._pending = {}
            if len(ids) < 2:
                return
            d = min(self.d, len(ids), len(params[0]))
            res = analyze(event.round, params, d, ids)
            self.results[event.round] = res
            if self.out_dir is not None:
                self._dump(res)

    def _dump(self, res: DivergenceResult):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with open(self.out_dir / f"divergence_round_{res.round}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["client_id"] + [f"c{i + 1}" for i in range(res.projected.shape[1])])
            for cid, row in zip(res.client_ids, res.projected):
                w.writerow([cid] + [repr(float(v)) for v in row])
        summary = self.out_dir / "divergence_summary.csv"
        fresh = not summary.exists()
        with open(summary, "a", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            if fresh:
                w.writerow(["round", "mean_pairwise_distance"])
            w.writerow([res.round, repr(res.mean_pairwise_distance)])
