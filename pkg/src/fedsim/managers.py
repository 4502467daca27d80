"""Client registry and training dispatch (sequential or thread-pooled).

Each client trains with a seed derived only from ``(round_seed, client_id)``,
so the order in which workers finish cannot change any result: the parallel
manager is bit-identical to the sequential one.
"""

from __future__ import annotations

import hashlib
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

from . import model as engine
from .data import DataContainer
from .errors import DispatchError, EmptyDatasetError
from .model import ModelSpec, ParamVector, TrainConfig


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from a tuple of ints/strings (independent of PYTHONHASHSEED)."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, str):
            raw = part.encode("utf-8")
            h.update(b"s" + struct.pack("<I", len(raw)) + raw)
        else:
            h.update(b"i" + int(part).to_bytes(16, "little", signed=True))
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class SimClient:
    id: int
    data: DataContainer
    train_cfg: TrainConfig

    def __post_init__(self):
        if len(self.data) == 0:
            raise EmptyDatasetError(f"client {self.id} has no records")


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    params: ParamVector
    sample_count: int
    bytes_payload: int


def train_client(client: SimClient, global_params: ParamVector, spec: ModelSpec,
                 round_seed: int, train_cfg: TrainConfig = None) -> ClientUpdate:
    cfg = train_cfg or client.train_cfg
    params, n = engine.train(global_params, spec, client.data, cfg, derive_seed(round_seed, client.id))
    return ClientUpdate(client.id, params, n, params.nbytes)


class ClientManager:
    """Owns the client registry; subclasses decide how training tasks run."""

    kind = "base"

    def __init__(self, clients: Iterable[SimClient]):
        self.clients = {}
        for c in clients:
            if c.id in self.clients:
                raise ValueError(f"duplicate client id {c.id}")
            self.clients[c.id] = c
        if not self.clients:
            raise ValueError("a client manager needs at least one client")

    def ids(self) -> list:
        return sorted(self.clients)

    def lookup(self, ids: Iterable[int]) -> list:
        return [self.clients[i] for i in ids]

    def dispatch(self, selected: Sequence[SimClient], global_params: ParamVector, spec: ModelSpec,
                 round_seed: int, train_cfg: TrainConfig = None) -> list:
        """Train every selected client from ``global_params``; updates sorted by id.

        ``train_cfg`` overrides each client's own settings (used by the
        clustering warm-up round).
        """
        if not selected:
            raise ValueError("dispatch needs at least one client")
        ids = [c.id for c in selected]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate client in selection")
        results, failures = self._run(selected, global_params, spec, round_seed, train_cfg)
        if failures:
            raise DispatchError(failures)
        return sorted(results, key=lambda u: u.client_id)

    def _run(self, selected, global_params, spec, round_seed, train_cfg):
        raise NotImplementedError

    def close(self):
        pass


class SequentialManager(ClientManager):
    kind = "sequential"

    def _run(self, selected, global_params, spec, round_seed, train_cfg):
        results, failures = [], {}
        for client in selected:
            try:
                results.append(train_client(client, global_params, spec, round_seed, train_cfg))
            except Exception as exc:
                failures[client.id] = exc
        return results, failures


class ParallelManager(ClientManager):
    """Runs client training on a thread pool of ``workers`` threads.

    numpy releases the GIL inside its BLAS kernels, which is where training
    spends its time.
    """

    kind = "parallel"

    def __init__(self, clients: Iterable[SimClient], workers: int = 4):
        super().__init__(clients)
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.workers = workers
        self._pool = None

    def _executor(self):
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="fedsim-client")
        return self._pool

    def _run(self, selected, global_params, spec, round_seed, train_cfg):
        pool = self._executor()
        futures = {
            c.id: pool.submit(train_client, c, global_params, spec, round_seed, train_cfg)
            for c in selected
        }
        results, failures = [], {}
        for cid, fut in futures.items():
            exc = fut.exception()
            if exc is not None:
                failures[cid] = exc
            else:
                results.append(fut.result())
        return results, failures

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __del__(self):
        pool = getattr(self, "_pool", None)
        if pool is not None:
            pool.shutdown(wait=False)


def make_manager(kind: str, clients: Iterable[SimClient], workers: int = 1) -> ClientManager:
    if kind == "sequential":
        return SequentialManager(clients)
    if kind == "parallel":
        return ParallelManager(clients, workers)
    raise ValueError(f"unknown manager kind {kind!r}")
