"""The federated round loop and its state.

One round: select clients, hand them the current global weights, collect
their updates, average them into the new global model, evaluate it on the
held-out test set and append a :class:`RoundRecord`. Every step is announced
on the event bus.
"""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import model as engine
from .errors import FederationError, ShapeError
from .events import (
    ClientTrained,
    EventBus,
    FederationFinished,
    FederationStarted,
    RoundFinished,
    RoundStarted,
    TrainersSelected,
    UpdatesAggregated,
)
from .managers import ClientUpdate, derive_seed
from .model import Metrics, ModelSpec, ParamVector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StopCriteria:
    max_rounds: int
    target_accuracy: Optional[float] = None
    target_loss: Optional[float] = None

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.target_accuracy is not None and not 0.0 <= self.target_accuracy <= 1.0:
            raise ValueError("target_accuracy must lie in [0, 1]")
        if self.target_loss is not None and self.target_loss < 0:
            raise ValueError("target_loss must be non-negative")


@dataclass(frozen=True)
class RoundRecord:
    round: int
    selected_ids: tuple
    global_metrics: Metrics
    bytes_up: int
    bytes_down: int
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "selected_ids": list(self.selected_ids),
            "metrics": self.global_metrics.to_dict(),
            "bytes_up": self.bytes_up,
            "bytes_down": self.bytes_down,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RoundRecord":
        return cls(
            round=int(raw["round"]),
            selected_ids=tuple(int(i) for i in raw["selected_ids"]),
            global_metrics=Metrics(**raw["metrics"]),
            bytes_up=int(raw["bytes_up"]),
            bytes_down=int(raw["bytes_down"]),
            wall_time=float(raw.get("wall_time", 0.0)),
        )


@dataclass
class FLContext:
    """Mutable run state owned by the kernel. ``round`` counts finished rounds."""

    round: int
    global_params: ParamVector
    history: list
    rng: np.random.Generator
    config_digest: str = ""
    selector_state: dict = field(default_factory=dict)

    @property
    def rng_state(self) -> dict:
        return self.rng.bit_generator.state

    @property
    def cumulative_bytes(self) -> int:
        return sum(r.bytes_up + r.bytes_down for r in self.history)

    @property
    def last_metrics(self) -> Optional[Metrics]:
        return self.history[-1].global_metrics if self.history else None

    def view(self) -> "ContextView":
        return ContextView(self)


class ContextView:
    """Read-only window onto an :class:`FLContext`, handed to subscribers."""

    __slots__ = ("_ctx",)

    def __init__(self, ctx: FLContext):
        object.__setattr__(self, "_ctx", ctx)

    def __setattr__(self, name, value):
        raise AttributeError("ContextView is read-only")

    @property
    def round(self) -> int:
        return self._ctx.round

    @property
    def global_params(self) -> ParamVector:
        return self._ctx.global_params

    @property
    def history(self) -> tuple:
        return tuple(self._ctx.history)

    @property
    def rng_state(self) -> dict:
        return self._ctx.rng_state

    @property
    def config_digest(self) -> str:
        return self._ctx.config_digest

    @property
    def selector_state(self) -> dict:
        return copy.deepcopy(self._ctx.selector_state)

    @property
    def cumulative_bytes(self) -> int:
        return self._ctx.cumulative_bytes

    def snapshot(self) -> FLContext:
        """Independent copy of the underlying context (used for checkpoints)."""
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = self._ctx.rng_state
        return FLContext(self.round, self.global_params, list(self._ctx.history), rng,
                         self.config_digest, self.selector_state)


def aggregate_fedavg(updates) -> ParamVector:
    """Sample-weighted coordinate-wise mean of client parameters.

    ``updates`` holds :class:`ClientUpdate` objects (summed in ascending
    client id order, so input order never matters) or ``(params, count)``
    pairs (summed in the given order).
    """
    updates = list(updates)
    if not updates:
        raise ValueError("cannot aggregate an empty list of updates")
    if all(isinstance(u, ClientUpdate) for u in updates):
        pairs = [(u.params, u.sample_count) for u in sorted(updates, key=lambda u: u.client_id)]
    else:
        pairs = [(p, n) for p, n in updates]
    shape = pairs[0][0].shape
    for p, n in pairs:
        if p.shape != shape:
            raise ShapeError(f"update shaped {p.shape}, expected {shape}")
        if n < 1:
            raise ValueError("sample counts must be >= 1")
    total = float(sum(n for _, n in pairs))
    acc = np.zeros(len(pairs[0][0]))
    for p, n in pairs:
        acc += (n / total) * p.values
    # keep rounding from pushing a coordinate outside the updates' range
    stacked = np.stack([p.values for p, _ in pairs])
    np.clip(acc, stacked.min(axis=0), stacked.max(axis=0), out=acc)
    return ParamVector(acc, shape)


def check_stop(ctx, stop: StopCriteria) -> bool:
    if ctx.round >= stop.max_rounds:
        return True
    if not ctx.history:
        return False
    last = ctx.history[-1].global_metrics
    if stop.target_accuracy is not None and last.accuracy >= stop.target_accuracy:
        return True
    if stop.target_loss is not None and last.loss <= stop.target_loss:
        return True
    return False


def new_context(spec: ModelSpec, seed: int, config_digest: str = "") -> FLContext:
    params = engine.init_params(spec, derive_seed(seed, "init"))
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "rounds")))
    return FLContext(0, params, [], rng, config_digest)


class Federation:
    """Wires a model, a client manager, a selector and subscribers into a run."""

    def __init__(self, spec: ModelSpec, manager, test_data, selector, stop: StopCriteria,
                 subscribers=(), seed: int = 0, aggregator: Callable = aggregate_fedavg,
                 config_digest: str = ""):
        if len(test_data) == 0:
            raise ValueError("test data is empty")
        self.spec = spec
        self.manager = manager
        self.test_data = test_data
        self.selector = selector
        self.stop = stop
        self.bus = subscribers if isinstance(subscribers, EventBus) else EventBus(subscribers)
        self.seed = seed
        self.aggregator = aggregator
        self.config_digest = config_digest

    def initialize(self) -> FLContext:
        ctx = new_context(self.spec, self.seed, self.config_digest)
        # warm-up round for selectors that need it; not counted in history
        self.selector.initialize(self.manager, self.spec, ctx.global_params, self.seed)
        ctx.selector_state = self.selector.state_dict()
        return ctx

    def run(self, ctx: FLContext = None, until_round: int = None) -> FLContext:
        """Run rounds until the stop criteria fire (or ``until_round`` is reached).

        Passing a restored ``ctx`` continues that run; ``until_round`` is for
        deliberately interrupting a run part-way.
        """
        if ctx is None:
            ctx = self.initialize()
        else:
            if ctx.global_params.shape != self.spec.layer_shapes:
                raise ShapeError("context parameters do not match the model")
            self.selector.load_state_dict(ctx.selector_state)
        view = ctx.view()
        bus = self.bus
        bus.broadcast(FederationStarted(ctx.config_digest, ctx.round), view)
        outcome = "completed"
        try:
            while not check_stop(ctx, self.stop):
                if until_round is not None and ctx.round >= until_round:
                    outcome = "interrupted"
                    break
                self._round(ctx, view)
        except Exception as exc:
            bus.broadcast(FederationFinished(ctx.round, ctx.last_metrics, f"error: {exc}"), view)
            bus.close()
            raise FederationError(f"round {ctx.round + 1} aborted: {exc}") from exc
        bus.broadcast(FederationFinished(ctx.round, ctx.last_metrics, outcome), view)
        bus.close()
        return ctx

    def _round(self, ctx: FLContext, view) -> None:
        started = time.perf_counter()
        r = ctx.round + 1
        bus = self.bus
        bus.broadcast(RoundStarted(r), view)

        ids = [int(i) for i in self.selector.select(self.manager.ids(), ctx.rng)]
        if not ids or len(set(ids)) != len(ids):
            raise ValueError(f"selector returned an invalid selection {ids}")
        bus.broadcast(TrainersSelected(r, tuple(ids)), view)

        round_seed = int(ctx.rng.integers(2**63))
        snapshot = ctx.global_params
        updates = self.manager.dispatch(self.manager.lookup(ids), snapshot, self.spec, round_seed)
        for u in updates:
            bus.broadcast(ClientTrained(r, u.client_id, u.sample_count, u.bytes_payload, u.params), view)

        new_params = self.aggregator(updates)
        if new_params.shape != snapshot.shape:
            raise ShapeError("aggregator changed the parameter shape")
        ctx.global_params = new_params
        bus.broadcast(UpdatesAggregated(r), view)

        metrics = engine.evaluate(new_params, self.spec, self.test_data)
        record = RoundRecord(
            round=r,
            selected_ids=tuple(ids),
            global_metrics=metrics,
            bytes_up=sum(u.bytes_payload for u in updates),
            bytes_down=len(ids) * snapshot.nbytes,
            wall_time=time.perf_counter() - started,
        )
        ctx.history.append(record)
        ctx.round = r
        bus.broadcast(RoundFinished(r, metrics, ctx.cumulative_bytes), view)


def run_federated(spec: ModelSpec, manager, test_data, selector, stop: StopCriteria,
                  subscribers=(), seed: int = 0, aggregator: Callable = aggregate_fedavg,
                  config_digest: str = "", context: FLContext = None,
                  until_round: int = None) -> FLContext:
    fed = Federation(spec, manager, test_data, selector, stop, subscribers, seed,
                     aggregator, config_digest)
    return fed.run(context, until_round=until_round)
