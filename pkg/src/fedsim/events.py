"""Workflow events and the synchronous bus that delivers them to subscribers."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

from .model import Metrics, ParamVector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Event:
    pass


@dataclass(frozen=True)
class FederationStarted(Event):
    config_digest: str
    round: int = 0


@dataclass(frozen=True)
class RoundStarted(Event):
    round: int


@dataclass(frozen=True)
class TrainersSelected(Event):
    round: int
    ids: tuple


@dataclass(frozen=True)
class ClientTrained(Event):
    round: int
    client_id: int
    sample_count: int
    bytes_payload: int
    # read-only; carried so analysis subscribers can inspect client weights
    params: Optional[ParamVector] = None


@dataclass(frozen=True)
class UpdatesAggregated(Event):
    round: int


@dataclass(frozen=True)
class RoundFinished(Event):
    round: int
    metrics: Metrics
    cumulative_bytes: int


@dataclass(frozen=True)
class FederationFinished(Event):
    total_rounds: int
    final_metrics: Optional[Metrics]
    outcome: str

    @property
    def round(self) -> int:
        return self.total_rounds


class Subscriber:
    """Base class for bus subscribers. Override :meth:`on_event`.

    ``ctx`` is a read-only :class:`~fedsim.core.ContextView` of the run.
    """

    def on_event(self, event: Event, ctx) -> None:
        pass

    def close(self) -> None:
        pass


class EventBus:
    def __init__(self, subscribers=()):
        self._subscribers = []
        self._disabled = set()
        self._started = False
        for sub in subscribers:
            self.register(sub)

    @property
    def subscribers(self) -> list:
        return list(self._subscribers)

    def register(self, subscriber) -> None:
        if self._started:
            raise RuntimeError("subscribers must be registered before the federation starts")
        if not callable(getattr(subscriber, "on_event", None)):
            raise TypeError(f"{subscriber!r} has no on_event method")
        self._subscribers.append(subscriber)

    def is_active(self, subscriber) -> bool:
        return id(subscriber) not in self._disabled

    def broadcast(self, event: Event, ctx=None) -> None:
        """Deliver ``event`` to every live subscriber, in registration order.

        A subscriber that raises is logged and skipped for the rest of the run.
        """
        if isinstance(event, FederationStarted):
            self._started = True
        for sub in self._subscribers:
            if id(sub) in self._disabled:
                continue
            try:
                sub.on_event(event, ctx)
            except Exception:
                logger.exception("subscriber %s failed on %s; disabling it",
                                 type(sub).__name__, type(event).__name__)
                self._disabled.add(id(sub))

    def close(self) -> None:
        for sub in self._subscribers:
            close = getattr(sub, "close", None)
            if close is None:
                continue
            try:
                close()
            except Exception:
                logger.exception("subscriber %s failed to close", type(sub).__name__)
