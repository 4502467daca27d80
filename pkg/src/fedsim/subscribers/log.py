from __future__ import annotations

import logging
import time

from ..events import FederationFinished, FederationStarted, RoundFinished, Subscriber

logger = logging.getLogger("fedsim.run")


class LoggingSubscriber(Subscriber):
    """Logs round summaries and an estimate of the remaining time."""

    def __init__(self, max_rounds: int = None, every: int = 1, log=logger):
        self.max_rounds = max_rounds
        self.every = max(1, every)
        self.log = log
        self._t0 = None
        self._first_round = 0

    def on_event(self, event, ctx):
        if isinstance(event, FederationStarted):
            self._t0 = time.perf_counter()
            self._first_round = event.round
            self.log.info("federation started at round %d (config %s)", event.round, event.config_digest[:12])
        elif isinstance(event, RoundFinished):
            if event.round % self.every:
                return
            m = event.metrics
            msg = "round %d: acc=%.4f loss=%.4f bytes=%d"
            args = [event.round, m.accuracy, m.loss, event.cumulative_bytes]
            done = event.round - self._first_round
            if self.max_rounds and done > 0:
                per_round = (time.perf_counter() - self._t0) / done
                msg += " eta=%.1fs"
                args.append(per_round * (self.max_rounds - event.round))
            self.log.info(msg, *args)
        elif isinstance(event, FederationFinished):
            self.log.info("federation finished after %d rounds: %s", event.total_rounds, event.outcome)
