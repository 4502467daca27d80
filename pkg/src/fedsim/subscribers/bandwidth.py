from __future__ import annotations

import logging

from ..events import (
    ClientTrained,
    FederationStarted,
    RoundFinished,
    RoundStarted,
    Subscriber,
    TrainersSelected,
)

logger = logging.getLogger(__name__)


class BandwidthAccountant(Subscriber):
    """Keeps its own ledger of bytes moved each round.

    Download is the global model sent to every selected client, upload is
    the sum of the clients' reported payloads. The running total is checked
    against the kernel's figure on every ``RoundFinished``.
    """

    def __init__(self):
        self.per_round = []
        self.total = 0
        self._down = 0
        self._up = 0

    def on_event(self, event, ctx):
        if isinstance(event, FederationStarted):
            # a resumed run starts from the bytes already spent
            self.total = ctx.cumulative_bytes if ctx is not None else 0
        elif isinstance(event, RoundStarted):
            self._down = self._up = 0
        elif isinstance(event, TrainersSelected):
            self._down = len(event.ids) * ctx.global_params.nbytes
        elif isinstance(event, ClientTrained):
            self._up += event.bytes_payload
        elif isinstance(event, RoundFinished):
            self.total += self._up + self._down
            self.per_round.append((event.round, self._up, self._down, self.total))
            if self.total != event.cumulative_bytes:
                logger.warning("bandwidth ledger %d disagrees with kernel total %d at round %d",
                               self.total, event.cumulative_bytes, event.round)
