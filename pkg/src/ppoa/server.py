"""The aggregation server.

The server is handed serialized uploads only: a header (round, sender,
length) and masked residues modulo 2**64.  It never sees plain updates,
group labels or masks, and has nothing to import that would give it access
to them.  Its job is to add the uploads of one round and broadcast the sum.
"""

from __future__ import annotations

import numpy as np

from .secagg import AggregationError, check_roster, decode_upload


class AggregationServer:
    def __init__(self):
        self._round = None
        self._roster = ()
        self._length = 0
        self._acc = None
        self._senders = []

    def open_round(self, round_id: int, roster, length: int) -> None:
        if self._round is not None:
            raise AggregationError(f"round {self._round} is still open")
        self._round = int(round_id)
        self._roster = tuple(roster)
        self._length = int(length)
        self._acc = np.zeros(self._length, dtype=np.uint64)
        self._senders = []

    def receive(self, blob: bytes) -> None:
        if self._round is None:
            raise AggregationError("no round is open")
        round_id, sender, residues = decode_upload(blob)
        if round_id != self._round:
            raise AggregationError(f"upload for round {round_id} during round {self._round}")
        if residues.size != self._length:
            raise AggregationError(f"upload of length {residues.size}, expected {self._length}")
        self._senders.append(sender)
        self._acc += residues

    def close_round(self) -> np.ndarray:
        """Check that each roster member sent exactly once and return the
        modular sum that is broadcast to every client."""
        if self._round is None:
            raise AggregationError("no round is open")
        try:
            check_roster(self._senders, self._roster)
            return self._acc
        finally:
            self._round = None
            self._acc = None
