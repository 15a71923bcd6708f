"""Exact byte accounting for every frame that crosses the simulated network."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .wire import Message, decode_message, encode_message

UP = "up"
DOWN = "down"


class LedgerEntry(NamedTuple):
    round: int
    direction: str
    client_id: int
    bytes: int


@dataclass
class CommLedger:
    entries: list[LedgerEntry] = field(default_factory=list)

    def record(self, round_: int, direction: str, client_id: int, nbytes: int) -> None:
        if direction not in (UP, DOWN):
            raise ValueError(f"direction must be {UP!r} or {DOWN!r}")
        self.entries.append(LedgerEntry(round_, direction, client_id, nbytes))

    def total(self, direction: Optional[str] = None, round_: Optional[int] = None, client_id: Optional[int] = None) -> int:
        return sum(
            e.bytes
            for e in self.entries
            if (direction is None or e.direction == direction)
            and (round_ is None or e.round == round_)
            and (client_id is None or e.client_id == client_id)
        )

    @property
    def uplink_bytes(self) -> int:
        return self.total(UP)

    @property
    def downlink_bytes(self) -> int:
        return self.total(DOWN)

    def count(self, direction: Optional[str] = None) -> int:
        return sum(1 for e in self.entries if direction is None or e.direction == direction)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "direction", "client_id", "bytes"])
            writer.writerows(self.entries)


class Channel:
    """Loopback transport: encodes, records the frame length, and decodes.

    Every message a runner exchanges goes through :meth:`send`, so ledger
    totals are by construction the lengths of frames actually produced. With
    ``keep_frames`` the raw frames are retained for independent recounts.
    """

    def __init__(self, feature_dim: int | None = None, keep_frames: bool = False):
        self.feature_dim = feature_dim
        self.ledger = CommLedger()
        self.keep_frames = keep_frames
        self.frames: list[bytes] = []

    def send(self, message: Message, direction: str, client_id: int) -> Message:
        frame = encode_message(message)
        self.ledger.record(message.round, direction, client_id, len(frame))
        if self.keep_frames:
            self.frames.append(frame)
        return decode_message(frame, self.feature_dim)
