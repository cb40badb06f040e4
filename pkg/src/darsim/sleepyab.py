"""Idealized per-epoch dynamically available atomic broadcast.

The gadgets sit on top of an atomic broadcast that is assumed safe and live
inside one epoch.  This module is that assumption written down as an object:
inputs are decided exactly ``latency`` rounds after submission, every awake
node reads the same committed prefix, and no new input is accepted during the
last ``latency`` rounds so the epoch ends with one common log.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .core import LogEntry, MembershipChange, Payload, latest_membership


class RejectedInput(ValueError):
    pass


class Unavailable(LookupError):
    pass


@dataclass
class _Pending:
    decide_round: int
    entry: LogEntry


class EpochAbInstance:
    def __init__(self, epoch: int, members, epoch_len: int, latency: int = 2, history=()):
        if latency < 0:
            raise ValueError("latency must be non-negative")
        if latency >= epoch_len:
            raise ValueError(f"latency {latency} leaves no input window in epochs of {epoch_len} rounds")
        self.epoch = epoch
        self.members = frozenset(members)
        self.epoch_len = epoch_len
        self.latency = latency
        self.history = tuple(history)  # decided log of earlier epochs
        self.first_round = epoch * epoch_len
        self.last_round = self.first_round + epoch_len - 1
        self.pending: list = []
        self.committed: list = []  # (decide_round, entry)
        self.awake: frozenset = frozenset()
        self.rejected = 0

    # -- inputs ------------------------------------------------------------

    def window_open(self, round_: int) -> bool:
        return self.first_round <= round_ <= self.last_round - self.latency

    def submit(self, node: Optional[int], value, round_: int, adversary: bool = False) -> None:
        """Queue ``value`` (bytes, ``Payload`` or ``MembershipChange``).

        Membership proposals only come through the adversary channel and must
        keep the membership size.
        """
        if not self.window_open(round_):
            self.rejected += 1
            raise RejectedInput(f"round {round_} is outside the input window of epoch {self.epoch}")
        if isinstance(value, (bytes, bytearray)):
            value = Payload(bytes(value))
        if isinstance(value, MembershipChange):
            if not adversary:
                raise RejectedInput("membership proposals come from the adversary channel only")
            if len(value.members) != len(self.members):
                self.rejected += 1
                raise RejectedInput(
                    f"proposal of size {len(value.members)} for membership of size {len(self.members)}"
                )
        elif not isinstance(value, Payload):
            raise TypeError(f"cannot submit {type(value).__name__}")
        self.pending.append(_Pending(round_ + self.latency, LogEntry(value, self.epoch)))

    def advance(self, round_: int) -> None:
        """Commit everything due by ``round_``, in submission order."""
        due = [p for p in self.pending if p.decide_round <= round_]
        self.pending = [p for p in self.pending if p.decide_round > round_]
        for p in due:
            self.committed.append((p.decide_round, p.entry))

    def set_awake(self, nodes) -> None:
        self.awake = frozenset(nodes)

    # -- outputs -----------------------------------------------------------

    def epoch_log(self, round_: int) -> tuple:
        return tuple(e for r, e in self.committed if r <= round_)

    def decided_log(self, node: int, round_: int) -> tuple:
        if node not in self.awake:
            raise Unavailable(f"node {node} is not awake")
        return self.history + self.epoch_log(round_)

    def final_log(self) -> tuple:
        if self.pending:
            raise RuntimeError("inputs still pending at epoch end")
        return self.history + self.epoch_log(self.last_round)

    def epoch_handoff(self, default=None) -> frozenset:
        """Membership decided for the next epoch."""
        return latest_membership(self.final_log(), self.members if default is None else default)
