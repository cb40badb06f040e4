"""Shared primitives: rounds and epochs, logs, membership sets and wire messages.

Everything here is an immutable value.  Byte encodings are little-endian and
length-prefixed so that hashes and signatures are stable across runs.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from typing import Iterable, Optional, Union

from .fscrypto import FSSignature

NodeId = int
MembershipSet = frozenset


def epoch_of(round_: int, epoch_len: int) -> int:
    if epoch_len <= 0:
        raise ValueError("epoch length must be positive")
    if round_ < 0:
        raise ValueError("negative round")
    return round_ // epoch_len


def epoch_bounds(epoch: int, epoch_len: int) -> tuple[int, int]:
    """First and last round of ``epoch``."""
    return epoch * epoch_len, epoch * epoch_len + epoch_len - 1


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


# --------------------------------------------------------------------------
# log entries


@dataclass(frozen=True)
class Payload:
    data: bytes


@dataclass(frozen=True)
class MembershipChange:
    members: frozenset

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset(self.members))


@dataclass(frozen=True)
class LogEntry:
    value: Union[Payload, MembershipChange]
    epoch: int  # epoch in which the entry was decided


Log = tuple  # tuple[LogEntry, ...]


def compatible(a: Log, b: Log) -> bool:
    """True iff one log is a prefix of the other."""
    n = min(len(a), len(b))
    return tuple(a[:n]) == tuple(b[:n])


def conflicting(a: Log, b: Log) -> bool:
    return not compatible(a, b)


def is_prefix(a: Log, b: Log) -> bool:
    return len(a) <= len(b) and tuple(b[: len(a)]) == tuple(a)


def truncate_to_epoch(log: Log, epoch: float) -> Log:
    """Longest prefix of ``log`` whose entries were decided at or before ``epoch``.

    ``epoch`` may be ``math.inf``.
    """
    out = []
    for entry in log:
        if entry.epoch > epoch:
            break
        out.append(entry)
    return tuple(out)


def latest_membership(log: Log, default: frozenset) -> frozenset:
    for entry in reversed(log):
        if isinstance(entry.value, MembershipChange):
            return entry.value.members
    return frozenset(default)


# --------------------------------------------------------------------------
# canonical encoding

_u8 = struct.Struct("<B")
_u32 = struct.Struct("<I")
_u64 = struct.Struct("<Q")

TAG_PAYLOAD = 0
TAG_MEMBERSHIP = 1


def _blob(data: bytes) -> bytes:
    return _u32.pack(len(data)) + data


def encode_members(members: Iterable[int]) -> bytes:
    ids = sorted(members)
    return _u32.pack(len(ids)) + b"".join(_u64.pack(i) for i in ids)


def encode_entry(entry: LogEntry) -> bytes:
    if isinstance(entry.value, Payload):
        body = _u8.pack(TAG_PAYLOAD) + _blob(entry.value.data)
    else:
        body = _u8.pack(TAG_MEMBERSHIP) + encode_members(entry.value.members)
    return _u64.pack(entry.epoch) + body


def encode_log(log: Log) -> bytes:
    return _u32.pack(len(log)) + b"".join(encode_entry(e) for e in log)


def log_hash(log: Log) -> bytes:
    return digest(encode_log(log))


class DecodeError(ValueError):
    pass


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError("truncated input")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return _u8.unpack(self.take(1))[0]

    def u32(self) -> int:
        return _u32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _u64.unpack(self.take(8))[0]

    def blob(self) -> bytes:
        return self.take(self.u32())

    def done(self):
        if self.pos != len(self.data):
            raise DecodeError("trailing bytes")


def _read_members(r: _Reader) -> frozenset:
    return frozenset(r.u64() for _ in range(r.u32()))


def _read_log(r: _Reader) -> Log:
    entries = []
    for _ in range(r.u32()):
        epoch = r.u64()
        tag = r.u8()
        if tag == TAG_PAYLOAD:
            value = Payload(r.blob())
        elif tag == TAG_MEMBERSHIP:
            value = MembershipChange(_read_members(r))
        else:
            raise DecodeError(f"unknown entry tag {tag}")
        entries.append(LogEntry(value, epoch))
    return tuple(entries)


def decode_log(data: bytes) -> Log:
    r = _Reader(data)
    log = _read_log(r)
    r.done()
    return log


# --------------------------------------------------------------------------
# message bodies


@dataclass(frozen=True)
class LVote:
    """Certification vote over an epoch-end decided log."""

    voter: int
    log: Log
    sig: Optional[FSSignature] = None

    @property
    def period(self) -> int:
        return self.sig.period if self.sig is not None else -1

    def signing_bytes(self) -> bytes:
        return b"LVOTE" + _u64.pack(self.voter) + encode_log(self.log)


@dataclass(frozen=True)
class MVote:
    """Vote for the current membership set, cast every round."""

    voter: int
    round: int
    members: frozenset
    sig: Optional[FSSignature] = None

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset(self.members))

    def signing_bytes(self) -> bytes:
        return b"MVOTE" + _u64.pack(self.voter) + _u64.pack(self.round) + encode_members(self.members)


@dataclass(frozen=True)
class Tx:
    """Sign-off transaction: ``sender`` hands its seat to ``replacement``."""

    sender: int
    replacement: int
    epoch: int
    sig: Optional[FSSignature] = None

    def signing_bytes(self) -> bytes:
        return b"TX" + _u64.pack(self.sender) + _u64.pack(self.replacement) + _u64.pack(self.epoch)


@dataclass(frozen=True)
class AbInternal:
    data: bytes


Body = Union[LVote, MVote, Tx, AbInternal]

_BODY_TAGS = {LVote: 1, MVote: 2, Tx: 3, AbInternal: 4}


def _encode_sig(sig: Optional[FSSignature]) -> bytes:
    return _blob(b"" if sig is None else sig.to_bytes())


def _decode_sig(raw: bytes) -> Optional[FSSignature]:
    return FSSignature.from_bytes(raw) if raw else None


def encode_body(body: Body) -> bytes:
    tag = _u8.pack(_BODY_TAGS[type(body)])
    if isinstance(body, LVote):
        return tag + _u64.pack(body.voter) + encode_log(body.log) + _encode_sig(body.sig)
    if isinstance(body, MVote):
        return (
            tag
            + _u64.pack(body.voter)
            + _u64.pack(body.round)
            + encode_members(body.members)
            + _encode_sig(body.sig)
        )
    if isinstance(body, Tx):
        return (
            tag
            + _u64.pack(body.sender)
            + _u64.pack(body.replacement)
            + _u64.pack(body.epoch)
            + _encode_sig(body.sig)
        )
    return tag + _blob(body.data)


def _read_body(r: _Reader) -> Body:
    tag = r.u8()
    if tag == 1:
        voter = r.u64()
        log = _read_log(r)
        return LVote(voter, log, _decode_sig(r.blob()))
    if tag == 2:
        voter, rnd = r.u64(), r.u64()
        members = _read_members(r)
        return MVote(voter, rnd, members, _decode_sig(r.blob()))
    if tag == 3:
        sender, repl, epoch = r.u64(), r.u64(), r.u64()
        return Tx(sender, repl, epoch, _decode_sig(r.blob()))
    if tag == 4:
        return AbInternal(r.blob())
    raise DecodeError(f"unknown body tag {tag}")


def decode_body(data: bytes) -> Body:
    r = _Reader(data)
    body = _read_body(r)
    r.done()
    return body


@dataclass(frozen=True)
class Envelope:
    sender: int
    sent_round: int
    body: Body

    def wire_bytes(self) -> bytes:
        """What a recipient can observe: sender field and body.

        The send round is engine bookkeeping; recipients have no authenticated
        way to learn it, so it is left out.
        """
        return _u64.pack(self.sender) + encode_body(self.body)

    def to_bytes(self) -> bytes:
        return _u64.pack(self.sent_round) + self.wire_bytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Envelope":
        r = _Reader(data)
        sent_round = r.u64()
        sender = r.u64()
        body = _read_body(r)
        r.done()
        return cls(sender, sent_round, body)


def candidate_key(log: Log) -> tuple:
    """Sort key for tie-breaking between candidate logs: smallest hash wins."""
    return (log_hash(log),)


INF_EPOCH = math.inf
