"""Bootstrapping gadget without sign-off.

Awake nodes certify the decided log at every epoch end with a forward-secure
LVOTE and then evolve their key.  A waking node replays membership from its
last known epoch: for each missed epoch it takes every member's oldest vote
at or after that epoch, follows the log prefix with the most votes, and reads
the next membership out of it.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from . import fscrypto
from .core import (
    Envelope,
    Log,
    LVote,
    latest_membership,
    log_hash,
    truncate_to_epoch,
)


class NoQuorum(RuntimeError):
    """No valid vote for some past epoch; the boot has to be retried later."""

    def __init__(self, epoch: int):
        super().__init__(f"no valid votes for epoch {epoch}")
        self.epoch = epoch


class InvariantFault(AssertionError):
    pass


def sign_lvote(key: fscrypto.FSSecretKey, voter: int, log: Log) -> LVote:
    unsigned = LVote(voter, tuple(log))
    return LVote(voter, tuple(log), key.sign(unsigned.signing_bytes()))


def lvote_valid(vote: LVote, directory: Mapping) -> bool:
    if vote.sig is None or vote.sig.signer != vote.voter or vote.voter not in directory:
        return False
    return fscrypto.verify_cached(directory[vote.voter], vote.signing_bytes(), vote.sig)


class VoteBook:
    """Valid LVOTEs from an inbox, indexed by voter; verified lazily."""

    def __init__(self, messages: Iterable, directory: Mapping):
        self.directory = directory
        self._raw = defaultdict(set)
        for m in messages:
            body = m.body if isinstance(m, Envelope) else m
            if isinstance(body, LVote):
                self._raw[body.voter].add(body)
        self._checked: dict = {}

    def votes(self, voter: int) -> list:
        if voter not in self._checked:
            ok = [v for v in self._raw.get(voter, ()) if lvote_valid(v, self.directory)]
            self._checked[voter] = sorted(ok, key=lambda v: (v.period, log_hash(v.log)))
        return self._checked[voter]

    def voters(self):
        return sorted(self._raw)


@dataclass
class OldestVotes:
    chosen: dict  # voter -> LVote
    examined: int
    equivocators: frozenset


def oldest_votes(book, epoch: int, members: Iterable[int]) -> OldestVotes:
    """Each member's earliest vote at period >= ``epoch``.

    A member with two distinct votes at that earliest period contributes nothing.
    ``examined`` counts the votes found at each member's earliest period.
    ``book`` is a ``VoteBook`` or a mapping voter -> iterable of valid votes.
    """
    chosen, examined, equivocators = {}, 0, set()
    for voter in sorted(members):
        votes = book.votes(voter) if isinstance(book, VoteBook) else list(book.get(voter, ()))
        eligible = [v for v in votes if v.period >= epoch]
        if not eligible:
            continue
        low = min(v.period for v in eligible)
        first = {v for v in eligible if v.period == low}
        examined += len(first)
        if len(first) > 1:
            equivocators.add(voter)
            continue
        chosen[voter] = first.pop()
    return OldestVotes(chosen, examined, frozenset(equivocators))


def tally_logs(votes: Mapping[int, LVote], epoch: int) -> dict:
    """Candidate prefix (decided up to ``epoch``) -> number of votes."""
    counts: dict = defaultdict(int)
    for vote in votes.values():
        counts[truncate_to_epoch(vote.log, epoch)] += 1
    return dict(counts)


def pick_heaviest(counts: Mapping) -> Log:
    return min(counts, key=lambda cand: (-counts[cand], log_hash(cand)))


def heaviest_log(votes: Mapping[int, LVote], epoch: int) -> Log:
    if not votes:
        raise NoQuorum(epoch)
    return pick_heaviest(tally_logs(votes, epoch))


@dataclass
class EpochTally:
    epoch: int
    members: frozenset
    counts: dict  # candidate log -> votes
    winner: Log


@dataclass
class BootResult:
    node: int
    epoch: int
    membership: frozenset
    log: Optional[Log]
    tallies: list = field(default_factory=list)
    examined: int = 0
    fallbacks: list = field(default_factory=list)
    estimates: list = field(default_factory=list)
    mvote_counts: dict = field(default_factory=dict)


@dataclass
class RoundContext:
    round: int
    epoch: int
    epoch_len: int
    decided: Log
    new_messages: list
    directory: Mapping
    sign_off_to: Optional[int] = None

    @property
    def epoch_end(self) -> bool:
        return self.round % self.epoch_len == self.epoch_len - 1


class DarNode:
    """Per-node gadget state for an honest node."""

    def __init__(self, node: int, key: fscrypto.FSSecretKey, genesis: Iterable[int]):
        self.node = node
        self.key = key
        self.genesis = frozenset(genesis)
        self.last_epoch = 0
        self.membership = self.genesis
        self.log: Log = ()

    # -- awake participation ----------------------------------------------

    def awake_epoch_end(self, decided: Log, epoch: int, evolve: bool = True):
        """Vote over the epoch's decided log, read the next membership, evolve."""
        if self.key.period != epoch:
            raise InvariantFault(
                f"node {self.node}: key at period {self.key.period} at the end of epoch {epoch}"
            )
        vote = sign_lvote(self.key, self.node, decided)
        nxt = latest_membership(decided, self.membership)
        self.log = tuple(decided)
        self.membership = nxt
        self.last_epoch = epoch + 1
        if evolve and self.key.period + 1 < self.key.periods:
            self.key.update()
        return vote, nxt

    def on_round(self, ctx: RoundContext) -> list:
        self.log = tuple(ctx.decided)
        if ctx.epoch_end and not self.key.disposed:
            vote, _ = self.awake_epoch_end(ctx.decided, ctx.epoch)
            return [vote]
        return []

    # -- bootstrapping -----------------------------------------------------

    def bootstrap(self, epoch: int, inbox: Iterable, directory: Mapping) -> BootResult:
        book = VoteBook(inbox, directory)
        members = self.membership
        log = self.log
        result = BootResult(self.node, epoch, members, log)
        for e in range(self.last_epoch, epoch):
            picked = oldest_votes(book, e, members)
            result.examined += picked.examined
            if not picked.chosen:
                raise NoQuorum(e)
            counts = tally_logs(picked.chosen, e)
            log = pick_heaviest(counts)
            result.tallies.append(EpochTally(e, members, counts, log))
            members = latest_membership(log, members)
        self._finish_boot(epoch, members, log)
        result.membership, result.log = members, log
        return result

    def _finish_boot(self, epoch: int, members: frozenset, log: Log):
        self.last_epoch = epoch
        self.membership = members
        self.log = log
        if not self.key.disposed and self.key.period < epoch:
            self.key.update_to(epoch)
