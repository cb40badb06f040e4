"""Bootstrapping gadget with sign-off.

Withdrawing members sign a transaction handing their seat to a replacement
and then destroy their key, so a later corruption yields nothing to forge
with.  Awake members vote for the current membership every round and gossip
the transactions they hold.  A waking node rebuilds the membership of each
missed epoch straight from the transactions, falls back to log votes only for
epochs touched by a double spender, and settles the current set with the
membership votes.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from . import fscrypto
from .core import Envelope, MVote, Tx, digest, encode_members, latest_membership
from .dargadget import (
    BootResult,
    DarNode,
    EpochTally,
    NoQuorum,
    RoundContext,
    oldest_votes,
    pick_heaviest,
    tally_logs,
    VoteBook,
)

log = logging.getLogger(__name__)


class MalformedTau(ValueError):
    pass


def tx_valid(tx: Tx, directory: Mapping) -> bool:
    sig = tx.sig
    if sig is None or sig.signer != tx.sender or sig.period != tx.epoch:
        return False
    if tx.sender not in directory:
        return False
    return fscrypto.verify_cached(directory[tx.sender], tx.signing_bytes(), sig)


def mvote_valid(vote: MVote, directory: Mapping, epoch_len: int) -> bool:
    sig = vote.sig
    if sig is None or sig.signer != vote.voter or sig.period != vote.round // epoch_len:
        return False
    if vote.voter not in directory:
        return False
    return fscrypto.verify_cached(directory[vote.voter], vote.signing_bytes(), sig)


def tx_key(tx: Tx) -> tuple:
    """Content of a transaction without its signature."""
    return (tx.sender, tx.replacement, tx.epoch)


def double_spenders(txs: Iterable[Tx]) -> frozenset:
    """Senders with two or more distinct transactions anywhere in ``txs``."""
    seen = defaultdict(set)
    for tx in txs:
        seen[tx.sender].add(tx_key(tx))
    return frozenset(s for s, found in seen.items() if len(found) > 1)


def apply_txs(members: Iterable[int], txs: Iterable[Tx]) -> frozenset:
    members = frozenset(members)
    txs = list(txs)
    senders = [tx.sender for tx in txs]
    repl = [tx.replacement for tx in txs]
    if len(set(senders)) != len(senders):
        raise MalformedTau("a sender appears twice")
    if len(set(repl)) != len(repl):
        raise MalformedTau("a replacement appears twice")
    if not set(senders) <= members:
        raise MalformedTau(f"senders {sorted(set(senders) - members)} are not members")
    if set(repl) & members:
        raise MalformedTau(f"replacements {sorted(set(repl) & members)} are already members")
    return (members - set(senders)) | set(repl)


def sign_tx(key: fscrypto.FSSecretKey, sender: int, replacement: int, epoch: int) -> Tx:
    if key.period < epoch:
        key.update_to(epoch)
    unsigned = Tx(sender, replacement, epoch)
    return Tx(sender, replacement, epoch, key.sign(unsigned.signing_bytes()))


def sign_mvote(key: fscrypto.FSSecretKey, voter: int, round_: int, members) -> MVote:
    unsigned = MVote(voter, round_, members)
    return MVote(voter, round_, unsigned.members, key.sign(unsigned.signing_bytes()))


def members_key(members) -> bytes:
    return digest(encode_members(members))


@dataclass
class Estimate:
    epoch: int
    members: frozenset
    applied: frozenset  # tx contents (sender, replacement, epoch)
    path: str  # "genesis" | "estimate" | "fallback" | "awake"


class DarsoNode(DarNode):
    def __init__(self, node: int, key: fscrypto.FSSecretKey, genesis, epoch_len: int):
        super().__init__(node, key, genesis)
        self.epoch_len = epoch_len
        self.checkpoint = Estimate(0, self.genesis, frozenset(), "genesis")
        self.txs: dict = {}  # content -> Tx, valid only
        self._gossip: list = []
        self._unfilled: list = []  # (epoch, left, joined) still missing sign-off txs
        self.signed_off = False

    def _absorb(self, messages: Iterable, directory: Mapping) -> None:
        for m in messages:
            body = m.body if isinstance(m, Envelope) else m
            if isinstance(body, Tx) and body.sig is not None:
                key = (tx_key(body), body.sig.to_bytes())
                if key not in self.txs and tx_valid(body, directory):
                    self.txs[key] = body
                    self._gossip.append(body)

    def _txs_for(self, epoch: int, senders) -> list:
        out = {}
        for (content, _), tx in sorted(self.txs.items(), key=lambda kv: kv[0]):
            if tx.epoch == epoch and tx.sender in senders:
                out.setdefault(content, tx)
        return list(out.values())

    # -- awake participation ----------------------------------------------

    def sign_off(self, replacement: int, epoch: int) -> Optional[Tx]:
        """Hand the seat to ``replacement`` and destroy the key."""
        if self.key.disposed:
            log.warning("node %d already disposed its key; sign-off ignored", self.node)
            return None
        tx = sign_tx(self.key, self.node, replacement, epoch)
        self.key.dispose()
        self.signed_off = True
        self.txs[(tx_key(tx), tx.sig.to_bytes())] = tx
        return tx

    def on_round(self, ctx: RoundContext) -> list:
        self.log = tuple(ctx.decided)
        gossip, self._gossip = self._gossip, []
        self._absorb(ctx.new_messages, ctx.directory)
        out = list(gossip)
        if self.key.disposed:
            # a node that signed off keeps following membership but never votes
            if ctx.epoch_end:
                self.membership = latest_membership(ctx.decided, self.membership)
                self.last_epoch = ctx.epoch + 1
            return out
        current = self.membership
        if self.node in current:
            out.append(sign_mvote(self.key, self.node, ctx.round, current))
        if ctx.epoch_end:
            vote, nxt = self.awake_epoch_end(ctx.decided, ctx.epoch, evolve=ctx.sign_off_to is None)
            out.append(vote)
            if ctx.sign_off_to is not None:
                tx = self.sign_off(ctx.sign_off_to, ctx.epoch)
                if tx is not None:
                    out.append(tx)
            self.checkpoint = Estimate(ctx.epoch + 1, nxt, self.checkpoint.applied, "awake")
            # sign-offs of sleeping withdrawers arrive at the end of this round
            self._unfilled.append((ctx.epoch, current - nxt, nxt - current))
        self._fill_checkpoint()
        return out

    def _fill_checkpoint(self) -> None:
        if not self._unfilled:
            return
        applied = set(self.checkpoint.applied)
        waiting = []
        for epoch, left, joined in self._unfilled:
            found = {tx.sender for tx in self._txs_for(epoch, left) if tx.replacement in joined}
            for tx in self._txs_for(epoch, left):
                if tx.replacement in joined:
                    applied.add(tx_key(tx))
            if found != set(left):
                waiting.append((epoch, left, joined))
        self._unfilled = waiting
        cp = self.checkpoint
        self.checkpoint = Estimate(cp.epoch, cp.members, frozenset(applied), cp.path)

    # -- bootstrapping -----------------------------------------------------

    def bootstrap(self, epoch: int, inbox: Iterable, directory: Mapping) -> BootResult:
        inbox = list(inbox)
        self._absorb(inbox, directory)
        self._gossip = []
        self._fill_checkpoint()
        result = BootResult(self.node, epoch, self.checkpoint.members, None)
        # one pass over the distinct transactions seen
        result.examined += len(self.txs)
        spenders = double_spenders(self.txs.values())
        cp = self.checkpoint
        est, applied = cp.members, set(cp.applied)
        book = None
        result.estimates.append(cp)
        for e in range(cp.epoch, epoch):
            batch = self._txs_for(e, est)
            result.examined += len(batch)
            conflict = any(tx.sender in spenders for tx in batch)
            nxt = None
            if not conflict:
                try:
                    nxt = apply_txs(est, batch)
                    applied |= {tx_key(tx) for tx in batch}
                    path = "estimate"
                except MalformedTau:
                    conflict = True
            if conflict:
                if book is None:
                    book = VoteBook(inbox, directory)
                picked = oldest_votes(book, e, est)
                result.examined += picked.examined
                if not picked.chosen:
                    raise NoQuorum(e)
                counts = tally_logs(picked.chosen, e)
                winner = pick_heaviest(counts)
                result.tallies.append(EpochTally(e, est, counts, winner))
                result.fallbacks.append(e)
                nxt = latest_membership(winner, self.genesis)
                left, joined = est - nxt, nxt - est
                applied |= {
                    tx_key(tx) for tx in batch if tx.sender in left and tx.replacement in joined
                }
                path = "fallback"
            est = nxt
            result.estimates.append(Estimate(e + 1, est, frozenset(applied), path))
        final, counts, examined = self._tally_mvotes(inbox, directory, epoch, est)
        result.examined += examined
        result.mvote_counts = counts
        self.checkpoint = Estimate(epoch, est, frozenset(applied), "boot")
        self._finish_boot(epoch, final, self.log)
        result.membership = final
        return result

    def _tally_mvotes(self, inbox, directory, epoch: int, electors: frozenset):
        latest: dict = {}
        examined = 0
        for m in inbox:
            body = m.body if isinstance(m, Envelope) else m
            if not isinstance(body, MVote) or body.voter not in electors:
                continue
            if body.round // self.epoch_len != epoch:
                continue
            examined += 1
            if not mvote_valid(body, directory, self.epoch_len):
                continue
            cur = latest.get(body.voter)
            if cur is None or body.round > cur[0]:
                latest[body.voter] = (body.round, {body})
            elif body.round == cur[0]:
                cur[1].add(body)
        counts: dict = defaultdict(int)
        for voter in sorted(latest):
            sets = {v.members for v in latest[voter][1]}
            if len(sets) == 1:
                counts[sets.pop()] += 1
        if not counts:
            raise NoQuorum(epoch)
        winner = min(counts, key=lambda s: (-counts[s], members_key(s)))
        return winner, dict(counts), examined
