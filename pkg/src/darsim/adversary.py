"""Adversary strategies driven by the round engine.

A strategy receives every captured key, may inject signed messages at the
start of each round and decides, per recipient, whether an injected message
is visible during the round or only at its end.  The engine enforces the
end-of-round deadline itself.
"""

from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional

from .core import (
    Envelope,
    LogEntry,
    LVote,
    MembershipChange,
    Payload,
    Tx,
    log_hash,
    truncate_to_epoch,
)
from .dargadget import sign_lvote
from .darsogadget import sign_mvote, sign_tx

NOW = "now"
END = "end"


@dataclass
class AdversaryView:
    """Read-only snapshot handed to strategies."""

    round: int
    epoch: int
    schedule: object
    pool: list  # published envelopes; do not mutate
    epoch_logs: list  # final decided log of every finished epoch
    decided_members: list  # decided membership per epoch, as far as known
    booting: frozenset  # nodes that will run their bootstrap at the end of this round
    gadget: str

    def true_candidate(self, epoch: int):
        return truncate_to_epoch(self.epoch_logs[epoch], epoch)


class NullStrategy:
    """Adversarial nodes stay silent; withdrawals are signed with the captured key."""

    name = "null"

    def __init__(self, seed: int = 0):
        self.rng = random.Random(seed)
        self.keys: dict = {}  # node -> captured FSSecretKey or None

    def on_corrupt(self, node: int, captured, view: AdversaryView) -> None:
        self.keys[node] = captured

    def on_round_start(self, view: AdversaryView) -> list:
        return []

    def selective_reveal(self, envelope: Envelope, recipient: int) -> str:
        return NOW

    def signing_key(self, node: int, period: int):
        """Fresh copy of ``node``'s captured key moved to ``period``, or None."""
        key = self.keys.get(node)
        if key is None or key.disposed or key.period > period or period >= key.periods:
            return None
        k = key.clone()
        if period > k.period:
            k.update_to(period)
        return k

    def withdraw(self, node: int, replacement: int, epoch: int, view: AdversaryView) -> Optional[Tx]:
        key = self.signing_key(node, epoch)
        if key is None:
            return None
        return sign_tx(key, node, replacement, epoch)


class BackwardSimStrategy(NullStrategy):
    """Forge a fake history whenever somebody is about to boot.

    For the past epoch where captured keys can out-vote the most honest
    voters, every captured member signs a vote for a fake log at the oldest
    period its key still allows.  The fake payload is ground until the fake
    candidate also wins hash tie-breaks.  Captured members also vote for a fake
    current membership.  No key ever signs two different messages for the same
    period and purpose.
    """

    name = "backward-sim"

    def __init__(self, seed: int = 0, grind: bool = True, forge_mvotes: bool = True):
        super().__init__(seed)
        self.grind = grind
        self.forge_mvotes = forge_mvotes
        self._fakes: dict = {}
        self._signed: dict = {}  # (node, period) -> log signed as LVote
        self._mvoted: set = set()  # (node, round)
        self._seen = 0
        self._genuine = defaultdict(set)  # node -> periods of LVotes not made by us
        self._own: set = set()

    def _index(self, view: AdversaryView) -> None:
        for env in view.pool[self._seen :]:
            body = env.body
            if isinstance(body, LVote) and body.sig is not None and body not in self._own:
                self._genuine[body.voter].add(body.period)
        self._seen = len(view.pool)

    def _live(self, view: AdversaryView) -> dict:
        return {
            v: k.period
            for v, k in sorted(self.keys.items())
            if k is not None and not k.disposed and v in view.schedule.adversarial_at(view.round)
        }

    def _fake_members(self, view: AdversaryView, live: dict) -> frozenset:
        size = len(view.schedule.genesis)
        pick = sorted(live)[:size]
        for v in view.schedule.nodes:
            if len(pick) >= size:
                break
            if v not in pick:
                pick.append(v)
        return frozenset(pick)

    def _fake_log(self, epoch: int, view: AdversaryView, live: dict):
        if epoch in self._fakes:
            return self._fakes[epoch]
        base = view.epoch_logs[epoch - 1] if epoch > 0 else ()
        truth = view.true_candidate(epoch)
        members = self._fake_members(view, live)
        nonce = 0
        while True:
            fake = tuple(base) + (
                LogEntry(Payload(b"forged:%d:%d" % (epoch, nonce)), epoch),
                LogEntry(MembershipChange(members), epoch),
            )
            if not self.grind or log_hash(fake) < log_hash(truth) or nonce > 10_000:
                break
            nonce += 1
        self._fakes[epoch] = fake
        return fake

    def _forgers(self, epoch: int, view: AdversaryView, live: dict) -> dict:
        """Captured members of ``epoch`` whose oldest vote we can still control."""
        members = view.decided_members[epoch]
        out = {}
        for v, p in live.items():
            if v not in members:
                continue
            q = max(p, epoch)
            if any(epoch <= g <= q for g in self._genuine.get(v, ())):
                continue
            prev = self._signed.get((v, q))
            if prev is not None and prev != self._fakes.get(epoch):
                continue
            out[v] = q
        return out

    def _vote(self, v: int, q: int, fake, view: AdversaryView) -> list:
        if (v, q) in self._signed:
            return []
        key = self.signing_key(v, q)
        if key is None:
            return []
        vote = sign_lvote(key, v, fake)
        self._signed[(v, q)] = fake
        self._own.add(vote)
        return [Envelope(v, view.round, vote)]

    def on_round_start(self, view: AdversaryView) -> list:
        self._index(view)
        if not view.booting or view.epoch == 0 and not view.epoch_logs:
            return []
        live = self._live(view)
        if not live:
            return []
        out = []
        best = None
        for e in range(len(view.epoch_logs)):
            forgers = self._forgers(e, view, live)
            if not forgers:
                continue
            honest = sum(
                1
                for v in view.decided_members[e]
                if v not in forgers and any(g >= e for g in self._genuine.get(v, ()))
            )
            score = len(forgers) - honest
            if best is None or score > best[0]:
                best = (score, e, forgers)
        if best is not None:
            _, e, forgers = best
            fake = self._fake_log(e, view, live)
            plan = dict(forgers)
            # keep the fake branch alive: its members vote for it in every later period
            for later in range(e + 1, len(view.epoch_logs)):
                for v in sorted(self._fake_members(view, live) & set(live)):
                    plan.setdefault(v, None)
                    q = max(live[v], later)
                    if self._signed.get((v, q)) is None:
                        out.extend(self._vote(v, q, fake, view))
            for v, q in sorted((v, q) for v, q in plan.items() if q is not None):
                out.extend(self._vote(v, q, fake, view))
        if self.forge_mvotes and view.gadget == "darso":
            fake_set = self._fake_members(view, live)
            for v, p in live.items():
                if (v, view.round) in self._mvoted or p > view.epoch:
                    continue
                key = self.signing_key(v, view.epoch)
                if key is None:
                    continue
                self._mvoted.add((v, view.round))
                out.append(Envelope(v, view.round, sign_mvote(key, v, view.round, fake_set)))
        return out


class HiddenSpendStrategy(BackwardSimStrategy):
    """Backward simulation plus undecided transactions at epoch ends.

    ``hidden_rate``: chance per epoch that an adversarial member which never
    withdraws hands its seat to a fresh node in a transaction that is never
    decided.  ``double_rate``: chance per epoch that an adversarial node sends
    a second, conflicting transaction.
    """

    name = "hidden-spend"

    def __init__(self, seed: int = 0, hidden_rate: float = 0.5, double_rate: float = 0.0, **kw):
        super().__init__(seed, **kw)
        self.hidden_rate = hidden_rate
        self.double_rate = double_rate
        self._spent: set = set()
        self._used_targets: set = set()
        self.double_spent: list = []  # (node, epoch)
        self.hidden: list = []  # (node, replacement, epoch)

    def _fresh_targets(self, view: AdversaryView, live: dict) -> list:
        k = view.schedule
        ever = set().union(*k.membership)
        if k.signoff is not None:
            for pairs in k.signoff:
                ever.update(b for _, b in pairs)
        free = [v for v in k.nodes if v not in ever and v not in self._used_targets]
        # prefer nodes the adversary can speak for
        return sorted(free, key=lambda v: (v not in live, v))

    def on_round_start(self, view: AdversaryView) -> list:
        out = super().on_round_start(view)
        k = view.schedule
        if k.signoff is None or view.round != k.last_round(view.epoch) or view.epoch >= k.n_epochs - 1:
            return out
        e = view.epoch
        live = self._live(view)
        members = view.decided_members[e]
        withdrawing = set()
        for pairs in k.signoff:
            withdrawing.update(a for a, _ in pairs)
        if self.rng.random() < self.hidden_rate:
            senders = [
                v for v in sorted(members & set(live)) if v not in withdrawing and v not in self._spent
            ]
            targets = self._fresh_targets(view, live)
            if senders and targets:
                a, h = senders[0], targets[0]
                key = self.signing_key(a, e)
                if key is not None:
                    self._spent.add(a)
                    self._used_targets.add(h)
                    self.hidden.append((a, h, e))
                    out.append(Envelope(a, view.round, sign_tx(key, a, h, e)))
        if self.rng.random() < self.double_rate:
            tau = k.tau(e)
            cands = [v for v in sorted(tau) if v in live]
            cands += [v for v in sorted(members & set(live)) if v not in withdrawing and v not in self._spent]
            targets = self._fresh_targets(view, live)
            if cands and len(targets) >= 2:
                a = cands[0]
                key = self.signing_key(a, e)
                if key is not None:
                    picks = [h for h in targets if h != tau.get(a)][:2]
                    if a in tau:
                        picks = picks[:1]
                    for h in picks:
                        self._used_targets.add(h)
                        out.append(Envelope(a, view.round, sign_tx(key.clone(), a, h, e)))
                    self._spent.add(a)
                    self.double_spent.append((a, e))
        return out


STRATEGIES = {
    "null": NullStrategy,
    "backward-sim": BackwardSimStrategy,
    "hidden-spend": HiddenSpendStrategy,
}


def make_strategy(name: str, seed: int = 0, **kw):
    try:
        cls = STRATEGIES[name]
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}; choose from {sorted(STRATEGIES)}") from None
    return cls(seed, **kw)
