"""Lock-step synchronous round engine.

One ``Simulation`` drives a schedule round by round: it applies corruption,
lets the adversary inject messages, feeds the idealized per-epoch broadcast,
runs every awake honest node once in ascending id order, publishes what they
send and finally boots the nodes that wake up.  Everything observable lands in
an ``ExecutionTrace``; equal inputs give byte-identical traces.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

from . import fscrypto
from .adversary import END, NOW, AdversaryView, NullStrategy
from .core import (
    Envelope,
    MembershipChange,
    Payload,
    compatible,
    log_hash,
    truncate_to_epoch,
)
from .dargadget import BootResult, DarNode, NoQuorum, RoundContext
from .darsogadget import DarsoNode
from .sleepyab import EpochAbInstance, RejectedInput
from .schedule import Schedule

DAR = "dar"
DARSO = "darso"
GADGETS = (DAR, DARSO)

AWAKE = "awake-honest"
ASLEEP = "asleep-honest"
BOOTING = "booting"
CORRUPTED = "corrupted"
DIVERGED = "diverged"


@dataclass
class TraceEvent:
    round: int
    kind: str
    hash: str = ""
    payload: dict = field(default_factory=dict)

    def to_line(self) -> str:
        return json.dumps(
            {"round": self.round, "kind": self.kind, "hash": self.hash, "payload": self.payload},
            sort_keys=False,
            separators=(",", ":"),
        )


@dataclass
class BootRecord:
    node: int
    round: int
    epoch: int
    membership: frozenset
    expected: frozenset
    log_ok: bool
    result: BootResult
    inbox_size: int

    @property
    def correct(self) -> bool:
        return self.membership == self.expected and self.log_ok


@dataclass
class ExecutionTrace:
    schedule: Schedule
    gadget: str
    events: list = field(default_factory=list)
    boots: list = field(default_factory=list)
    stalls: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    faults: list = field(default_factory=list)
    epoch_logs: list = field(default_factory=list)
    decided_members: list = field(default_factory=list)
    decided_txs: dict = field(default_factory=dict)  # epoch -> set of (sender, replacement, epoch)
    captures: dict = field(default_factory=dict)  # node -> period or None
    pool: list = field(default_factory=list)
    logs_seen: dict = field(default_factory=dict)  # log hash -> log
    boot_inboxes: dict = field(default_factory=dict)  # (node, round) -> sorted wire bytes
    final_log: tuple = ()

    @property
    def clean(self) -> bool:
        return not self.violations and not self.faults

    def lines(self) -> list:
        return [ev.to_line() for ev in self.events]

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def boot_messages(self) -> int:
        return sum(b.result.examined for b in self.boots)

    def fallbacks(self) -> int:
        return sum(len(b.result.fallbacks) for b in self.boots)

    def metrics(self) -> dict:
        return {
            "boots": len(self.boots),
            "boot_msgs": self.boot_messages(),
            "fallbacks": self.fallbacks(),
            "violations": len(self.violations),
            "faults": len(self.faults),
            "stalls": len(self.stalls),
            "envelopes": len(self.pool),
        }

    def safety_violations(self) -> list:
        """Pairs of recorded logs that conflict."""
        logs = sorted(self.logs_seen.values(), key=len)
        bad = []
        for i, a in enumerate(logs):
            for b in logs[i + 1 :]:
                if not compatible(a, b):
                    bad.append((log_hash(a).hex(), log_hash(b).hex()))
        return bad


class KeyLedger:
    """Key periods tracked only from evolve/dispose events, to cross-check captures."""

    def __init__(self, nodes):
        self.period = {v: 0 for v in nodes}

    def evolve(self, node: int, period: int):
        if period < self.period[node]:
            raise AssertionError(f"node {node} moved its key backwards")
        self.period[node] = period

    def dispose(self, node: int):
        self.period[node] = None

    def expected_capture(self, node: int):
        return self.period[node]


def _h(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:32]


class Simulation:
    def __init__(
        self,
        schedule: Schedule,
        gadget: str = DAR,
        strategy=None,
        rng_seed: int = 0,
        latency: int = 2,
        trace_payloads: bool = False,
        extra_inputs: Optional[dict] = None,
        record_inboxes: bool = False,
        honest_payloads: bool = True,
    ):
        if gadget not in GADGETS:
            raise ValueError(f"unknown gadget {gadget!r}")
        k = schedule
        if gadget == DARSO and k.signoff is None and len(set(k.membership)) > 1:
            raise ValueError("the sign-off gadget needs a schedule with sign-off maps")
        if k.epoch_len <= latency:
            raise ValueError(f"epoch length {k.epoch_len} must exceed the broadcast latency {latency}")
        self.k = k
        self.gadget = gadget
        self.strategy = strategy if strategy is not None else NullStrategy(rng_seed)
        self.rng_seed = rng_seed
        self.latency = latency
        self.trace_payloads = trace_payloads
        self.extra_inputs = {int(r): list(v) for r, v in (extra_inputs or {}).items()}
        self.record_inboxes = record_inboxes
        self.honest_payloads = honest_payloads

        self.trace = ExecutionTrace(k, gadget)
        self.trace.decided_members.append(k.genesis)
        self.round = 0
        self.pool = self.trace.pool
        periods = k.n_epochs + 1
        self.keys, self.directory = {}, {}
        for v in k.nodes:
            pk, sk = fscrypto.gen(fscrypto.FSParams(periods), b"node-key:%d:%d" % (rng_seed, v), signer=v)
            self.keys[v], self.directory[v] = sk, pk
        self.ledger = KeyLedger(k.nodes)
        self.nodes = {}
        for v in k.nodes:
            if gadget == DAR:
                self.nodes[v] = DarNode(v, self.keys[v], k.genesis)
            else:
                self.nodes[v] = DarsoNode(v, self.keys[v], k.genesis, k.epoch_len)
        first = k.awake[0] if k.horizon else frozenset()
        self.status = {v: (AWAKE if v in first else ASLEEP) for v in k.nodes}
        self.seen = {v: 0 for v in k.nodes}  # pool prefix handed to the node's handler
        self.early: dict = {v: set() for v in k.nodes}  # pool indices already revealed in-round
        self.delivered = {v: 0 for v in k.nodes}  # pool prefix in the node's inbox
        self.ab: Optional[EpochAbInstance] = None
        self._tx_published: set = set()

    # -- helpers ---------------------------------------------------------

    def emit(self, kind: str, payload: dict, hash_: str = "") -> None:
        self.trace.events.append(TraceEvent(self.round, kind, hash_, payload))

    def fault(self, what: str, **info) -> None:
        info = {"what": what, **info}
        self.trace.faults.append(dict(round=self.round, **info))
        self.emit("fault", info)

    def _view(self, booting) -> AdversaryView:
        return AdversaryView(
            round=self.round,
            epoch=self.k.epoch_of(self.round),
            schedule=self.k,
            pool=self.pool,
            epoch_logs=self.trace.epoch_logs,
            decided_members=self.trace.decided_members,
            booting=frozenset(booting),
            gadget=self.gadget,
        )

    def _key_events(self, v: int, before: Optional[int]) -> None:
        key = self.keys[v]
        if key.disposed:
            if before is not None:
                self.ledger.dispose(v)
                self.emit("dispose", {"node": v})
        elif before is not None and key.period != before:
            self.ledger.evolve(v, key.period)
            self.emit("evolve", {"node": v, "period": key.period})

    def _period(self, v: int) -> Optional[int]:
        key = self.keys[v]
        return None if key.disposed else key.period

    def _publish(self, env: Envelope) -> None:
        raw = env.to_bytes()
        payload = {"sender": env.sender, "type": type(env.body).__name__}
        if self.trace_payloads:
            payload["bytes"] = raw.hex()
        self.emit("send", payload, _h(raw))
        self.pool.append(env)

    # -- epochs ------------------------------------------------------------

    def _start_epoch(self, e: int) -> None:
        k = self.k
        members = self.trace.decided_members[e]
        if members != k.membership[e]:
            self.fault("handoff", epoch=e, decided=sorted(members), scheduled=sorted(k.membership[e]))
        history = self.trace.epoch_logs[e - 1] if e > 0 else ()
        self.ab = EpochAbInstance(e, members, k.epoch_len, self.latency, history)
        self.emit("epoch", {"epoch": e, "members": sorted(members)})
        if e + 1 < k.n_epochs and k.membership[e + 1] != members:
            self.ab.submit(None, MembershipChange(k.membership[e + 1]), self.round, adversary=True)

    def _finish_epoch(self, e: int) -> None:
        final = self.ab.final_log()
        self.trace.epoch_logs.append(final)
        nxt = self.ab.epoch_handoff(self.trace.decided_members[e])
        self.trace.decided_members.append(nxt)
        self.emit("handoff", {"epoch": e, "next": sorted(nxt), "log_len": len(final)}, log_hash(final).hex())
        for v in sorted(self.k.awake[self.round]):
            if self.status[v] == AWAKE and self.nodes[v].membership != nxt:
                self.fault("membership", node=v, epoch=e + 1)

    # -- round -------------------------------------------------------------

    def step_round(self) -> None:
        k, t = self.k, self.round
        if t >= k.horizon:
            raise RuntimeError("simulation already reached the horizon")
        R = k.epoch_len
        e = t // R
        if t % R == 0:
            self._start_epoch(e)

        for v in sorted(k.corrupted_at(t)):
            self._corrupt(v)

        awake_now = k.awake[t]
        for v in k.nodes:
            if v in awake_now and self.status[v] == ASLEEP:
                self.fault("woke-without-boot", node=v)
            if v not in awake_now and self.status[v] == AWAKE:
                self.status[v] = ASLEEP
                self.emit("sleep", {"node": v})
            key = self.keys[v]
            if self.status[v] != CORRUPTED and not key.disposed and key.period > e:
                self.fault("key-ahead", node=v, period=key.period)
        runnable = [v for v in sorted(awake_now) if self.status[v] == AWAKE]
        self.ab.set_awake(runnable)

        last = R - 1 == t % R or t == k.horizon - 1
        booting = set(k.booting_at(t)) | {
            v for v in k.nodes if self.status[v] == BOOTING and v in awake_now
        }
        view = self._view(booting)
        injected = [self._stamp(env) for env in self.strategy.on_round_start(view)]
        for env in injected:
            self.emit("inject", {"sender": env.sender, "type": type(env.body).__name__}, _h(env.to_bytes()))

        self._submit_inputs(t, e, runnable)
        self.ab.advance(t)

        start_len = len(self.pool)
        outgoing = []
        tau = k.tau(e) if k.signoff is not None and self.gadget == DARSO and last else {}
        for v in runnable:
            node = self.nodes[v]
            early = self.early[v]
            new = [
                env
                for i, env in enumerate(self.pool[self.seen[v] : start_len], self.seen[v])
                if i not in early
            ]
            early.clear()
            for i, env in enumerate(injected):
                if self._reveal(env, v) == NOW:
                    new.append(env)
                    early.add(start_len + i)
            ctx = RoundContext(
                t, e, R, self.ab.decided_log(v, t), new, self.directory, sign_off_to=tau.get(v)
            )
            before = self._period(v)
            try:
                bodies = node.on_round(ctx)
            except Exception as exc:  # captured as a trace-level fault
                self.fault("handler", node=v, error=f"{type(exc).__name__}: {exc}")
                bodies = []
            self._key_events(v, before)
            if tau.get(v) is not None:
                self.emit("signoff", {"node": v, "replacement": tau[v], "epoch": e})
            outgoing.extend(Envelope(v, t, b) for b in bodies)

        if last and tau:
            outgoing.extend(self._offline_signoffs(e, tau, set(runnable), view))
        if k.signoff is not None and last:
            self.trace.decided_txs[e] = {(a, b, e) for a, b in k.tau(e).items()}

        for env in injected:
            self._publish(env)
        for env in outgoing:
            self._publish(env)
        for v in runnable:
            self.seen[v] = start_len
            self.delivered[v] = len(self.pool)

        if (t + 1) % R == 0:
            self._finish_epoch(e)

        for v in sorted(booting):
            if t + 1 < k.horizon and v in k.awake[t + 1] and self.status[v] != CORRUPTED:
                self._boot(v, t)

        self._record_logs(runnable, t)
        self.round += 1

    def _stamp(self, env) -> Envelope:
        if isinstance(env, Envelope):
            return Envelope(env.sender, self.round, env.body)
        raise TypeError("strategies inject Envelope objects")

    def _reveal(self, env: Envelope, recipient: int) -> str:
        choice = self.strategy.selective_reveal(env, recipient)
        if choice not in (NOW, END):
            raise ValueError(f"bad reveal decision {choice!r}")
        return choice

    def _submit_inputs(self, t: int, e: int, runnable) -> None:
        ab = self.ab
        for value in self.extra_inputs.get(t, ()):
            if isinstance(value, (bytes, bytearray)):
                value = Payload(bytes(value))
            try:
                ab.submit(None, value, t, adversary=True)
            except RejectedInput as exc:
                self.emit("rejected", {"reason": str(exc)})
        if not self.honest_payloads or not ab.window_open(t):
            return
        proposers = [v for v in runnable if v in ab.members]
        if proposers:
            v = proposers[0]
            ab.submit(v, Payload(b"tx:e%d:r%d:v%d" % (e, t, v)), t)

    def _corrupt(self, v: int) -> None:
        key = self.keys[v]
        captured = None if key.disposed else key.clone()
        period = None if captured is None else captured.period
        expected = self.ledger.expected_capture(v)
        if expected != period:
            self.fault("capture-ledger", node=v, captured=period, ledger=expected)
        self.trace.captures[v] = period
        self.status[v] = CORRUPTED
        self.emit("corrupt", {"node": v, "captured_period": period})
        self.strategy.on_corrupt(v, captured, self._view(()))

    def _offline_signoffs(self, e: int, tau: dict, ran: set, view) -> list:
        out = []
        for w in sorted(tau):
            if w in ran:
                continue
            r = tau[w]
            if self.status[w] == CORRUPTED:
                tx = self.strategy.withdraw(w, r, e, view)
                if tx is None:
                    self.emit("signoff-missing", {"node": w, "epoch": e})
                    continue
                self.emit("signoff", {"node": w, "replacement": r, "epoch": e, "adversarial": True})
            else:
                before = self._period(w)
                tx = self.nodes[w].sign_off(r, e)
                if tx is None:
                    self.emit("signoff-skip", {"node": w, "epoch": e})
                    continue
                if before is not None and before != e:
                    self.ledger.evolve(w, e)
                    self.emit("evolve", {"node": w, "period": e})
                self._key_events(w, e)
                self.emit("signoff", {"node": w, "replacement": r, "epoch": e})
            out.append(Envelope(w, self.round, tx))
        return out

    def _boot(self, v: int, t: int) -> None:
        k = self.k
        node = self.nodes[v]
        epoch = k.epoch_of(t + 1)
        if self.record_inboxes:
            self.trace.boot_inboxes[(v, t)] = sorted({env.wire_bytes() for env in self.pool})
        before = self._period(v)
        try:
            result = node.bootstrap(epoch, list(self.pool), self.directory)
        except NoQuorum as exc:
            self.status[v] = BOOTING
            self.trace.stalls.append((v, t, exc.epoch))
            self.emit("stall", {"node": v, "epoch": exc.epoch})
            return
        except Exception as exc:
            self.status[v] = BOOTING
            self.fault("boot", node=v, error=f"{type(exc).__name__}: {exc}")
            return
        self._key_events(v, before)
        expected = self.trace.decided_members[epoch]
        log_ok = True
        if self.gadget == DAR and epoch > 0 and result.tallies:
            truth = truncate_to_epoch(self.trace.epoch_logs[epoch - 1], epoch - 1)
            log_ok = result.log == truth
            self.trace.logs_seen.setdefault(log_hash(result.log), result.log)
        rec = BootRecord(v, t, epoch, result.membership, expected, log_ok, result, len(self.pool))
        self.trace.boots.append(rec)
        self.seen[v] = self.delivered[v] = len(self.pool)
        self.early[v] = set()
        self.emit(
            "boot",
            {
                "node": v,
                "epoch": epoch,
                "members": sorted(result.membership),
                "correct": rec.correct,
                "examined": result.examined,
                "fallbacks": list(result.fallbacks),
            },
        )
        if rec.correct:
            self.status[v] = AWAKE
        else:
            self.status[v] = DIVERGED
            breach = {
                "node": v,
                "epoch": epoch,
                "got": sorted(result.membership),
                "decided": sorted(expected),
                "log_ok": log_ok,
            }
            self.trace.violations.append(dict(round=t, **breach))
            self.emit("breach", breach)

    def _record_logs(self, runnable, t: int) -> None:
        if not runnable:
            return
        log = self.ab.decided_log(runnable[0], t)
        h = log_hash(log)
        self.trace.logs_seen.setdefault(h, log)
        self.emit("log", {"nodes": list(runnable), "len": len(log)}, h.hex())

    # -- driver --------------------------------------------------------------

    def run(self, until: Optional[int] = None) -> ExecutionTrace:
        """Run to the horizon, or through round ``until`` inclusive."""
        stop = self.k.horizon if until is None else min(self.k.horizon, until + 1)
        while self.round < stop:
            self.step_round()
        tr = self.trace
        if self.ab is not None:
            tr.final_log = tr.epoch_logs[-1] if tr.epoch_logs else ()
        for a, b in tr.safety_violations():
            tr.violations.append({"round": self.round, "conflict": [a, b]})
            self.emit("breach", {"conflict": [a, b]})
        return tr


def run(schedule: Schedule, gadget: str = DAR, strategy=None, rng_seed: int = 0, **kw) -> ExecutionTrace:
    return Simulation(schedule, gadget, strategy, rng_seed, **kw).run()
