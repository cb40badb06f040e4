"""Swap-and-splice attack on bootstrapping without sign-off.

Given a schedule in which the simulatable members of some past round are at
least as many as the members that were honest and awake since, the adversary
can relabel nodes so that a second execution looks exactly like the first to
a node that boots late.  ``build_plan`` finds the relabelling, ``run_attack``
runs the four executions:

* X1 under the original schedule, adversarial nodes silent;
* X2 under the relabelled schedule with a different input, so its log conflicts;
* X1' = X1 plus every X2 message re-signed with keys captured in X1's world;
* X2' = X2 plus every X1 message re-signed with keys captured in X2's world.

The booting node receives the same set of messages in X1' and X2', so at
least one of its two verdicts has to be wrong.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .adversary import NullStrategy
from .core import Envelope, LVote, MVote, Tx, log_hash
from .dargadget import sign_lvote
from .darsogadget import sign_mvote, sign_tx
from .netsim import DAR, ExecutionTrace, Simulation
from .schedule import PLAIN, Schedule, check_srhm, permute, simulatable

CONFLICT_INPUT = b"conflicting-input"


class PlanError(ValueError):
    pass


class PreconditionFailed(PlanError):
    pass


class PlanInfeasible(PlanError):
    def __init__(self, message: str, need: int, have: int):
        super().__init__(f"{message} (need {need}, have {have})")
        self.need = need
        self.have = have


@dataclass(frozen=True)
class AttackPlan:
    schedule: Schedule
    permuted: Schedule
    witness: tuple  # (t', t)
    boot_round: int
    probe: int
    q1: frozenset  # members honest and awake somewhere in [t', t]
    q2: frozenset  # simulatable members swapped with q1 (or a part of it)
    q3: frozenset  # members that joined during (t', t]
    q4: frozenset  # adversarial nodes swapped with q3
    swapped: frozenset  # the part of q1 that is swapped with q2
    extra: frozenset  # simulatable members outside q2, voting for the X2 log in both worlds
    phi: dict
    strict: bool

    def describe(self) -> str:
        ids = lambda s: " ".join(str(v) for v in sorted(s)) or "-"
        return "\n".join(
            [
                f"witness {self.witness[0]} {self.witness[1]}",
                f"boot {self.probe} at round {self.boot_round}",
                f"Q1 {ids(self.q1)}",
                f"Q2 {ids(self.q2)}",
                f"Q3 {ids(self.q3)}",
                f"Q4 {ids(self.q4)}",
                f"extra {ids(self.extra)}",
            ]
        )


def _default_witness(k: Schedule) -> tuple:
    tp = k.last_round(0) if k.n_epochs > 1 else 0
    for t in range(tp, k.horizon - 1):
        if k.booting_at(t) - k.members_at(tp):
            return tp, t
    raise PlanInfeasible("no node boots after the first epoch", 1, 0)


def build_plan(k: Schedule, witness: Optional[tuple] = None, strict: bool = True) -> AttackPlan:
    """Deterministic plan; the lowest ids are picked wherever there is a choice.

    ``strict`` requires an SR-HM violation.  With ``strict=False`` the same
    construction is built on any schedule (all simulatable members forge, the
    same number of honest members are swapped): the negative control.
    """
    if witness is None:
        if strict:
            verdict = check_srhm(k, PLAIN)
            if verdict:
                raise PreconditionFailed("schedule satisfies SR-HM; nothing to attack")
            witness = verdict.witness
        else:
            witness = _default_witness(k)
    tp, t = witness
    q = simulatable(k, tp, t)
    members = k.members_at(tp)
    q1 = members & q.hon
    sim_members = sorted(members & q.sims)
    if strict:
        if len(sim_members) < len(q1):
            raise PreconditionFailed(
                f"only {len(sim_members)} simulatable members against {len(q1)} honest ones"
            )
        q2 = frozenset(sim_members[: len(q1)])
        swapped = q1
        extra = frozenset(sim_members[len(q1) :])
    else:
        q2 = frozenset(sim_members)
        swapped = frozenset(sorted(q1)[: len(q2)])
        extra = frozenset()
    q3 = frozenset().union(*(k.members_at(r) for r in range(tp + 1, t + 1))) - members
    taken = q1 | q2 | q3 | extra
    pool = sorted(k.adversarial[t] - q.hon - taken)
    if len(pool) < len(q3):
        raise PlanInfeasible("not enough spare adversarial nodes for Q4", len(q3), len(pool))
    q4 = frozenset(pool[: len(q3)])
    touched = taken | q4
    boot_round, probe = None, None
    for tb in range(t, k.horizon - 1):
        cands = sorted(k.booting_at(tb) - touched)
        if cands:
            boot_round, probe = tb, cands[0]
            break
    if probe is None:
        raise PlanInfeasible("no untouched node boots at or after the witness round", 1, 0)
    phi = {}
    for a, b in list(zip(sorted(swapped), sorted(q2))) + list(zip(sorted(q3), sorted(q4))):
        phi[a], phi[b] = b, a
    return AttackPlan(
        schedule=k,
        permuted=permute(k, phi),
        witness=(tp, t),
        boot_round=boot_round,
        probe=probe,
        q1=q1,
        q2=q2,
        q3=q3,
        q4=q4,
        swapped=swapped,
        extra=extra,
        phi=phi,
        strict=strict,
    )


@dataclass(frozen=True)
class Forgery:
    """A message to re-create: ``body`` is signed afresh as ``sender`` at ``period``."""

    sender: int
    body: object
    period: int

    @classmethod
    def of(cls, env: Envelope) -> "Forgery":
        return cls(env.sender, env.body, env.body.sig.period)


class ReplayStrategy(NullStrategy):
    """Re-sign a fixed list of messages with captured keys and inject them at one round."""

    name = "replay"

    def __init__(self, forgeries, inject_round: int, seed: int = 0):
        super().__init__(seed)
        self.forgeries = list(forgeries)
        self.inject_round = inject_round
        self.forged: list = []
        self.unforgeable: list = []

    def _resign(self, f: Forgery):
        key = self.signing_key(f.sender, f.period)
        if key is None:
            return None
        body = f.body
        if isinstance(body, LVote):
            return sign_lvote(key, body.voter, body.log)
        if isinstance(body, MVote):
            return sign_mvote(key, body.voter, body.round, body.members)
        if isinstance(body, Tx):
            return sign_tx(key, body.sender, body.replacement, body.epoch)
        return None

    def on_round_start(self, view) -> list:
        if view.round != self.inject_round:
            return []
        out = []
        for f in self.forgeries:
            body = self._resign(f)
            if body is None:
                self.unforgeable.append(f)
                continue
            self.forged.append(body)
            out.append(Envelope(f.sender, view.round, body))
        return out


@dataclass
class WorldResult:
    name: str
    decided: str  # hash of the decided log at the boot round
    verdict: Optional[list]
    expected: list
    correct: Optional[bool]
    counts: list  # (candidate hash, votes) of the first replayed epoch
    tie: bool
    violation: bool
    forged: int
    unforgeable: int
    trace: Optional[ExecutionTrace] = field(default=None, repr=False)


@dataclass
class AttackReport:
    plan: AttackPlan
    gadget: str
    x1_log: str
    x2_log: str
    conflicting: bool
    worlds: list
    inbox_equal: bool

    @property
    def violations(self) -> int:
        return sum(1 for w in self.worlds if w.violation)

    @property
    def demonstrated(self) -> bool:
        return self.violations > 0

    def branch(self) -> str:
        bad = [w.name for w in self.worlds if w.violation]
        return ",".join(bad) if bad else "none"

    def to_text(self) -> str:
        lines = [
            "attack-report 1",
            f"gadget {self.gadget}",
            *self.plan.describe().splitlines(),
            f"x1-log {self.x1_log}",
            f"x2-log {self.x2_log}",
            f"logs-conflict {str(self.conflicting).lower()}",
            f"inbox-equal {str(self.inbox_equal).lower()}",
        ]
        for w in self.worlds:
            tally = " ".join(f"{h[:16]}={n}" for h, n in w.counts) or "-"
            verdict = " ".join(map(str, w.verdict)) if w.verdict is not None else "stalled"
            lines += [
                f"[{w.name}]",
                f"decided {w.decided}",
                f"verdict {verdict}",
                f"expected {' '.join(map(str, w.expected))}",
                f"tally {tally}",
                f"tie {str(w.tie).lower()}",
                f"forged {w.forged}",
                f"unforgeable {w.unforgeable}",
                f"violation {str(w.violation).lower()}",
            ]
        lines.append(f"violated-in {self.branch()}")
        return "\n".join(lines) + "\n"


def _messages(trace: ExecutionTrace, upto: int) -> list:
    return [env for env in trace.pool if env.sent_round <= upto]


def _world(name, schedule, gadget, seed, messages, star, plan, extra_inputs) -> WorldResult:
    strat = ReplayStrategy([Forgery.of(env) for env in messages] + list(star), plan.boot_round, seed)
    sim = Simulation(schedule, gadget, strat, seed, extra_inputs=extra_inputs, record_inboxes=True)
    trace = sim.run(until=plan.boot_round)
    boots = [b for b in trace.boots if b.node == plan.probe and b.round == plan.boot_round]
    violation = bool(trace.violations)
    if boots:
        b = boots[0]
        counts, tie = [], False
        if b.result.tallies:
            c = b.result.tallies[0].counts
            counts = sorted(((log_hash(cand).hex(), n) for cand, n in c.items()), key=lambda x: (-x[1], x[0]))
            tie = len(counts) > 1 and counts[0][1] == counts[1][1]
        verdict, correct = sorted(b.membership), b.correct
        expected = sorted(b.expected)
    else:
        counts, tie, verdict, correct = [], False, None, None
        expected = sorted(trace.decided_members[schedule.epoch_of(plan.boot_round + 1)])
    final = trace.epoch_logs[-1] if trace.epoch_logs else ()
    return WorldResult(
        name,
        log_hash(final).hex(),
        verdict,
        expected,
        correct,
        counts,
        tie,
        violation,
        len(strat.forged),
        len(strat.unforgeable),
        trace,
    )


def _star(plan: AttackPlan, x2: ExecutionTrace) -> list:
    """Votes of the spare simulatable members for the X2 log, identical in both worlds."""
    e = plan.schedule.epoch_of(plan.witness[0])
    return [Forgery(v, LVote(v, x2.epoch_logs[e]), e) for v in sorted(plan.extra)]


def run_attack(plan: AttackPlan, gadget: str = DAR, seed: int = 0) -> AttackReport:
    k1, k2 = plan.schedule, plan.permuted
    tb = plan.boot_round
    x2_inputs = {k1.epoch_of(plan.witness[0]) * k1.epoch_len: [CONFLICT_INPUT]}
    x1 = Simulation(k1, gadget, NullStrategy(seed), seed).run(until=tb)
    x2 = Simulation(k2, gadget, NullStrategy(seed), seed, extra_inputs=x2_inputs).run(until=tb)
    m1, m2 = _messages(x1, tb), _messages(x2, tb)
    w1 = {env.wire_bytes() for env in m1}
    w2 = {env.wire_bytes() for env in m2}
    only2 = [env for env in m2 if env.wire_bytes() not in w1]
    only1 = [env for env in m1 if env.wire_bytes() not in w2]
    star = _star(plan, x2)
    x1p = _world("X1'", k1, gadget, seed, only2, star, plan, None)
    x2p = _world("X2'", k2, gadget, seed, only1, star, plan, x2_inputs)
    key = (plan.probe, tb)
    in1 = x1p.trace.boot_inboxes.get(key)
    in2 = x2p.trace.boot_inboxes.get(key)
    log1 = x1.epoch_logs[-1] if x1.epoch_logs else ()
    log2 = x2.epoch_logs[-1] if x2.epoch_logs else ()
    n = min(len(log1), len(log2))
    return AttackReport(
        plan=plan,
        gadget=gadget,
        x1_log=log_hash(log1).hex(),
        x2_log=log_hash(log2).hex(),
        conflicting=tuple(log1[:n]) != tuple(log2[:n]),
        worlds=[x1p, x2p],
        inbox_equal=in1 is not None and in1 == in2,
    )
