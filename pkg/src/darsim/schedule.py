"""The adversary's plan and the honest-majority conditions evaluated over it.

A schedule fixes, for every round, the adversarial set ``A_t``, the awake and
honest set ``H_t`` and the membership ``M_t`` (constant inside an epoch).  In
sign-off mode it also carries, per epoch, the one-to-one map from withdrawing
members to their replacements.

A node that is neither awake-honest nor adversarial at round ``t`` but is
awake-honest at ``t + 1`` is *booting* at ``t``: it runs its bootstrap at the
end of round ``t`` and is not counted in ``H_t``.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence

PLAIN = "plain"
SIGNOFF = "signoff"


class ScheduleError(ValueError):
    pass


class ModeError(ScheduleError):
    pass


class GenerationFailure(RuntimeError):
    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class ScheduleParseError(ScheduleError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


def _mask(nodes: Iterable[int]) -> int:
    m = 0
    for n in nodes:
        m |= 1 << n
    return m


def _unmask(m: int) -> frozenset:
    out = []
    i = 0
    while m:
        if m & 1:
            out.append(i)
        m >>= 1
        i += 1
    return frozenset(out)


@dataclass(frozen=True)
class Schedule:
    universe: int
    epoch_len: int
    horizon: int
    adversarial: tuple  # per round
    awake: tuple  # per round, awake and honest
    membership: tuple  # per epoch
    signoff: Optional[tuple] = None  # per epoch e < n_epochs - 1: sorted (withdrawer, replacement) pairs

    def __post_init__(self):
        object.__setattr__(self, "adversarial", tuple(frozenset(s) for s in self.adversarial))
        object.__setattr__(self, "awake", tuple(frozenset(s) for s in self.awake))
        object.__setattr__(self, "membership", tuple(frozenset(s) for s in self.membership))
        if self.signoff is not None:
            object.__setattr__(
                self, "signoff", tuple(tuple(sorted(dict(p).items())) for p in self.signoff)
            )
        self._validate()

    # -- structure -------------------------------------------------------

    def _validate(self):
        if self.epoch_len < 1:
            raise ScheduleError("epoch length must be positive")
        if self.horizon < 0 or self.universe < 1:
            raise ScheduleError("bad horizon or universe")
        if len(self.adversarial) != self.horizon or len(self.awake) != self.horizon:
            raise ScheduleError("per-round sets must cover the horizon")
        if len(self.membership) != self.n_epochs:
            raise ScheduleError(f"expected {self.n_epochs} epoch memberships, got {len(self.membership)}")
        every = frozenset(range(self.universe))
        size = len(self.membership[0])
        if size == 0:
            raise ScheduleError("empty membership")
        for e, m in enumerate(self.membership):
            if not m <= every:
                raise ScheduleError(f"epoch {e} membership outside universe")
            if len(m) != size:
                raise ScheduleError(f"epoch {e} membership size {len(m)} != {size}")
        prev = frozenset()
        for t in range(self.horizon):
            a, h = self.adversarial[t], self.awake[t]
            if not (a <= every and h <= every):
                raise ScheduleError(f"round {t}: node outside universe")
            if not prev <= a:
                raise ScheduleError(f"round {t}: corruption is not monotone")
            if a & h:
                raise ScheduleError(f"round {t}: node both adversarial and awake-honest")
            prev = a
        if self.signoff is not None:
            if len(self.signoff) != self.n_epochs - 1:
                raise ScheduleError("sign-off map needed for every epoch transition")
            for e, pairs in enumerate(self.signoff):
                tau = dict(pairs)
                cur, nxt = self.membership[e], self.membership[e + 1]
                if set(tau) != cur - nxt or set(tau.values()) != nxt - cur:
                    raise ScheduleError(f"epoch {e}: sign-off map does not match membership change")
                if len(set(tau.values())) != len(tau):
                    raise ScheduleError(f"epoch {e}: sign-off map is not one-to-one")

    @property
    def n_epochs(self) -> int:
        return max(1, math.ceil(self.horizon / self.epoch_len))

    @property
    def mode(self) -> str:
        return SIGNOFF if self.signoff is not None else PLAIN

    @property
    def nodes(self) -> range:
        return range(self.universe)

    @property
    def genesis(self) -> frozenset:
        return self.membership[0]

    def epoch_of(self, t: int) -> int:
        return t // self.epoch_len

    def last_round(self, epoch: int) -> int:
        return epoch * self.epoch_len + self.epoch_len - 1

    def members_at(self, t: int) -> frozenset:
        return self.membership[min(self.epoch_of(t), self.n_epochs - 1)]

    def tau(self, epoch: int) -> dict:
        if self.signoff is None:
            raise ModeError("schedule is not in sign-off mode")
        if epoch >= len(self.signoff):
            return {}
        return dict(self.signoff[epoch])

    def adversarial_at(self, t: int) -> frozenset:
        return self.adversarial[t] if self.horizon else frozenset()

    def booting_at(self, t: int) -> frozenset:
        """Nodes running their bootstrap at the end of round ``t``."""
        if t + 1 >= self.horizon:
            return frozenset()
        return self.awake[t + 1] - self.awake[t] - self.adversarial[t]

    def corrupted_at(self, t: int) -> frozenset:
        """Nodes whose corruption takes effect at round ``t``."""
        before = self.adversarial[t - 1] if t > 0 else frozenset()
        return self.adversarial[t] - before

    # -- bitmask views used by the checkers -------------------------------

    @cached_property
    def _a(self) -> tuple:
        return tuple(_mask(s) for s in self.adversarial)

    @cached_property
    def _h(self) -> tuple:
        return tuple(_mask(s) for s in self.awake)

    @cached_property
    def _m(self) -> tuple:
        return tuple(_mask(self.members_at(t)) for t in range(self.horizon))

    def _check_range(self, t0: int, t: int):
        if not (0 <= t0 <= t < self.horizon):
            raise ScheduleError(f"round range [{t0}, {t}] outside [0, {self.horizon})")


# --------------------------------------------------------------------------
# simulatable-node algebra


@dataclass(frozen=True)
class SimulatableQuery:
    hon: frozenset
    sims: frozenset
    withdrawers: Optional[frozenset]
    udsims: Optional[frozenset]


def hon_range(k: Schedule, t0: int, t: int) -> frozenset:
    """Nodes awake and honest at some round of ``[t0, t]``."""
    k._check_range(t0, t)
    m = 0
    for r in range(t0, t + 1):
        m |= k._h[r]
    return _unmask(m)


def sims(k: Schedule, t0: int, t: int) -> frozenset:
    """Nodes the adversary holding ``A_t`` can simulate from round ``t0``."""
    return k.adversarial[t] - hon_range(k, t0, t)


def withdrawers(k: Schedule, t0: int, t: int) -> frozenset:
    """Honest nodes that left the membership during ``[t0, t)``."""
    if k.mode != SIGNOFF:
        raise ModeError("withdrawers are defined only in sign-off mode")
    k._check_range(t0, t)
    out = set()
    for r in range(t0, t):
        out |= (k.members_at(r) - k.members_at(r + 1)) - k.adversarial[r]
    return frozenset(out)


def udsims(k: Schedule, t0: int, t: int) -> frozenset:
    """Simulatable nodes that have not disposed their keys."""
    if k.mode != SIGNOFF:
        raise ModeError("udsims is defined only in sign-off mode")
    return sims(k, t0, t) - withdrawers(k, t0, t)


def simulatable(k: Schedule, t0: int, t: int) -> SimulatableQuery:
    hon = hon_range(k, t0, t)
    s = k.adversarial[t] - hon
    if k.mode == SIGNOFF:
        w = withdrawers(k, t0, t)
        return SimulatableQuery(hon, s, w, s - w)
    return SimulatableQuery(hon, s, None, None)


# --------------------------------------------------------------------------
# conditions


@dataclass(frozen=True)
class Verdict:
    holds: bool
    witness: Optional[tuple] = None

    def __bool__(self):
        return self.holds

    def describe(self) -> str:
        if self.holds:
            return "holds"
        return "violated_at(" + ", ".join(str(x) for x in self.witness) + ")"


def check_hm(k: Schedule) -> Verdict:
    for t in range(k.horizon):
        m = k._m[t]
        if (m & k._a[t]).bit_count() >= (m & k._h[t]).bit_count():
            return Verdict(False, (t,))
    return Verdict(True)


def check_srhm(k: Schedule, mode: str = PLAIN) -> Verdict:
    """Simulation-resistant honest majority; ``mode="signoff"`` uses udsims.

    Returns the lexicographically smallest violating ``(t', t)``.
    """
    if mode not in (PLAIN, SIGNOFF):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == SIGNOFF and k.mode != SIGNOFF:
        raise ModeError("sign-off check needs a sign-off schedule")
    A, H, M = k._a, k._h, k._m
    left = [0] * k.horizon
    if mode == SIGNOFF:
        for r in range(k.horizon - 1):
            left[r] = (M[r] & ~M[r + 1]) & ~A[r]
    for tp in range(k.horizon):
        mp = M[tp]
        hon = 0
        gone = 0
        for t in range(tp, k.horizon):
            hon |= H[t]
            if t > tp:
                gone |= left[t - 1]
            s = A[t] & ~hon & ~gone
            if (mp & s).bit_count() >= (mp & hon).bit_count():
                return Verdict(False, (tp, t))
    return Verdict(True)


def srhm_margin(k: Schedule, t_prime: int, t: int, mode: str = PLAIN) -> tuple:
    """``(|M_t' ∩ S(t', t)|, |M_t' ∩ hon(t', t)|)`` for one pair."""
    q = simulatable(k, t_prime, t)
    m = k.members_at(t_prime)
    s = q.udsims if mode == SIGNOFF else q.sims
    return len(m & s), len(m & q.hon)


# --------------------------------------------------------------------------
# identity permutations


def _as_mapping(phi, universe: int) -> dict:
    if isinstance(phi, Mapping):
        mapping = {u: phi.get(u, u) for u in range(universe)}
    else:
        mapping = dict(enumerate(phi))
    if sorted(mapping) != list(range(universe)) or sorted(mapping.values()) != list(range(universe)):
        raise ScheduleError("permutation is not a bijection on the universe")
    return mapping


def permute(k: Schedule, phi) -> Schedule:
    """Relabel every node ``v`` as ``phi(v)``.

    ``phi`` is a mapping (unlisted nodes stay fixed) or a sequence indexed by node.
    """
    p = _as_mapping(phi, k.universe)

    def img(s):
        return frozenset(p[v] for v in s)

    signoff = None
    if k.signoff is not None:
        signoff = tuple(tuple((p[a], p[b]) for a, b in pairs) for pairs in k.signoff)
    return Schedule(
        universe=k.universe,
        epoch_len=k.epoch_len,
        horizon=k.horizon,
        adversarial=tuple(img(s) for s in k.adversarial),
        awake=tuple(img(s) for s in k.awake),
        membership=tuple(img(s) for s in k.membership),
        signoff=signoff,
    )


def invert(phi) -> dict:
    """Inverse of a permutation given as a mapping or as a sequence."""
    items = phi.items() if isinstance(phi, Mapping) else enumerate(phi)
    return {v: u for u, v in items}


# --------------------------------------------------------------------------
# construction helpers


def from_epochs(
    universe: int,
    epoch_len: int,
    membership: Sequence[Iterable[int]],
    awake: Sequence[Iterable[int]],
    corrupt_epoch: Mapping[int, int],
    signoff: Optional[Sequence[Mapping[int, int]]] = None,
) -> Schedule:
    """Build a schedule whose sleep and corruption change only at epoch starts.

    ``awake[e]`` lists the honest nodes awake during epoch ``e``.  A node awake
    in ``e`` but not at the end of ``e - 1`` boots at the first round of ``e``
    and joins ``H`` from the second round on.  Corruption at epoch ``e`` takes
    effect from its first round.
    """
    n = len(membership)
    adversarial, honest_awake = [], []
    for e in range(n):
        bad = frozenset(v for v, ce in corrupt_epoch.items() if ce <= e)
        up = frozenset(awake[e]) - bad
        prev_up = up
        if e > 0:
            prev_bad = frozenset(v for v, ce in corrupt_epoch.items() if ce <= e - 1)
            prev_up = frozenset(awake[e - 1]) - prev_bad
        for i in range(epoch_len):
            adversarial.append(bad)
            if i == 0 and e > 0:
                honest_awake.append(up & prev_up)
            else:
                honest_awake.append(up)
    return Schedule(
        universe=universe,
        epoch_len=epoch_len,
        horizon=n * epoch_len,
        adversarial=tuple(adversarial),
        awake=tuple(honest_awake),
        membership=tuple(frozenset(m) for m in membership),
        signoff=None if signoff is None else tuple(tuple(sorted(dict(t).items())) for t in signoff),
    )


@dataclass(frozen=True)
class ScheduleConstraints:
    universe_size: int = 12
    epoch_len: int = 4
    epochs: int = 4
    members: int = 5
    mode: str = PLAIN
    must_satisfy: str = "SRHM"  # HM | SRHM | violate_SRHM_keep_HM
    shape: str = "random"  # random | sleep_then_corrupt
    adversary_budget: int = 2
    reconfig_fraction: float = 0.2
    corrupt_prob: float = 0.5
    initial_awake: float = 0.7
    stay_awake: float = 0.8
    wake_prob: float = 0.4
    max_attempts: int = 10_000

    def __post_init__(self):
        if self.must_satisfy not in ("HM", "SRHM", "violate_SRHM_keep_HM"):
            raise ValueError(f"unknown condition {self.must_satisfy!r}")
        if self.mode not in (PLAIN, SIGNOFF):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.shape not in ("random", "sleep_then_corrupt"):
            raise ValueError(f"unknown shape {self.shape!r}")


def _random_schedule(c: ScheduleConstraints, rng: random.Random) -> Schedule:
    nodes = list(range(c.universe_size))
    members = [frozenset(rng.sample(nodes, c.members))]
    taus = []
    left_ever = set()
    for _ in range(1, c.epochs):
        cur = members[-1]
        leaving = [v for v in sorted(cur) if rng.random() < c.reconfig_fraction]
        pool = [v for v in nodes if v not in cur and not (c.mode == SIGNOFF and v in left_ever)]
        rng.shuffle(pool)
        leaving = leaving[: len(pool)]
        joining = pool[: len(leaving)]
        left_ever.update(leaving)
        taus.append(dict(zip(leaving, joining)))
        members.append((cur - set(leaving)) | set(joining))

    corrupt_epoch = {}
    budget = rng.randint(0, c.adversary_budget)
    for v in rng.sample(nodes, min(budget, len(nodes))):
        if rng.random() < c.corrupt_prob:
            corrupt_epoch[v] = rng.randrange(c.epochs)

    awake = []
    state = {v: rng.random() < c.initial_awake for v in nodes}
    for _ in range(c.epochs):
        awake.append(frozenset(v for v in nodes if state[v]))
        for v in nodes:
            state[v] = rng.random() < (c.stay_awake if state[v] else c.wake_prob)
    return from_epochs(
        c.universe_size,
        c.epoch_len,
        members,
        awake,
        corrupt_epoch,
        taus if c.mode == SIGNOFF else None,
    )


def sleep_then_corrupt(
    rng: random.Random,
    members: int,
    epoch_len: int,
    epochs: int,
    universe_size: int,
    honest: Optional[int] = None,
    sleepers: Optional[int] = None,
    mode: str = PLAIN,
) -> Schedule:
    """Template in which epoch-0 sleepers are swapped out and then corrupted.

    Epoch 0: ``honest`` members awake, ``sleepers`` members asleep.  At the
    start of epoch 1 the sleepers are replaced by fresh members and corrupted;
    as many extra non-member nodes are adversarial.  One probe node boots at
    the start of a later epoch.  When ``sleepers >= honest`` the schedule keeps
    HM but violates SR-HM at the epoch-0/epoch-1 boundary.
    """
    if epochs < 2:
        raise ScheduleError("template needs at least two epochs")
    if honest is None:
        honest = rng.randint(1, max(1, members // 2))
    if sleepers is None:
        sleepers = members - honest
    if honest + sleepers != members or honest < 1 or sleepers < 1:
        raise ScheduleError("template needs at least one honest and one sleeping member")
    need = members + 2 * sleepers + 1
    if universe_size < need:
        raise ScheduleError(f"template needs a universe of at least {need} nodes")
    ids = rng.sample(range(universe_size), universe_size)
    q1 = ids[:honest]
    sleeping = ids[honest:members]
    joiners = ids[members : members + sleepers]
    extra_bad = ids[members + sleepers : members + 2 * sleepers]
    probe = ids[members + 2 * sleepers]
    boot_epoch = rng.randint(1, epochs - 1)
    m0 = frozenset(q1) | frozenset(sleeping)
    m1 = frozenset(q1) | frozenset(joiners)
    membership = [m0] + [m1] * (epochs - 1)
    awake = [frozenset(q1)]
    for e in range(1, epochs):
        up = set(q1) | set(joiners)
        if e >= boot_epoch:
            up.add(probe)
        awake.append(frozenset(up))
    corrupt = {v: 1 for v in sleeping}
    corrupt.update({v: 0 for v in extra_bad})
    taus = None
    if mode == SIGNOFF:
        taus = [dict(zip(sorted(sleeping), sorted(joiners)))] + [{}] * (epochs - 2)
    return from_epochs(universe_size, epoch_len, membership, awake, corrupt, taus)


def gen_schedule(constraints: ScheduleConstraints, rng_seed: int) -> Schedule:
    """Draw a schedule meeting ``constraints.must_satisfy``; deterministic in the seed."""
    c = constraints
    rng = random.Random(rng_seed)
    want = c.must_satisfy
    srhm_mode = SIGNOFF if c.mode == SIGNOFF else PLAIN
    for attempt in range(1, c.max_attempts + 1):
        if want == "violate_SRHM_keep_HM":
            k = sleep_then_corrupt(rng, c.members, c.epoch_len, c.epochs, c.universe_size, mode=c.mode)
            if check_hm(k) and not check_srhm(k, PLAIN):
                return k
            continue
        if c.shape == "sleep_then_corrupt":
            honest = rng.randint(max(2, c.members // 2 + 1), c.members - 1) if c.members > 2 else 1
            k = sleep_then_corrupt(
                rng, c.members, c.epoch_len, c.epochs, c.universe_size, honest=honest, mode=c.mode
            )
        else:
            k = _random_schedule(c, rng)
        if not check_hm(k):
            continue
        if want == "SRHM" and not check_srhm(k, srhm_mode):
            continue
        return k
    raise GenerationFailure(f"no schedule satisfying {want}", c.max_attempts)


# --------------------------------------------------------------------------
# text format

HEADER = "darsim-schedule 1"


def _ids(nodes) -> str:
    return " ".join(str(v) for v in sorted(nodes))


def dumps(k: Schedule) -> str:
    lines = [
        HEADER,
        f"universe {k.universe}",
        f"epoch_len {k.epoch_len}",
        f"horizon {k.horizon}",
        f"mode {k.mode}",
    ]
    for e, m in enumerate(k.membership):
        lines.append(f"members {e} : {_ids(m)}".rstrip())
    if k.signoff is not None:
        for e, pairs in enumerate(k.signoff):
            lines.append(f"tau {e} : {' '.join(f'{a}>{b}' for a, b in pairs)}".rstrip())
    prev_h, prev_a = frozenset(), frozenset()
    for t in range(k.horizon):
        h, a = k.awake[t], k.adversarial[t]
        for kind, nodes in (("wake", h - prev_h), ("sleep", prev_h - h), ("corrupt", a - prev_a)):
            if nodes:
                lines.append(f"round {t} {kind} : {_ids(nodes)}")
        prev_h, prev_a = h, a
    return "\n".join(lines) + "\n"


class _Line:
    def __init__(self, text: str, number: int):
        self.text = text
        self.number = number

    def error(self, message: str, token: Optional[str] = None) -> ScheduleParseError:
        col = self.text.find(token) + 1 if token and token in self.text else 1
        return ScheduleParseError(message, self.number, col)

    def int_at(self, token: str) -> int:
        try:
            value = int(token)
        except ValueError:
            raise self.error(f"expected an integer, got {token!r}", token) from None
        if value < 0:
            raise self.error("negative value", token)
        return value


def iter_lines(text: str):
    for number, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].rstrip()
        if body.strip():
            yield _Line(body, number)


def loads(text: str) -> Schedule:
    lines = list(iter_lines(text))
    if not lines or lines[0].text.strip() != HEADER:
        raise ScheduleParseError(f"missing header {HEADER!r}", lines[0].number if lines else 1, 1)
    scalars: dict = {}
    members: dict = {}
    taus: dict = {}
    deltas: dict = {}
    for line in lines[1:]:
        head, sep, tail = line.text.partition(":")
        words = head.split()
        key = words[0]
        if key in ("universe", "epoch_len", "horizon", "mode"):
            if sep or len(words) != 2:
                raise line.error(f"'{key}' takes exactly one value", key)
            if key in scalars:
                raise line.error(f"duplicate '{key}'", key)
            scalars[key] = words[1] if key == "mode" else line.int_at(words[1])
        elif key in ("members", "tau"):
            if not sep or len(words) != 2:
                raise line.error(f"expected '{key} <epoch> : ...'", key)
            e = line.int_at(words[1])
            target = members if key == "members" else taus
            if e in target:
                raise line.error(f"duplicate '{key} {e}'", key)
            if key == "members":
                target[e] = frozenset(line.int_at(w) for w in tail.split())
            else:
                pairs = {}
                for w in tail.split():
                    a, arrow, b = w.partition(">")
                    if not arrow:
                        raise line.error(f"expected 'a>b', got {w!r}", w)
                    pairs[line.int_at(a)] = line.int_at(b)
                target[e] = pairs
        elif key == "round":
            if not sep or len(words) != 3 or words[2] not in ("wake", "sleep", "corrupt"):
                raise line.error("expected 'round <t> wake|sleep|corrupt : ...'", key)
            t = line.int_at(words[1])
            slot = deltas.setdefault(t, {})
            if words[2] in slot:
                raise line.error(f"duplicate '{words[2]}' at round {t}", words[2])
            slot[words[2]] = frozenset(line.int_at(w) for w in tail.split())
        else:
            raise line.error(f"unknown key {key!r}", key)
    for key in ("universe", "epoch_len", "horizon", "mode"):
        if key not in scalars:
            raise ScheduleParseError(f"missing '{key}'", lines[-1].number, 1)
    if scalars["mode"] not in (PLAIN, SIGNOFF):
        raise ScheduleParseError(f"unknown mode {scalars['mode']!r}", lines[0].number, 1)
    horizon, R = scalars["horizon"], scalars["epoch_len"]
    if R < 1:
        raise ScheduleParseError("epoch_len must be positive", lines[0].number, 1)
    n_epochs = max(1, math.ceil(horizon / R))
    if sorted(members) != list(range(n_epochs)):
        raise ScheduleParseError(f"need 'members' for epochs 0..{n_epochs - 1}", lines[-1].number, 1)
    for t in deltas:
        if t >= horizon:
            raise ScheduleParseError(f"round {t} beyond horizon", lines[-1].number, 1)
    awake, adversarial = [], []
    h, a = frozenset(), frozenset()
    for t in range(horizon):
        d = deltas.get(t, {})
        h = (h - d.get("sleep", frozenset())) | d.get("wake", frozenset())
        a = a | d.get("corrupt", frozenset())
        awake.append(h)
        adversarial.append(a)
    signoff = None
    if scalars["mode"] == SIGNOFF:
        signoff = tuple(taus.get(e, {}) for e in range(n_epochs - 1))
    elif taus:
        raise ScheduleParseError("'tau' lines require mode signoff", lines[-1].number, 1)
    try:
        return Schedule(
            universe=scalars["universe"],
            epoch_len=R,
            horizon=horizon,
            adversarial=tuple(adversarial),
            awake=tuple(awake),
            membership=tuple(members[e] for e in range(n_epochs)),
            signoff=signoff,
        )
    except ScheduleError as exc:
        raise ScheduleParseError(str(exc), lines[-1].number, 1) from exc


def load(path) -> Schedule:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def dump(k: Schedule, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(k))
