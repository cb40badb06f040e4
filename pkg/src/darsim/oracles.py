"""Trace oracles: per-boot checks recomputed from the schedule and the trace.

Each checker returns a list of human-readable problems; empty means the
property held at every boot.
"""

from __future__ import annotations

from .core import Tx, compatible, truncate_to_epoch
from .darsogadget import double_spenders, tx_key
from .schedule import SIGNOFF, hon_range, sims, udsims, withdrawers


def tally_bounds(trace) -> list:
    """Honest votes back the decided prefix; forged votes stay below the simulatable count.

    For a boot at round ``t`` and a replayed epoch ``e`` ending at ``t'``:
    votes for the decided candidate >= |M ∩ hon(t', t)| and votes for any
    conflicting candidate <= |M ∩ sims(t', t)|.  Under sign-off, withdrawers
    drop out of the honest side and ``udsims`` bounds the forged side.
    """
    k = trace.schedule
    problems = []
    for b in trace.boots:
        for tally in b.result.tallies:
            e = tally.epoch
            if tally.members != trace.decided_members[e]:
                continue  # an earlier step already went wrong; reported elsewhere
            t_prime = k.last_round(e)
            if t_prime > b.round:
                continue
            members = trace.decided_members[e]
            truth = truncate_to_epoch(trace.epoch_logs[e], e)
            honest = hon_range(k, t_prime, b.round)
            if k.mode == SIGNOFF:
                # withdrawers may have destroyed their key before voting
                honest = honest - withdrawers(k, t_prime, b.round)
                forgeable = udsims(k, t_prime, b.round)
            else:
                forgeable = sims(k, t_prime, b.round)
            hon = len(members & honest)
            sim = len(members & forgeable)
            got = tally.counts.get(truth, 0)
            if got < hon:
                problems.append(f"boot {b.node}@{b.round} epoch {e}: decided log has {got} < {hon} votes")
            for cand, n in tally.counts.items():
                if not compatible(cand, truth) and n > sim:
                    problems.append(
                        f"boot {b.node}@{b.round} epoch {e}: conflicting log has {n} > {sim} votes"
                    )
    return problems


def _pool_txs(trace, upto_round: int) -> list:
    out = []
    for env in trace.pool:
        if env.sent_round > upto_round:
            break
        if isinstance(env.body, Tx):
            out.append(env.body)
    return out


def sandwich(trace) -> list:
    """decided txs so far ⊆ txs used by the estimate ⊆ T \\ C at every replayed epoch."""
    problems = []
    for b in trace.boots:
        if not b.result.estimates:
            continue
        txs = _pool_txs(trace, b.round)
        seen = {tx_key(tx) for tx in txs}
        spenders = double_spenders(txs)
        decided_all = set().union(*trace.decided_txs.values()) if trace.decided_txs else set()
        conflicting = {c for c in seen if c[0] in spenders and c not in decided_all}
        allowed = seen - conflicting
        for est in b.result.estimates:
            decided = set()
            for e in range(est.epoch):
                decided |= trace.decided_txs.get(e, set())
            if not decided <= est.applied:
                problems.append(
                    f"boot {b.node}@{b.round} E_{est.epoch}: missing decided txs {sorted(decided - est.applied)}"
                )
            if not est.applied <= allowed:
                problems.append(
                    f"boot {b.node}@{b.round} E_{est.epoch}: uses txs outside T\\C {sorted(est.applied - allowed)}"
                )
            if len(est.members) != len(trace.schedule.genesis):
                problems.append(f"boot {b.node}@{b.round} E_{est.epoch}: size {len(est.members)}")
    return problems


def honest_inclusion(trace) -> list:
    k = trace.schedule
    problems = []
    for b in trace.boots:
        if not b.result.estimates:
            continue
        final = b.result.estimates[-1]
        must = k.members_at(b.round) - k.adversarial_at(b.round)
        if final.epoch == k.epoch_of(b.round) and not must <= final.members:
            problems.append(f"boot {b.node}@{b.round}: estimate misses honest {sorted(must - final.members)}")
    return problems


def final_tally(trace) -> list:
    """Decided set gets >= |H ∩ M| membership votes; any other set <= |A ∩ M|."""
    k = trace.schedule
    problems = []
    for b in trace.boots:
        counts = b.result.mvote_counts
        if not counts:
            continue
        t = b.round
        m = k.members_at(t)
        decided = b.expected
        if counts.get(decided, 0) < len(k.awake[t] & m):
            problems.append(f"boot {b.node}@{t}: decided set has {counts.get(decided, 0)} votes")
        for s, n in counts.items():
            if s != decided and n > len(k.adversarial_at(t) & m):
                problems.append(f"boot {b.node}@{t}: other set has {n} votes")
    return problems


def fallback_coverage(trace) -> list:
    """Every replayed epoch whose transactions include a double spender took the fallback."""
    problems = []
    for b in trace.boots:
        if not b.result.estimates:
            continue
        txs = _pool_txs(trace, b.round)
        spenders = double_spenders(txs)
        chain = b.result.estimates
        for prev, est in zip(chain, chain[1:]):
            e = prev.epoch
            hit = any(tx.epoch == e and tx.sender in prev.members and tx.sender in spenders for tx in txs)
            if hit and est.path != "fallback":
                problems.append(f"boot {b.node}@{b.round} epoch {e}: double spend without fallback")
    return problems


def run_all(trace) -> dict:
    out = {"tally": tally_bounds(trace)}
    if trace.gadget == "darso":
        out.update(
            sandwich=sandwich(trace),
            honest_inclusion=honest_inclusion(trace),
            final_tally=final_tally(trace),
            fallback=fallback_coverage(trace),
        )
    return out
