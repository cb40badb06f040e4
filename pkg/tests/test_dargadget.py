import pytest

from darsim.core import Envelope, LogEntry, LVote, MembershipChange, Payload
from darsim.dargadget import (
    DarNode,
    InvariantFault,
    NoQuorum,
    RoundContext,
    VoteBook,
    heaviest_log,
    lvote_valid,
    oldest_votes,
    pick_heaviest,
    sign_lvote,
    tally_logs,
)
from darsim.fscrypto import FSParams, gen

T = 6


def keys(n):
    pks, sks = {}, {}
    for v in range(n):
        pks[v], sks[v] = gen(FSParams(T), b"gk%d" % v, signer=v)
    return pks, sks


def L(*items):
    out = []
    for data, e in items:
        v = MembershipChange(data) if isinstance(data, (set, frozenset)) else Payload(data)
        out.append(LogEntry(v, e))
    return tuple(out)


def test_lvote_validity():
    pks, sks = keys(2)
    v = sign_lvote(sks[0], 0, L((b"x", 0)))
    assert lvote_valid(v, pks)
    assert not lvote_valid(LVote(1, v.log, v.sig), pks)  # wrong voter
    assert not lvote_valid(LVote(0, L((b"y", 0)), v.sig), pks)
    assert not lvote_valid(LVote(0, v.log), pks)


def test_oldest_vote_per_member():
    pks, sks = keys(3)
    a, b = L((b"a", 0)), L((b"a", 0), (b"b", 1))
    msgs = [sign_lvote(sks[0], 0, a)]
    sks[0].update_to(2)
    msgs.append(sign_lvote(sks[0], 0, b))
    sks[1].update_to(1)
    msgs.append(sign_lvote(sks[1], 1, b))
    book = VoteBook(msgs, pks)
    got = oldest_votes(book, 0, {0, 1, 2})
    assert got.chosen[0].log == a and got.chosen[1].log == b
    assert 2 not in got.chosen
    assert got.examined == 2
    later = oldest_votes(book, 1, {0, 1})
    assert later.chosen[0].period == 2


def test_equivocators_are_dropped():
    pks, sks = keys(2)
    msgs = [sign_lvote(sks[0], 0, L((b"a", 0))), sign_lvote(sks[0], 0, L((b"b", 0))), sign_lvote(sks[1], 1, L((b"a", 0)))]
    got = oldest_votes(VoteBook(msgs, pks), 0, {0, 1})
    assert got.equivocators == {0}
    assert set(got.chosen) == {1}
    assert got.examined == 3


def test_tally_truncates_and_breaks_ties_by_hash():
    a = L((b"a", 0), (b"late", 1))
    b = L((b"a", 0))
    c = L((b"c", 0))
    votes = {0: LVote(0, a), 1: LVote(1, b), 2: LVote(2, c)}
    counts = tally_logs(votes, 0)
    assert counts == {b: 2, c: 1}
    assert heaviest_log(votes, 0) == b
    tie = {b: 1, c: 1}
    from darsim.core import log_hash

    assert pick_heaviest(tie) == min((b, c), key=log_hash)
    with pytest.raises(NoQuorum):
        heaviest_log({}, 0)


def _play(nodes, epoch_logs, pks, R=3):
    """Drive awake nodes through whole epochs; return every message sent."""
    sent = []
    for e, log in enumerate(epoch_logs):
        for r in range(R):
            t = e * R + r
            for n in nodes:
                sent += n.on_round(RoundContext(t, e, R, log, [], pks))
    return sent


def test_awake_nodes_vote_once_per_epoch_and_evolve():
    pks, sks = keys(3)
    g = {0, 1, 2}
    nodes = [DarNode(v, sks[v], g) for v in g]
    logs = [L((b"e0", 0)), L((b"e0", 0), ({0, 1, 3}, 1))]
    sent = _play(nodes, logs, pks)
    assert len(sent) == 6
    assert {v.period for v in sent} == {0, 1}
    assert all(n.key.period == 2 for n in nodes)
    assert nodes[0].membership == {0, 1, 3}


def test_epoch_end_with_stale_key_is_a_fault():
    pks, sks = keys(1)
    n = DarNode(0, sks[0], {0})
    sks[0].update_to(2)
    with pytest.raises(InvariantFault):
        n.awake_epoch_end((), 0)


def test_bootstrap_follows_member_votes():
    pks, sks = keys(5)
    g = {0, 1, 2}
    nodes = [DarNode(v, sks[v], g) for v in sorted(g)]
    logs = [L((b"e0", 0), ({0, 1, 3}, 0)), L((b"e0", 0), ({0, 1, 3}, 0), (b"e1", 1))]
    sent = _play(nodes[:2], logs[:1], pks)  # node 2 sleeps in epoch 0, so 3 replaces it
    sent += [sign_lvote(sks[3].update_to(1), 3, logs[1])]
    sent += _play([], logs, pks)
    sleeper = DarNode(4, sks[4], g)
    res = sleeper.bootstrap(2, [Envelope(m.voter, 0, m) for m in sent], pks)
    assert res.membership == {0, 1, 3}
    assert [t.epoch for t in res.tallies] == [0, 1]
    assert res.examined >= 2
    assert sleeper.key.period == 2
    # no votes at all for an epoch
    with pytest.raises(NoQuorum):
        DarNode(4, gen(FSParams(T), b"z", signer=4)[1], g).bootstrap(1, [], pks)
