import pytest

from darsim.core import Envelope, LogEntry, MembershipChange, MVote, Payload, Tx
from darsim.dargadget import NoQuorum, RoundContext, sign_lvote
from darsim.darsogadget import (
    DarsoNode,
    MalformedTau,
    apply_txs,
    double_spenders,
    mvote_valid,
    sign_mvote,
    sign_tx,
    tx_valid,
)
from darsim.fscrypto import FSParams, gen

R = 3


def keys(n, T=6):
    pks, sks = {}, {}
    for v in range(n):
        pks[v], sks[v] = gen(FSParams(T), b"so%d" % v, signer=v)
    return pks, sks


def env(body):
    sender = getattr(body, "sender", None)
    return Envelope(body.voter if sender is None else sender, 0, body)


def test_apply_txs():
    assert apply_txs({1, 2, 3}, [Tx(1, 7, 0), Tx(2, 8, 0)]) == {3, 7, 8}
    for bad in ([Tx(1, 7, 0), Tx(1, 8, 0)], [Tx(1, 7, 0), Tx(2, 7, 0)], [Tx(9, 7, 0)], [Tx(1, 2, 0)]):
        with pytest.raises(MalformedTau):
            apply_txs({1, 2, 3}, bad)


def test_double_spenders():
    txs = [Tx(1, 7, 0), Tx(1, 7, 0), Tx(2, 8, 0), Tx(2, 9, 0), Tx(3, 5, 1), Tx(3, 6, 2)]
    assert double_spenders(txs) == {2, 3}


def test_tx_must_be_signed_at_its_epoch():
    pks, sks = keys(2)
    tx = sign_tx(sks[0], 0, 5, 2)
    assert sks[0].period == 2 and tx_valid(tx, pks)
    sks[1].update_to(3)
    wrong = Tx(1, 5, 2, sks[1].sign(Tx(1, 5, 2).signing_bytes()))
    assert not tx_valid(wrong, pks)
    mv = sign_mvote(sks[0], 0, 7, {0, 1})
    assert mvote_valid(mv, pks, epoch_len=R)
    assert not mvote_valid(MVote(0, 3, {0, 1}, mv.sig), pks, epoch_len=R)


def test_sign_off_disposes_key():
    pks, sks = keys(1)
    n = DarsoNode(0, sks[0], {0}, R)
    tx = n.sign_off(4, 0)
    assert tx_valid(tx, pks) and n.key.disposed and n.signed_off
    assert n.sign_off(5, 0) is None


def _honest_history(pks, sks, genesis, transitions):
    """Messages of fully awake members through len(transitions) epochs.

    ``transitions[e]`` maps withdrawer -> replacement at the end of epoch e.
    """
    members = frozenset(genesis)
    log, out, decided = (), [], []
    for e, tau in enumerate(transitions):
        nxt = (members - set(tau)) | set(tau.values())
        log = log + (LogEntry(Payload(b"e%d" % e), e), LogEntry(MembershipChange(nxt), e))
        for t in range(e * R, e * R + R):
            for v in sorted(members):
                out.append(sign_mvote(sks[v], v, t, members))
        for v in sorted(members):
            if sks[v].period < e:
                sks[v].update_to(e)
            out.append(sign_lvote(sks[v], v, log))
        for a, b in sorted(tau.items()):
            out.append(sign_tx(sks[a], a, b, e))
            sks[a].dispose()
        decided.append(nxt)
        members = nxt
    # current-epoch membership votes
    e = len(transitions)
    for v in sorted(members):
        if sks[v].period < e:
            sks[v].update_to(e)
        out.append(sign_mvote(sks[v], v, e * R, members))
    return [env(b) for b in out], decided


def test_bootstrap_uses_transactions_without_fallback():
    pks, sks = keys(12, T=8)
    inbox, decided = _honest_history(pks, sks, {0, 1, 2, 3}, [{0: 4}, {}, {1: 5}])
    boot = DarsoNode(11, sks[11], {0, 1, 2, 3}, R)
    res = boot.bootstrap(3, inbox, pks)
    assert res.membership == decided[-1] == {2, 3, 4, 5}
    assert res.fallbacks == []
    assert [e.path for e in res.estimates[1:]] == ["estimate"] * 3
    assert res.estimates[-1].applied == {(0, 4, 0), (1, 5, 2)}


def test_double_spend_forces_fallback():
    pks, sks = keys(12, T=8)
    rogue = sks[2].clone()
    inbox, decided = _honest_history(pks, sks, {0, 1, 2, 3}, [{0: 4}, {}])
    inbox.append(env(sign_tx(rogue, 2, 9, 0)))
    inbox.append(env(sign_tx(rogue.clone(), 2, 10, 0)))
    boot = DarsoNode(11, sks[11], {0, 1, 2, 3}, R)
    res = boot.bootstrap(2, inbox, pks)
    assert res.fallbacks == [0]
    assert res.estimates[1].path == "fallback"
    assert res.membership == decided[-1]


def test_membership_tally_ignores_split_voters():
    pks, sks = keys(6)
    g = {0, 1, 2}
    inbox = [env(sign_mvote(sks[v], v, 0, g)) for v in (0, 1)]
    inbox += [env(sign_mvote(sks[2], 2, 1, {3, 4, 5})), env(sign_mvote(sks[2], 2, 1, {0, 1, 5}))]
    res = DarsoNode(5, sks[5], g, R).bootstrap(0, inbox, pks)
    assert res.membership == g
    assert res.mvote_counts == {frozenset(g): 2}
    with pytest.raises(NoQuorum):
        DarsoNode(5, keys(6)[1][5], g, R).bootstrap(0, [], pks)


def test_awake_node_gossips_and_tracks_withdrawals():
    pks, sks = keys(6)
    g = frozenset({0, 1, 2})
    n = DarsoNode(0, sks[0], g, R)
    log = (LogEntry(MembershipChange({0, 1, 3}), 0),)
    out = n.on_round(RoundContext(0, 0, R, (), [], pks))
    assert [type(m) for m in out] == [MVote]
    tx = sign_tx(sks[2], 2, 3, 0)
    n.on_round(RoundContext(1, 0, R, (), [env(tx)], pks))
    out = n.on_round(RoundContext(2, 0, R, log, [], pks))
    assert tx in out  # gossiped once, the round after it arrived
    assert n.membership == {0, 1, 3}
    assert n.checkpoint.epoch == 1 and n.checkpoint.applied == {(2, 3, 0)}
