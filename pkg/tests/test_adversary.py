from collections import defaultdict

import pytest

from darsim import oracles
from darsim.adversary import BackwardSimStrategy, HiddenSpendStrategy, NullStrategy, make_strategy
from darsim.core import LVote
from darsim.netsim import DAR, DARSO, run
from darsim.schedule import SIGNOFF, ScheduleConstraints, gen_schedule


def test_make_strategy():
    assert isinstance(make_strategy("null"), NullStrategy)
    assert make_strategy("hidden-spend", 1, double_rate=1.0).double_rate == 1.0
    with pytest.raises(ValueError):
        make_strategy("nope")


def test_null_strategy_key_use():
    from darsim.fscrypto import FSParams, gen

    s = NullStrategy()
    _, sk = gen(FSParams(4), b"n", signer=2)
    sk.update_to(1)
    s.on_corrupt(2, sk.clone(), None)
    assert s.signing_key(2, 0) is None
    assert s.signing_key(2, 3).period == 3
    assert s.keys[2].period == 1  # the stored capture never moves
    assert s.withdraw(2, 5, 2, None).epoch == 2
    s.on_corrupt(3, None, None)
    assert s.signing_key(3, 1) is None


@pytest.mark.parametrize("seed", range(6))
def test_backward_sim_never_equivocates(seed):
    c = ScheduleConstraints(universe_size=20, epoch_len=4, epochs=5, members=5, must_satisfy="violate_SRHM_keep_HM")
    k = gen_schedule(c, seed)
    strat = BackwardSimStrategy(seed)
    tr = run(k, DAR, strat, seed)
    per = defaultdict(set)
    for env in tr.pool:
        if isinstance(env.body, LVote):
            per[(env.body.voter, env.body.period)].add(env.body.log)
    assert all(len(logs) == 1 for logs in per.values())
    assert strat._own  # it did forge
    assert tr.violations  # and the template is enough to mislead a booter


def test_tally_bounds_hold_on_any_schedule():
    # the inequalities are about who can sign, so they hold whether or not SR-HM does
    for want in ("SRHM", "violate_SRHM_keep_HM"):
        c = ScheduleConstraints(universe_size=20, epoch_len=4, epochs=4, members=5, must_satisfy=want)
        for seed in range(5):
            tr = run(gen_schedule(c, seed), DAR, BackwardSimStrategy(seed), seed)
            assert oracles.tally_bounds(tr) == []


def test_hidden_and_double_spends_are_recorded():
    c = ScheduleConstraints(
        universe_size=18, epoch_len=4, epochs=6, members=5, mode=SIGNOFF, adversary_budget=6, corrupt_prob=1.0
    )
    hidden = doubles = 0
    for seed in range(15):
        k = gen_schedule(c, seed)
        strat = HiddenSpendStrategy(seed, hidden_rate=1.0, double_rate=1.0)
        tr = run(k, DARSO, strat, seed)
        hidden += len(strat.hidden)
        doubles += len(strat.double_spent)
        assert not any(oracles.run_all(tr).values())
        assert not tr.violations
        decided = set().union(*tr.decided_txs.values()) if tr.decided_txs else set()
        assert not {(a, b, e) for a, b, e in strat.hidden} & decided
    assert hidden > 0 and doubles > 0
