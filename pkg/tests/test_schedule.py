import pytest
from hypothesis import given
from hypothesis import strategies as st

from darsim.schedule import (
    PLAIN,
    SIGNOFF,
    GenerationFailure,
    ModeError,
    Schedule,
    ScheduleConstraints,
    ScheduleError,
    ScheduleParseError,
    check_hm,
    check_srhm,
    dumps,
    from_epochs,
    gen_schedule,
    hon_range,
    invert,
    loads,
    permute,
    simulatable,
    sims,
    sleep_then_corrupt,
    srhm_margin,
    udsims,
    withdrawers,
)


@st.composite
def schedules(draw, signoff=None):
    n = draw(st.integers(3, 9))
    R = draw(st.integers(1, 3))
    epochs = draw(st.integers(1, 4))
    size = draw(st.integers(1, min(4, n - 1)))
    nodes = list(range(n))
    members = [frozenset(draw(st.permutations(nodes))[:size])]
    taus = []
    use_signoff = draw(st.booleans()) if signoff is None else signoff
    for _ in range(epochs - 1):
        cur = members[-1]
        out = draw(st.lists(st.sampled_from(sorted(cur)), unique=True, max_size=size))
        pool = [v for v in nodes if v not in cur]
        inn = draw(st.permutations(pool))[: len(out)]
        out = out[: len(inn)]
        taus.append(dict(zip(out, inn)))
        members.append((cur - set(out)) | set(inn))
    horizon = epochs * R
    adv, awake = [], []
    bad = frozenset()
    for _ in range(horizon):
        bad = bad | frozenset(draw(st.lists(st.sampled_from(nodes), max_size=1)))
        awake.append(frozenset(draw(st.lists(st.sampled_from(nodes), unique=True))) - bad)
        adv.append(bad)
    return Schedule(n, R, horizon, tuple(adv), tuple(awake), tuple(members), tuple(taus) if use_signoff else None)


def oracle_srhm(k, mode):
    """Literal double loop over the set definitions."""
    for tp in range(k.horizon):
        m = k.members_at(tp)
        for t in range(tp, k.horizon):
            hon = set().union(*(k.awake[r] for r in range(tp, t + 1)))
            s = set(k.adversarial[t]) - hon
            if mode == SIGNOFF:
                gone = set()
                for r in range(tp, t):
                    gone |= (k.members_at(r) - k.members_at(r + 1)) - k.adversarial[r]
                s -= gone
            if len(m & s) >= len(m & hon):
                return False, (tp, t)
    return True, None


def oracle_hm(k):
    for t in range(k.horizon):
        m = k.members_at(t)
        if len(m & k.adversarial[t]) >= len(m & k.awake[t]):
            return False, (t,)
    return True, None


@given(schedules())
def test_checkers_match_oracle(k):
    v = check_hm(k)
    assert (v.holds, v.witness) == oracle_hm(k)
    v = check_srhm(k, PLAIN)
    assert (v.holds, v.witness) == oracle_srhm(k, PLAIN)
    if k.mode == SIGNOFF:
        v = check_srhm(k, SIGNOFF)
        assert (v.holds, v.witness) == oracle_srhm(k, SIGNOFF)
        # disposal only helps
        assert check_srhm(k, SIGNOFF).holds or not check_srhm(k, PLAIN).holds


@given(schedules(), st.data())
def test_set_algebra(k, data):
    tp = data.draw(st.integers(0, k.horizon - 1))
    t = data.draw(st.integers(tp, k.horizon - 1))
    q = simulatable(k, tp, t)
    assert q.hon == hon_range(k, tp, t)
    assert q.sims == sims(k, tp, t)
    assert not q.hon & q.sims
    assert q.sims <= k.adversarial[t]
    if k.mode == SIGNOFF:
        assert q.udsims == udsims(k, tp, t) <= q.sims
        assert not withdrawers(k, tp, t) & k.adversarial[tp]
    else:
        with pytest.raises(ModeError):
            withdrawers(k, tp, t)
    s, h = srhm_margin(k, tp, t)
    assert h == len(k.members_at(tp) & q.hon)


@given(schedules(), st.data())
def test_permutation_preserves_verdicts(k, data):
    phi = data.draw(st.permutations(list(range(k.universe))))
    p = permute(k, phi)
    assert check_hm(p) == check_hm(k)
    assert check_srhm(p) == check_srhm(k)
    if k.mode == SIGNOFF:
        assert check_srhm(p, SIGNOFF) == check_srhm(k, SIGNOFF)
    assert permute(p, invert(phi)) == k


@given(schedules())
def test_text_round_trip(k):
    text = dumps(k)
    assert loads(text) == k
    assert dumps(loads(text)) == text


def test_parse_errors_report_position():
    good = dumps(from_epochs(4, 2, [{0, 1}], [{0, 1}], {}))
    with pytest.raises(ScheduleParseError) as exc:
        loads(good.replace("universe 4", "universe four"))
    assert exc.value.line == 2
    with pytest.raises(ScheduleParseError):
        loads(good + "color blue\n")
    with pytest.raises(ScheduleParseError):
        loads("darsim-schedule 9\n")


def test_validation():
    with pytest.raises(ScheduleError):
        Schedule(3, 1, 2, ({0}, set()), (set(), set()), ({1}, {1}))  # corruption not monotone
    with pytest.raises(ScheduleError):
        Schedule(3, 1, 1, ({0},), ({0},), ({1},))  # both awake and adversarial
    with pytest.raises(ScheduleError):
        Schedule(3, 1, 2, ((), ()), ((), ()), ({0}, {1}), signoff=({},))


def test_tau_and_booting():
    k = from_epochs(6, 3, [{0, 1}, {0, 2}], [{0, 1}, {0, 2, 3}], {}, [{1: 2}])
    assert k.tau(0) == {1: 2}
    assert k.tau(5) == {}
    assert k.booting_at(2) == set()
    assert k.booting_at(3) == {2, 3}
    assert k.awake[3] == {0}  # joiners are booting in the first round
    assert k.awake[4] == {0, 2, 3}


def test_template_violates_srhm_only():
    import random

    for seed in range(20):
        k = sleep_then_corrupt(random.Random(seed), 5, 4, 3, 20)
        assert check_hm(k)
        v = check_srhm(k)
        assert not v
        assert v.witness[0] < k.epoch_len  # the violation starts in epoch 0


def test_template_with_signoff_satisfies_signoff_srhm():
    import random

    k = sleep_then_corrupt(random.Random(1), 5, 4, 3, 20, mode=SIGNOFF)
    assert not check_srhm(k, PLAIN)
    assert check_srhm(k, SIGNOFF)


@pytest.mark.parametrize("want", ["HM", "SRHM", "violate_SRHM_keep_HM"])
def test_generator_meets_constraints(want):
    c = ScheduleConstraints(universe_size=14, epoch_len=3, epochs=4, members=5, must_satisfy=want)
    for seed in range(8):
        k = gen_schedule(c, seed)
        assert k == gen_schedule(c, seed)
        assert check_hm(k)
        assert bool(check_srhm(k)) == (want != "violate_SRHM_keep_HM") or want == "HM"
        assert k.n_epochs == 4 and len(k.genesis) == 5


def test_generator_signoff_mode():
    c = ScheduleConstraints(universe_size=16, epoch_len=3, epochs=5, members=5, mode=SIGNOFF, reconfig_fraction=0.4)
    k = gen_schedule(c, 2)
    assert k.mode == SIGNOFF and check_srhm(k, SIGNOFF)
    left = set()
    for e in range(k.n_epochs - 1):
        assert not set(k.tau(e).values()) & left  # nobody returns after leaving
        left |= set(k.tau(e))


def test_generator_failure():
    c = ScheduleConstraints(universe_size=6, epoch_len=2, epochs=2, members=5, initial_awake=0.0, wake_prob=0.0, max_attempts=5)
    with pytest.raises(GenerationFailure):
        gen_schedule(c, 0)
