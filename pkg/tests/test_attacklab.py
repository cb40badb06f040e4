import pytest

from darsim.attacklab import (
    PlanInfeasible,
    PreconditionFailed,
    build_plan,
    run_attack,
)
from darsim.netsim import DARSO
from darsim.schedule import SIGNOFF, ScheduleConstraints, check_srhm, from_epochs, gen_schedule, permute


def template(seed, mode="plain"):
    c = ScheduleConstraints(universe_size=20, epoch_len=4, epochs=4, members=5, mode=mode, must_satisfy="violate_SRHM_keep_HM")
    return gen_schedule(c, seed)


def test_plan_structure():
    k = template(0)
    p = build_plan(k)
    assert p.witness == check_srhm(k).witness
    assert len(p.q2) == len(p.swapped) == len(p.q1)
    assert len(p.q3) == len(p.q4)
    assert not (p.q1 & p.q2) and not (p.q3 & p.q4)
    assert all(p.phi[p.phi[v]] == v for v in p.phi)
    assert p.permuted == permute(k, p.phi)
    assert p.probe not in p.phi
    assert p.probe in k.booting_at(p.boot_round)
    assert "witness" in p.describe()


def test_plan_preconditions():
    k = gen_schedule(ScheduleConstraints(universe_size=12, epoch_len=4, epochs=3, members=5), 0)
    with pytest.raises(PreconditionFailed):
        build_plan(k)
    flat = from_epochs(6, 4, [{0, 1, 2}] * 2, [{0, 1, 2}] * 2, {})
    with pytest.raises(PlanInfeasible):
        build_plan(flat, strict=False)


@pytest.mark.parametrize("seed", range(4))
def test_attack_demonstrates_violation(seed):
    rep = run_attack(build_plan(template(seed)), seed=seed)
    assert rep.inbox_equal
    assert rep.conflicting
    assert rep.demonstrated
    assert rep.violations == 1
    assert all(w.unforgeable == 0 for w in rep.worlds)
    text = rep.to_text()
    assert text.startswith("attack-report 1\n")
    assert f"violated-in {rep.branch()}" in text


def test_attack_is_deterministic():
    plan = build_plan(template(5))
    assert run_attack(plan, seed=1).to_text() == run_attack(plan, seed=1).to_text()


def test_negative_control_and_disposal():
    ctrl = gen_schedule(ScheduleConstraints(universe_size=20, epoch_len=4, epochs=4, members=5, shape="sleep_then_corrupt"), 2)
    assert not run_attack(build_plan(ctrl, strict=False), seed=2).demonstrated
    k = template(3, mode=SIGNOFF)
    assert check_srhm(k, SIGNOFF)
    rep = run_attack(build_plan(k), gadget=DARSO, seed=3)
    assert not rep.demonstrated
    assert sum(w.unforgeable for w in rep.worlds) > 0
