"""
Two worlds, one inbox
=====================

The swap construction exchanges honest members with simulatable ones and
runs the protocol twice.  Each world is then padded with re-signed copies of
the other world's messages.  The booting node sees byte-identical inboxes,
yet the decided logs conflict, so one of its two answers must be wrong.
"""

from darsim import ScheduleConstraints, gen_schedule
from darsim.attacklab import build_plan, run_attack

k = gen_schedule(
    ScheduleConstraints(universe_size=20, epoch_len=4, epochs=4, members=5, must_satisfy="violate_SRHM_keep_HM"), 7
)
plan = build_plan(k)
print(plan.describe())

# %%
report = run_attack(plan, seed=7)
print(report.to_text())
