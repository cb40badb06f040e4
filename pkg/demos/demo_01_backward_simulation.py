"""
Backward simulation against a late booter
=========================================

A node that sleeps through whole epochs has to learn the current membership
from old votes.  If members of some past epoch were corrupted after they
slept, their keys still sign for that past period, and they can out-vote the
members who were honest and awake.
"""

from dataclasses import replace

from darsim import DAR, DARSO, ScheduleConstraints, check_srhm, gen_schedule, run
from darsim.adversary import BackwardSimStrategy
from darsim.schedule import SIGNOFF

# A generated template: HM holds at every round, SR-HM fails at the first epoch boundary.
c = ScheduleConstraints(universe_size=20, epoch_len=4, epochs=4, members=5, must_satisfy="violate_SRHM_keep_HM")
k = gen_schedule(c, 3)
print("SR-HM:", check_srhm(k).describe())

trace = run(k, DAR, BackwardSimStrategy(3), 3)
for b in trace.boots:
    print(f"boot node {b.node} at round {b.round}: got {sorted(b.membership)} decided {sorted(b.expected)}")
print("violations:", len(trace.violations))

# %%
# Same template, but the withdrawing sleepers sign off: they hand over their
# seat in a signed transaction and destroy the key.  Corrupting them later
# yields nothing to sign with.
k2 = gen_schedule(replace(c, mode=SIGNOFF), 3)
print("sign-off SR-HM:", check_srhm(k2, SIGNOFF).describe())
trace2 = run(k2, DARSO, BackwardSimStrategy(3), 3)
print("captured keys:", trace2.captures)
print("violations:", len(trace2.violations))
