"""
What a late booter has to read
==============================

With plain voting a booter replays every missed epoch from membership votes.
With sign-off it mostly applies the handful of exit transactions and checks
the current membership votes.  This sweeps the reconfiguration rate and
prints the number of messages each gadget examined.
"""

from dataclasses import replace
from pathlib import Path

from darsim.scenario import load_sweep, run_sweep

sw = load_sweep(Path(__file__).resolve().parents[1] / "scenarios" / "efficiency.sweep")
sw = replace(sw, fractions=(0.0, 0.02, 0.1), seeds=1)
res = run_sweep(sw)

print(f"{'fraction':>9} {'dar':>8} {'darso':>8} {'ratio':>7}")
for frac in sw.fractions:
    cost = {o.trace.gadget: o.trace.boot_messages() for o in res.outcomes if o.scenario.generator.reconfig_fraction == frac}
    print(f"{frac:9.2f} {cost['dar']:8d} {cost['darso']:8d} {res.ratio(frac):7.3f}")
