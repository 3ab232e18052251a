"""Drive the built-in scenarios in closed loop and compare sampler sets.

Run:  python3 demos/closed_loop_suite.py
"""

from mapfree.scenarios import empty_road, scenario_suite
from mapfree.simulator import SAMPLER_COMBOS, compare_samplers, run_closed_loop

print("scenario          coll  fallb  disc  done    dist")
for sc in scenario_suite():
    m = run_closed_loop(sc).metrics
    done = "-" if m.completion_time is None else f"{m.completion_time:.1f}s"
    print(f"{sc.name:16s} {m.collisions:5d} {m.fallbacks:6d} {m.discomfort:5d}  {done:6s} {m.distance:6.1f} m")

# without any sampler the planner can only brake
print("\nempty road by sampler set:")
for row in compare_samplers([empty_road()], SAMPLER_COMBOS):
    done = "-" if row["completion_time"] is None else f"{row['completion_time']:.1f}s"
    print(f"  {row['combo']:14s} fallbacks={row['fallbacks']:3d} completed={done:6s} distance={row['distance']:.1f} m")
