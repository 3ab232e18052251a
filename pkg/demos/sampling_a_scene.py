"""Candidate trajectories for one scene, ranked by a hand-set cost model.

Run:  python3 demos/sampling_a_scene.py
"""

from collections import Counter

import numpy as np

from mapfree.config import RunConfig
from mapfree.evaluator import CostModel
from mapfree.pipeline import initial_frame
from mapfree.planner import safety_layer, select_best
from mapfree.scenarios import cut_in

scenario = cut_in()
config = RunConfig()
model = CostModel(np.array([2.0, 3.0, 0.5, 1.0, 1.5, 0.0]))

planner, frame = initial_frame(scenario, config, model)
cands = planner.candidates(frame.ego, frame.planes, frame.graph)
print(f"{scenario.name}: {len(cands)} feasible candidates by source {dict(cands.provenance)}")
print("maneuvers:", dict(Counter(c.maneuver for c in cands)))

# rank by energy, then let the safety layer validate from the top
decision = select_best(cands, model, frame.planes)
decision = safety_layer(decision, frame.ego, planner.checker, frame.forecasts, None, config.safety,
                        config.limits, scenario.ego_size)
print("\ncheapest five:")
for i in range(5):
    c = decision.ranked[i]
    print(f"  {decision.costs[i]:8.2f}  {c.source:8s} {c.label:40s} verdict={decision.verdicts[i]}")
chosen = decision.chosen
print(f"\nchosen: {chosen.label} ({chosen.source}), ends at ({chosen.xy[-1, 0]:.1f}, {chosen.xy[-1, 1]:.1f}) "
      f"at {chosen.v[-1]:.1f} m/s")
