"""Learn cost weights from demonstrations with the max-margin loss.

A hidden linear model picks the demonstration in each synthetic frame; the
learner only sees the demonstrations and the lattice candidates, and should
end up ranking held-out demonstrations cheapest.

Run:  python3 demos/learning_a_cost.py
"""

from dataclasses import replace

import numpy as np

from mapfree.config import RunConfig
from mapfree.dataset import HIDDEN_MODEL, generate_synthetic_dataset
from mapfree.evaluator import FEATURES
from mapfree.pipeline import train_cost

config = RunConfig()
config.dataset = replace(config.dataset, n_frames=80)
frames = generate_synthetic_dataset(config)
print(f"{len(frames)} frames")

report = train_cost(config, frames)
trace = report.result.trace
print(f"loss {trace[0]:.3f} -> {trace[-1]:.3f} over {len(trace) - 1} epochs "
      f"({report.result.steps_accepted} accepted steps)")
print(f"held-out demonstrations ranked cheapest: {report.held_out_accuracy:.0%} of {len(report.held_out)}")

print("\nfeature            hidden   learned")
for name, h, w in zip(FEATURES, HIDDEN_MODEL.weights, report.result.model.weights):
    print(f"  {name:16s} {h:7.2f} {w:9.2f}")
# weights are only identified up to scale and the hidden model is not the only one consistent with the data
print("\ncosine(hidden, learned) =",
      round(float(np.dot(HIDDEN_MODEL.weights, report.result.model.weights)
                  / np.linalg.norm(HIDDEN_MODEL.weights) / np.linalg.norm(report.result.model.weights)), 3))
