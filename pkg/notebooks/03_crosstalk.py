"""
Sharing information across strata
=================================

Each stratum learns its own alternative.  Cross-talk lets the learner borrow
strength from the other strata, assuming a common odds ratio, a common
control rate, or a common risk difference.  "mix" averages the first three
e-processes and is safe whichever assumption fails.
"""
import numpy as np

from safestrata import TestConfig, generate_stream, global_log_e

settings = {
    "shared control rate": [(0.49, 0.4), (0.5, 0.01), (0.51, 0.9)],
    "shared odds ratio": [(0.2, 0.5), (0.5, 0.8004), (0.7, 0.8732)],
}
modes = ("none", "odds", "control-rate", "risk-diff", "mix")
reps = 40
for title, theta in settings.items():
    print(title)
    for mode in modes:
        hits = 0
        for r in range(reps):
            s = generate_stream(theta, blocks_per_stratum=40, seed=100 + r)
            hits += global_log_e(s, TestConfig(crosstalk=mode)).max() >= np.log(20)
        print(f"  {mode:13s} power {hits / reps:.2f}")
