"""
Bounding the smallest and largest effect
========================================

Sometimes the question is whether every stratum benefits.  A lower bound on
the minimum risk difference that clears zero says so; the maximum is the
same construction with groups swapped.
"""
from safestrata import CombinerSpec, cs_max_two_sided, cs_min_two_sided, generate_stream

theta = [(0.2, 0.45), (0.3, 0.5), (0.5, 0.8)]
stream = generate_stream(theta, blocks_per_stratum=200, seed=3)
rds = [round(tb - ta, 10) for ta, tb in theta]
print("true min", min(rds), "true max", max(rds))

for spec in (CombinerSpec("multiply"), CombinerSpec("mixture")):
    mins = cs_min_two_sided(stream, spec, grid_step=0.02)
    maxs = cs_max_two_sided(stream, spec, grid_step=0.02)
    print(spec.kind)
    for m in (60, 300, 600):
        lo, hi = mins[m], maxs[m]
        print(f"  m={m:3d}  min in [{lo.lower:+.2f}, {lo.upper:+.2f}]  "
              f"max in [{hi.lower:+.2f}, {hi.upper:+.2f}]")
