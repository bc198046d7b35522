"""
Confidence sequences for per-stratum risk differences
=====================================================

Inverting a family of tests over a grid of risk differences gives an interval
at every block.  The intervals are valid simultaneously over time, so one can
watch them and stop whenever.
"""
from safestrata import cs_all_strata, generate_stream

theta = [(0.2, 0.5), (0.4, 0.4), (0.6, 0.3)]
stream = generate_stream(theta, blocks_per_stratum=150, seed=12)

for mode in ("none", "control-rate"):
    seqs = cs_all_strata(stream, mode=mode, grid_step=0.02)
    print(mode)
    for k, (seq, (ta, tb)) in enumerate(zip(seqs, theta)):
        checkpoints = [seq[m] for m in (30, 150, len(seq) - 1)]
        desc = "  ".join(f"m={iv.time}: [{iv.lower:+.2f}, {iv.upper:+.2f}]" for iv in checkpoints)
        print(f"  stratum {k + 1} (true {tb - ta:+.1f})  {desc}")
