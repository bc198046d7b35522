"""
Monte-Carlo experiments from config files
=========================================

Experiments are TOML files: true rates per stratum, block counts, and a list
of methods.  Several are bundled.  Output is a long table with one row per
method, replicate and block, plus a summary of power or mean width.
"""
from safestrata.simulate import builtin_configs, coverage, load_config, run_simulation

print("bundled:", ", ".join(builtin_configs()))

cfg = load_config("fig2")
res = run_simulation(cfg, replications=40, workers=1)
print(res.summary_table())

cfg = load_config("fig4a")
res = run_simulation(cfg, replications=10, workers=1)
for label in res.labels():
    print(f"{label:24s} coverage {coverage(res, label):.2f}")
print(res.long_table().splitlines()[:3])
