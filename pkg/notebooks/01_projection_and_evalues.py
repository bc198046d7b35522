"""
Projections and single-block e-values
=====================================

A block holds n_a outcomes from group a and n_b from group b.  The alternative
is a guess (theta_a, theta_b); the null is a set of pairs.  The e-value of a
block is the likelihood ratio of the guess over its KL-closest null pair.
"""
import itertools

import numpy as np

from safestrata import (GLOBAL, BlockCounts, BlockDesign, NullSpec, Side, ThetaPair,
                        conditional_evalue, kl_block, project_halfplane, project_rd_line)
from safestrata.eprocess import project_onto_null

design = BlockDesign(1, 1)
alt = ThetaPair(0.2, 0.8)

# the global null is the diagonal theta_a = theta_b
q = project_onto_null(alt, GLOBAL, design)
print("projection onto the diagonal:", q, "KL", kl_block(alt, q, design))

# risk-difference nulls: a line and the two half-planes around it
for delta in (0.3, 0.6, 0.9):
    line = project_rd_line(alt, delta, design)
    ge = project_halfplane(alt, delta, Side.GE, design)
    print(f"delta {delta:+.1f}  line {line.theta_b - line.theta_a:+.3f}  "
          f"half-plane GE {ge.theta_b - ge.theta_a:+.3f}")

# e-values for the four possible outcomes of a 1+1 block
outcomes = list(itertools.product((0, 1), repeat=2))
e = {o: np.exp(conditional_evalue(alt, GLOBAL, BlockCounts(*o, design))) for o in outcomes}
print("e-values by outcome:", {o: round(float(v), 4) for o, v in e.items()})

# the expected value stays at most one under every null pair
thetas = np.linspace(0.01, 0.99, 99)
expected = [sum(e[a, b] * (t if a else 1 - t) * (t if b else 1 - t) for a, b in outcomes)
            for t in thetas]
print(f"max expectation over the diagonal: {max(expected):.6f}")

null = NullSpec("le", 0.3)
worst = max(
    sum(np.exp(conditional_evalue(alt, null, BlockCounts(a, b, design)))
        * (qa if a else 1 - qa) * (qb if b else 1 - qb) for a, b in outcomes)
    for qa in thetas[::7] for qb in thetas[::7] if qb - qa <= 0.3)
print(f"max expectation over RD <= 0.3: {worst:.6f}")
