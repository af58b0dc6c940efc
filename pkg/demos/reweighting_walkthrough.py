"""Walk through the reweighting math on a small example.

A client contacted by the server has completed a random number E of local
steps (clipped at K).  Dividing its progress by alpha makes slow and fast
clients contribute equally in expectation.  This script shows the two alpha
variants, checks unbiasedness by Monte Carlo, and prints the constants that
enter the convergence rate.
"""

import numpy as np

from asyncfl import (
    DETERMINISTIC,
    STOCHASTIC,
    alpha,
    clipped_geometric,
    complexity_bound,
    stopped_sum_mean_var,
    substream,
    theorem_constants,
)

K = 20
fast = clipped_geometric(0.5, K)
slow = clipped_geometric(1.0 / 16.0, K)

print("clipped step-count distributions (K = 20):")
for name, dist in (("fast", fast), ("slow", slow)):
    print(f"  {name}: E[E^K] = {dist.m1:.3f}, P(E>0) = {dist.p_pos:.3f}, "
          f"Var = {dist.variance():.3f}")

print("\nalpha for a slow client that managed 2 local steps:")
print(f"  stochastic    : {alpha(STOCHASTIC, slow, realized_steps=2):.4f}")
print(f"  deterministic : {alpha(DETERMINISTIC, slow):.4f}")

# Monte-Carlo check: the reweighted stopped sum of unit-mean terms has mean 1
rng = substream(0, "demo-unbiased")
trials = 50_000
for mode in (STOCHASTIC, DETERMINISTIC):
    total = 0.0
    for _ in range(trials):
        e = int(slow.sample(rng))
        y = rng.normal(1.0, 2.0, size=e).sum()
        if mode == STOCHASTIC:
            total += 0.0 if e == 0 else y / (slow.p_pos * e)
        else:
            total += y / slow.m1
    mean, var = stopped_sum_mean_var(mode, slow, 1.0, 4.0)
    print(f"\n{mode}: MC mean {total / trials:.4f} (exact {mean}), "
          f"closed-form variance {var:.3f}")

print("\nrate-bound constants for a half fast / half slow population:")
for mode in (STOCHASTIC, DETERMINISTIC):
    a, b = theorem_constants(mode, [fast, slow], K)
    print(f"  {mode}: a = {np.round(a, 4)}, b = {b:.3f}")
    rounds = complexity_bound(r0=1.0, b_term=b, e_term=1.0, d_term=1.0, epsilon=0.01)
    print(f"    rounds to reach eps = 1e-2 (unit curvature): {rounds:.3g}")
