"""Exact second moments of each policy, without sampling.

The lattice recursion tracks (state, partial sum) so it gives the variance every
estimator would show with infinitely many replications.  The static twist's
second moment grows with n even though its mean stays correct.
"""
import math

from raremc import (Adaptive, Naive, Static, TargetSet, TiltFamily, build_two_state,
                    decay_rates, exact_probability, policy_moments, static_alpha_for,
                    two_state_exact)

chain, g = build_two_state(0.5)
A = TargetSet.two_sided(1 / 6, 0.5)
fam = TiltFamily(chain, g)
static = Static(static_alpha_for(chain, g, A))

rates = decay_rates(chain, g, A)
print(f"decay rates: naive {rates.naive:.5f}, optimal {rates.optimal:.5f}, "
      f"static {rates.static:.5f}")

for n in (60, 120, 180, 240):
    p = exact_probability(chain, g, A, n)
    assert math.isclose(p, two_state_exact(0.5, 1 / 6, 0.5, n), rel_tol=1e-12)
    row = [f"n={n:3d} p={p:.3e}"]
    for name, policy in (("naive", Naive()), ("static", static), ("adaptive", Adaptive())):
        m2 = policy_moments(chain, g, A, policy, n, fam=fam).second_moment
        row.append(f"{name} M2={m2:.3e} ratio={math.log(m2) / math.log(p):+.3f}")
    print("  ".join(row))
