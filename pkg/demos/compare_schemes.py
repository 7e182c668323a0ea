"""Naive, static and adaptive estimators on the two-sided event for the +/-1 chain.

The event is S_n / n <= 1/6 or S_n / n >= 1/2.  A static twist aims at the upper
piece and pays for every path that ends near the lower one; the adaptive twist
re-aims at each step.
"""
from raremc import (Adaptive, Naive, Static, TargetSet, TiltFamily, build_two_state,
                    estimate, exact_probability, static_alpha_for)

chain, g = build_two_state(0.5)
A = TargetSet.two_sided(1 / 6, 0.5)
fam = TiltFamily(chain, g)
K = 10_000

for n in (60, 120, 240):
    p = exact_probability(chain, g, A, n)
    print(f"n = {n}, exact p_n = {p:.4e}")
    schemes = {"naive": Naive(), "static": Static(static_alpha_for(chain, g, A)),
               "adaptive": Adaptive()}
    for name, policy in schemes.items():
        res = estimate(chain, g, A, policy, n, K, seed=1, fam=fam)
        ratio = "  -  " if res.ratio is None else f"{res.ratio:.3f}"
        print(f"  {name:9s} p_hat={res.p_hat:.4e}  se={res.std_err:.2e}  ratio={ratio}")
