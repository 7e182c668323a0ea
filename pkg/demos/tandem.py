"""Two-queue tandem with finite buffers: overflow of either normalized queue length.

Two chain conventions are available.  "uniformized" keeps fictitious self-loops,
"jump" drops them and renormalizes; the jump chain gives the reference value
p_50 ~ 4.10e-5 for these rates.
"""
from raremc import (Adaptive, Static, TiltFamily, build_tandem, estimate,
                    exact_probability, rate_over_target, static_alpha_for)

params = (0.2, 0.4, 0.4, 6, 6, 0.3, 0.4)
for convention in ("uniformized", "jump"):
    chain, g, A = build_tandem(*params, convention=convention)
    print(f"{convention:12s} p_50 = {exact_probability(chain, g, A, 50):.4e}")

chain, g, A = build_tandem(*params, convention="jump")
fam = TiltFamily(chain, g)
rate = rate_over_target(chain, g, A)
print(f"inf L = {rate.value:.5f} at beta* = {rate.beta.round(4)}, alpha* = {rate.alpha.round(4)}")

for name, policy in (("static", Static(static_alpha_for(chain, g, A))), ("adaptive", Adaptive())):
    res = estimate(chain, g, A, policy, 50, 10_000, seed=0, fam=fam)
    print(f"{name:9s} p_hat={res.p_hat:.3e} se={res.std_err:.1e} ratio={res.ratio:.3f}")
