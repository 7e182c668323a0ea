"""Rate function of the +/-1 chain, computed numerically and in closed form.

The chain steps up with probability p from either state and always steps up from
the down state, so the long-run mean of S_n / n sits at p / (2 - p).
"""
import numpy as np

from raremc import build_two_state, legendre, spectral, two_state_closed_form

p = 0.5
chain, g = build_two_state(p)
cf = two_state_closed_form(p)

print(f"drift = {cf.drift:.6f}")
print(f"{'beta':>6} {'L numeric':>12} {'L closed':>12} {'alpha':>10}")
for beta in np.linspace(0.05, 0.95, 10):
    res = legendre(chain, g, [beta])
    print(f"{beta:6.2f} {res.L:12.8f} {cf.L(beta):12.8f} {res.alpha[0]:10.5f}")

# under a strong tilt the twisted chain nearly sticks in the up state
for alpha in (5.0, -5.0):
    print(f"Q at alpha={alpha:+.0f}:\n{np.round(spectral(chain, g, [alpha]).Q_alpha, 5)}")
