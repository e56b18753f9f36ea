"""Two-Gaussian phone competition: the closed-form posterior curve.

A canonical phone is modelled as N(0, 0.5) and its competitor as
N(a, 0.5); a realization is drawn at o = a + delta.  The posterior of
the canonical phone then has the closed form

    p = 1 / (1 + exp(-(a^2 + 2 a delta)))

so the posterior-based score responds monotonically to how far the
realization drifts toward the competitor.  This script sweeps delta for
a few separations a and prints the curve as TSV.
"""

import numpy as np

from proscore.gop import competition_sweep, simulate_competition

print("a\tdelta\tposterior")
for a in (0.5, 1.0, 2.0):
    for point in competition_sweep(a, np.linspace(-2.0, 2.0, 21)):
        print(f"{a:.1f}\t{point.delta:+.2f}\t{point.posterior:.6f}")

# spot checks against the well-known values at a = 1
for delta, expected in [(-1.0, 0.2689), (0.0, 0.7311), (1.0, 0.9526)]:
    got = simulate_competition(1.0, delta).posterior
    assert abs(got - expected) < 1e-4, (delta, got)

# the curve is strictly increasing in delta until it saturates at 1
for a in (0.25, 1.0, 2.0):
    posts = [p.posterior
             for p in competition_sweep(a, np.linspace(-3.0, 3.0, 201))]
    assert np.all(np.diff(posts) > 0)

print("\nspot checks passed: p(1,-1)=0.2689  p(1,0)=0.7311  p(1,1)=0.9526")
