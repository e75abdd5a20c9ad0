"""
Calibrating a CUSUM control limit
=================================

Finds the limit giving an in-control average run length of 50 when the
monitored statistic is standard normal, then checks it on fresh streams and
sweeps the limit to show how the run length grows.
"""

import numpy as np

from poisson_hotspots.monitor import calibrate_limit, normal_generator, run_lengths

gen = normal_generator(0.0, 1.0)
limit = calibrate_limit(gen, d_star=0.5, target_arl0=50.0, reps=1000, seed=1)
print(f"limit for ARL0=50: {limit:.4f}")

fresh = gen(np.random.default_rng(99), 5000, 2000)
print(f"ARL0 on 5000 fresh streams: {run_lengths(fresh, 0.5, limit).mean():.2f}")

# run length against limit, in control and after a one-sd shift
shifted = fresh[:, :200] + 1.0
for L in (0.5, 1.0, 2.0, 3.0, 4.0):
    arl0 = run_lengths(fresh, 0.5, L).mean()
    arl1 = run_lengths(shifted, 0.5, L).mean()
    print(f"L={L:3.1f}   in control {arl0:8.2f}   shifted {arl1:6.2f}")
