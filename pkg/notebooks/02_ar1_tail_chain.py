"""
Tail chain of a heavy-tailed AR(1)
==================================

X_t = 0.5 X_{t-1} + B_t with symmetric Pareto(1) innovations. Looking back
from a large value, the chain either started at the previous step (the
backward chain dies) or it is the image of a larger earlier value.
"""

import numpy as np

from tailchains import Ar1Spec, UniformSphere, simulate
from tailchains.markov_engine import extract_windows, percentile_threshold
from tailchains.models import ar1_backward_zero_prob, ar1_spectral_sampler, ar1_tail_decomposition

spec = Ar1Spec(0.5, 1.0, UniformSphere(1))
dec = ar1_tail_decomposition(spec)
print("p_n:", np.round(dec.p[:6], 5), "...  truncated after", dec.n_max)
print("P(M_-1 = 0 | M_0 = +1):", ar1_backward_zero_prob(spec, dec, [1.0]))

# %% spectral sampler: M_0 = A^N Theta
smp = ar1_spectral_sampler(spec, dec, np.random.default_rng(1), 100_000)
print("fraction with N = 0:", np.mean(smp.N == 0))
print("one path on -3..2:", smp.path(3, 2).values[np.argmax(smp.N == 2), :, 0])

# %% windows of a long simulation around exceedances
traj = simulate(spec.model_spec(), 2_000_000, seed=2)
for q in (99.0, 99.9, 99.99):
    ws = extract_windows(traj, percentile_threshold(traj, q), 1, 1)
    dev = np.median(np.abs(ws.at(1)[:, 0] - 0.5 * ws.at(0)[:, 0]))
    died = np.mean(np.abs(ws.at(-1)[:, 0]) < 0.05)
    print(f"q={q:<6} windows={len(ws):>6}  median |X_1/|X_0| - a M_0| = {dev:.2e}  small X_-1 share = {died:.3f}")
