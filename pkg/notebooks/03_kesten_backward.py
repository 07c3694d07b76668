"""
Backward steps of a Kesten recursion with random rotations
==========================================================

X_t = R_t Q_t X_{t-1} + B_t. Forward, the tail chain multiplies by R Q;
backward it multiplies by R* Q' where R* has density f_R(1/y) y^{-(2+alpha)}.
For a lognormal R with E[R^alpha] = 1 the two radial laws coincide.
"""

import numpy as np

from tailchains import KestenOrthogonalSpec
from tailchains.diagnostics import ks_one_sample, ks_two_sample
from tailchains.models import LogNormal, LogUniform, PointMass, kesten_backward_increment, kesten_spectral_fixedpoint_gap

rng = np.random.default_rng(3)
spec = KestenOrthogonalSpec(2, 1.0, LogNormal.unit_moment(0.5, 1.0))
back = kesten_backward_increment(spec)
rstar = back.radial.sample(100_000, rng)
print("KS R* vs its CDF:", ks_one_sample(rstar, back.radial.cdf).p_value)
print("KS R* vs R:      ", ks_two_sample(rstar, spec.radial.sample(100_000, rng)).p_value)

# %% a log-uniform radial law is not self-adjoint
lu = KestenOrthogonalSpec(2, 1.0, LogUniform.unit_moment(0.5, 2.0, 1.0))
b2 = kesten_backward_increment(lu)
# E[R*^2] = E[R^(alpha - 2)], which differs from E[R^2]
print("log-uniform R* integral:", b2.radial.integral)
print("E[R^2] =", lu.radial.moment(2.0), " E[R*^2] ~", np.mean(b2.radial.sample(100_000, rng) ** 2),
      " E[1/R] =", lu.radial.moment(-1.0))

# %% uniform angles are a fixed point of the spectral recursion only when E R^alpha = 1
for r in (1.0, 1.2):
    gap = kesten_spectral_fixedpoint_gap(KestenOrthogonalSpec(2, 1.0, PointMass(r), strict=False), 20_000, rng)
    print(f"R = {r}: gap {gap.gap:.4f} (ci {gap.ci:.4f}) flagged={gap.flagged}")
