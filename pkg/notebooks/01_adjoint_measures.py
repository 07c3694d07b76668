"""
Adjoint of an atomic measure
============================

A measure on pairs (s, m) with s a unit vector is admissible when the mass it
pushes onto each angle m/|m|, weighted by |m|^alpha, does not exceed the mass
already sitting at that angle. Its adjoint swaps the roles of s and m.
"""

import numpy as np

from tailchains import adjoint, canonicalize, is_admissible
from tailchains.admissible import marginals_equal, random_admissible

# %% a two-atom example on the real line
P = canonicalize([([1.0], [0.5], 0.5), ([1.0], [0.0], 0.5)])
print(is_admissible(P, 1.0))
Ps = adjoint(P, 1.0)
for s, m, w in zip(Ps.s, Ps.m, Ps.w):
    print(f"  s={s[0]:+.0f}  m={m[0]:.2f}  w={w:.2f}")

# %% the adjoint is an involution and keeps the angle marginal
rng = np.random.default_rng(0)
Q = random_admissible(rng, d=2, n_atoms=8, alpha=1.5)
Qs = adjoint(Q, 1.5)
print("involution:", adjoint(Qs, 1.5).allclose(Q), " marginals equal:", marginals_equal(Q, Qs))

# %% pushing more mass than the target angle holds breaks admissibility
bad = canonicalize([([1.0], [2.0], 1.0)])
print(is_admissible(bad, 1.0))
