"""Admissible laws on ``S^{d-1} x R^d`` and their adjoints, exact on atoms.

For an atomic ``P`` every nonzero atom ``(s, m, w)`` pushes the mass
``w * |m|**alpha`` onto the angle ``m/|m|``. ``P`` is admissible when no angle
receives more pushed mass than ``P`` puts on it, and the adjoint ``P*`` is then
the law with atoms ``(m/|m|, s/|m|, w |m|**alpha)`` completed by one atom at
``(u, 0)`` per angle ``u`` carrying the leftover mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NotAdmissible, NotCanonical
from .measures import AtomMeasure, as_alpha, canonicalize, match_rows

EXACT_TOL = 1e-12
JSON_TOL = 1e-9


@dataclass(frozen=True)
class AdmissibilityReport:
    admissible: bool
    worst_set_slack: float
    alpha_moment: float

    def to_dict(self) -> dict:
        return {
            "admissible": bool(self.admissible),
            "worst_set_slack": float(self.worst_set_slack),
            "alpha_moment": float(self.alpha_moment),
        }


@dataclass(frozen=True)
class _Push:
    points: np.ndarray  # sphere marginal support
    marginal: np.ndarray
    pushed: np.ndarray  # pushed mass landing on each support point
    orphans: np.ndarray  # pushed mass on angles outside the support
    directions: np.ndarray  # m/|m| of nonzero atoms, snapped to the support where possible
    weights: np.ndarray  # w |m|^alpha of nonzero atoms
    scaled_s: np.ndarray  # s/|m| of nonzero atoms


def _push(P: AtomMeasure, alpha: float) -> _Push:
    if abs(math.fsum(P.w) - 1.0) > EXACT_TOL:
        raise NotCanonical(f"measure sums to {math.fsum(P.w)!r}")
    pts, marg = P.sphere_marginal()
    nz = P.nonzero
    m = P.m[nz]
    r = np.linalg.norm(m, axis=1)
    u = m / r[:, None]
    wt = P.w[nz] * r**alpha
    idx = match_rows(u, pts)
    u = np.where((idx >= 0)[:, None], pts[np.maximum(idx, 0)], u)
    pushed = np.bincount(idx[idx >= 0], weights=wt[idx >= 0], minlength=len(pts))
    return _Push(pts, marg, pushed, wt[idx < 0], u, wt, P.s[nz] / r[:, None])


def is_admissible(P: AtomMeasure, alpha, tol: float = EXACT_TOL) -> AdmissibilityReport:
    """Check the admissibility inequality on every angle that can carry mass.

    For atomic ``P`` the supremum over Borel sets reduces to singletons: the
    pushed mass is concentrated on finitely many angles.
    """
    alpha = as_alpha(alpha)
    push = _push(P, alpha)
    slack = push.marginal - push.pushed
    worst = float(slack.min()) if slack.size else 0.0
    if push.orphans.size:
        worst = min(worst, -float(push.orphans.max()))
    moment = math.fsum(push.weights)
    return AdmissibilityReport(worst >= -tol, worst, moment)


def adjoint(P: AtomMeasure, alpha, tol: float = EXACT_TOL) -> AtomMeasure:
    """Adjoint measure of an admissible atomic ``P``."""
    alpha = as_alpha(alpha)
    push = _push(P, alpha)
    rep = is_admissible(P, alpha, tol)
    if not rep.admissible:
        raise NotAdmissible(f"worst slack {rep.worst_set_slack:.3g} < 0")
    zero_mass = push.marginal - push.pushed
    zero_mass[np.abs(zero_mass) <= tol] = 0.0
    zero_mass = np.maximum(zero_mass, 0.0)
    atoms = [(u, v, w) for u, v, w in zip(push.directions, push.scaled_s, push.weights)]
    atoms += [(pt, np.zeros(P.d), w) for pt, w in zip(push.points, zero_mass) if w > 0]
    return canonicalize(atoms, d=P.d)


def adjoint_expectation(f: Callable, P: AtomMeasure, alpha, tol: float = EXACT_TOL) -> float:
    """Integral of ``f(s*, m*)`` over the nonzero part of the adjoint of ``P``.

    Evaluated as the sum of ``f(m/|m|, s/|m|) |m|**alpha`` over the nonzero
    atoms of ``P``; ``f`` receives two 1-d arrays.
    """
    alpha = as_alpha(alpha)
    if not is_admissible(P, alpha, tol).admissible:
        raise NotAdmissible("adjoint expectation needs an admissible measure")
    push = _push(P, alpha)
    return math.fsum(float(f(u, v)) * w for u, v, w in zip(push.directions, push.scaled_s, push.weights))


@dataclass(frozen=True, eq=False)
class AdjointPair:
    p: AtomMeasure
    p_star: AtomMeasure
    alpha: float

    @classmethod
    def from_measure(cls, P: AtomMeasure, alpha) -> "AdjointPair":
        return cls(P, adjoint(P, alpha), as_alpha(alpha))


def marginals_equal(P: AtomMeasure, Q: AtomMeasure, atol: float = EXACT_TOL) -> bool:
    pp, wp = P.sphere_marginal()
    pq, wq = Q.sphere_marginal()
    return (
        pp.shape == pq.shape
        and np.array_equal(pp, pq)
        and bool(np.allclose(wp, wq, rtol=0, atol=atol))
    )


def check_pair(pair: AdjointPair, atol: float = 1e-10) -> bool:
    """True iff both laws are admissible, share their sphere marginal and are
    each other's adjoint."""
    try:
        if not (is_admissible(pair.p, pair.alpha).admissible and is_admissible(pair.p_star, pair.alpha).admissible):
            return False
        if not marginals_equal(pair.p, pair.p_star):
            return False
        return adjoint(pair.p, pair.alpha).allclose(pair.p_star, atol) and adjoint(pair.p_star, pair.alpha).allclose(
            pair.p, atol
        )
    except (NotAdmissible, NotCanonical):
        return False


def random_admissible(
    rng: np.random.Generator,
    d: int,
    n_atoms: int,
    alpha,
    zero_prob: float = 0.3,
    target: tuple[float, float] = (0.2, 0.95),
) -> AtomMeasure:
    """Random admissible atomic measure for property tests.

    Recipe: draw ``k <= n_atoms`` angles (``{-1, +1}`` subsets when d = 1); give
    the first ``k`` atoms one angle each so every angle has mass; every other
    atom picks a random angle. Each atom has ``m = 0`` with probability
    ``zero_prob``, otherwise ``m = r * u`` with ``u`` one of the angles and
    ``r`` lognormal. Weights are Dirichlet(1). Finally all ``m`` are scaled by
    one common factor so that the largest ratio pushed/marginal over the angles
    equals a uniform draw from ``target``; the result is admissible with slack.
    """
    alpha = as_alpha(alpha)
    if d == 1:
        k = int(rng.integers(1, 3))
        angles = rng.permutation(np.array([[-1.0], [1.0]]))[:k]
    else:
        k = int(rng.integers(1, min(n_atoms, 5) + 1))
        z = rng.standard_normal((k, d))
        angles = z / np.linalg.norm(z, axis=1, keepdims=True)
    n = max(n_atoms, k)
    s_idx = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
    w = rng.dirichlet(np.ones(n))
    nz = rng.random(n) >= zero_prob
    if not nz.any():
        nz[int(rng.integers(n))] = True
    r = np.exp(rng.normal(0.0, 0.7, n))
    m = r[:, None] * angles[rng.integers(0, k, n)]
    m[~nz] = 0.0
    pushed = np.zeros(k)
    marg = np.bincount(s_idx, weights=w, minlength=k)
    for i in np.flatnonzero(nz):
        j = int(np.argmax(angles @ (m[i] / np.linalg.norm(m[i]))))
        pushed[j] += w[i] * np.linalg.norm(m[i]) ** alpha
    ratio = float(np.max(pushed / marg))
    c = (rng.uniform(*target) / ratio) ** (1.0 / alpha)
    atoms = [(angles[s_idx[i]], c * m[i], w[i]) for i in range(n)]
    return canonicalize(atoms, d=d)
