"""Tail chains: forward recursion, back-and-forth sampling, time-change checks.

A back-and-forth tail chain (BFTC) is described by the law of ``M_0`` on the
sphere plus two kernels, each mapping an angle ``s`` to a random vector: the
forward kernel gives ``M_1`` given ``M_0 = s`` and the backward kernel gives
``M_{-1}`` given ``M_0 = s``. From a nonzero state ``x`` a step draws the
kernel at ``x/|x|`` and scales the result by ``|x|``; the state 0 is absorbing
in both directions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import _random
from .admissible import adjoint, is_admissible
from .diagnostics import energy_test, normal_ci_halfwidth
from .errors import KernelMismatch, NotAdmissible, UnboundedFunctional, UnknownAngle
from .measures import (
    AtomicSpectral,
    AtomMeasure,
    SpectralMeasure,
    UnitVector,
    as_alpha,
    canonicalize,
    marginal_law,
    match_rows,
    polar_rows,
)

CI_LEVEL = 0.99
GATE_LEVEL = 0.001
GATE_N = 10_000


# --------------------------------------------------------------------------
# kernels


class TailKernel:
    """Conditional sampler ``s -> m`` for rows of unit vectors ``s``."""

    kind = "model-analytic"
    d: int

    def sample(self, s: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def step(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One homogeneous step from states ``x`` (rows), honouring absorption at 0."""
        u, r = polar_rows(x)
        out = np.zeros_like(x, dtype=float)
        alive = r > 0
        if alive.any():
            out[alive] = r[alive, None] * self.sample(u[alive], rng)
        return out


class AtomicKernel(TailKernel):
    """Conditional laws of an atomic measure on ``S^{d-1} x R^d`` given the angle."""

    kind = "atomic-conditional"

    def __init__(self, P: AtomMeasure):
        self.measure = P
        self.d = P.d
        self.points, marg = P.sphere_marginal()
        if np.any(marg <= 0):
            raise UnknownAngle("every sphere atom needs positive mass")
        group = match_rows(P.s, self.points)
        self.values: list[np.ndarray] = []
        self.probs: list[np.ndarray] = []
        for j in range(len(self.points)):
            sel = group == j
            w = P.w[sel]
            self.values.append(P.m[sel])
            self.probs.append(w / w.sum())
        self._cdf = [np.cumsum(p) for p in self.probs]

    def conditional(self, s) -> tuple[np.ndarray, np.ndarray]:
        j = int(match_rows(np.atleast_2d(np.asarray(s, float)), self.points)[0])
        if j < 0:
            raise UnknownAngle(f"angle {np.asarray(s).tolist()} is not a sphere atom")
        return self.values[j], self.probs[j]

    def sample(self, s, rng):
        s = np.atleast_2d(np.asarray(s, float))
        group = match_rows(s, self.points)
        if np.any(group < 0):
            bad = s[np.argmax(group < 0)]
            raise UnknownAngle(f"angle {bad.tolist()} is not a sphere atom")
        out = np.empty((len(s), self.d))
        u = rng.random(len(s))
        for j in np.unique(group):
            sel = group == j
            k = np.minimum(np.searchsorted(self._cdf[j], u[sel], side="right"), len(self._cdf[j]) - 1)
            out[sel] = self.values[j][k]
        return out


def kernel_from_atoms(P: AtomMeasure) -> AtomicKernel:
    return AtomicKernel(P)


class MapKernel(TailKernel):
    """Kernel ``m = phi(s, e)`` with i.i.d. noise ``e``.

    ``phi(s, e)`` acts on rows; ``noise(size, rng)`` returns ``size`` draws
    stacked along axis 0.
    """

    def __init__(self, phi: Callable, noise: Callable, d: int, kind: str = "model-analytic"):
        self.phi = phi
        self.noise = noise
        self.d = d
        self.kind = kind

    def sample(self, s, rng):
        s = np.atleast_2d(np.asarray(s, float))
        return np.asarray(self.phi(s, self.noise(len(s), rng)), dtype=float).reshape(len(s), self.d)


class FunctionKernel(TailKernel):
    """Kernel given directly by ``fn(s, rng) -> m``."""

    def __init__(self, fn: Callable, d: int, kind: str = "model-analytic"):
        self.fn = fn
        self.d = d
        self.kind = kind

    def sample(self, s, rng):
        s = np.atleast_2d(np.asarray(s, float))
        return np.asarray(self.fn(s, rng), dtype=float).reshape(len(s), self.d)


# --------------------------------------------------------------------------
# paths


@dataclass(frozen=True, eq=False)
class TailChainPath:
    """Realized tail-chain paths ``M_{-s}, ..., M_t``.

    ``values`` has shape ``(n, s + t + 1, d)``; time ``k`` sits at column
    ``k + s``. ``absorbed_back[i]`` is the first negative time at which path
    ``i`` hits 0 going backward (0 if never), ``absorbed_fwd[i]`` likewise for
    positive times.
    """

    s: int
    t: int
    values: np.ndarray
    absorbed_back: np.ndarray = field(init=False)
    absorbed_fwd: np.ndarray = field(init=False)

    def __post_init__(self):
        zero = ~np.any(self.values != 0.0, axis=2)
        back = zero[:, : self.s][:, ::-1]  # times -1, -2, ..., -s
        fwd = zero[:, self.s + 1 :]  # times 1, ..., t
        ab = np.where(back.any(axis=1), -(back.argmax(axis=1) + 1), 0) if self.s else np.zeros(len(zero), int)
        af = np.where(fwd.any(axis=1), fwd.argmax(axis=1) + 1, 0) if self.t else np.zeros(len(zero), int)
        object.__setattr__(self, "absorbed_back", ab)
        object.__setattr__(self, "absorbed_fwd", af)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i) -> "TailChainPath":
        v = self.values[i]
        return TailChainPath(self.s, self.t, v[None] if v.ndim == 2 else v)

    def at(self, k: int) -> np.ndarray:
        """Values at time ``k`` for every path."""
        if not -self.s <= k <= self.t:
            raise IndexError(f"time {k} outside [-{self.s}, {self.t}]")
        return self.values[:, k + self.s]

    @property
    def d(self) -> int:
        return self.values.shape[2]

    def zero_absorbing(self) -> bool:
        """True when 0 is absorbing in both time directions on every path."""
        zero = ~np.any(self.values != 0.0, axis=2)
        back = zero[:, : self.s + 1][:, ::-1]
        fwd = zero[:, self.s :]
        ok_b = np.all(np.maximum.accumulate(back, axis=1) == back)
        ok_f = np.all(np.maximum.accumulate(fwd, axis=1) == fwd)
        return bool(ok_b and ok_f)

    def reversed(self) -> "TailChainPath":
        return TailChainPath(self.t, self.s, self.values[:, ::-1])

    def flat(self) -> np.ndarray:
        return self.values.reshape(len(self.values), -1)


def _start(m0, d: int | None = None, size: int | None = None) -> np.ndarray:
    if isinstance(m0, UnitVector):
        m0 = np.asarray(m0)
    x = np.atleast_2d(np.asarray(m0, dtype=float))
    if size is not None and len(x) == 1:
        x = np.repeat(x, size, axis=0)
    return x


def forward_chain(m0, phi: Callable, noise: Callable, t: int, stream=None, size: int | None = None) -> TailChainPath:
    """Forward tail chain ``M_j = phi(M_{j-1}, e_j)`` with homogeneous extension.

    ``m0`` is a unit vector or rows of unit vectors; ``phi(s, e)`` maps rows of
    angles and a batch of noise draws to rows of vectors.
    """
    if t < 0:
        raise ValueError("horizon t must be >= 0")
    rng = _random.as_generator(stream)
    x = _start(m0, size=size)
    kernel = MapKernel(phi, noise, x.shape[1])
    vals = [x]
    for _ in range(t):
        vals.append(kernel.step(vals[-1], rng))
    return TailChainPath(0, t, np.stack(vals, axis=1))


# --------------------------------------------------------------------------
# back-and-forth chains


def joint_measure(m0_law: AtomicSpectral, kernel: AtomicKernel) -> AtomMeasure:
    """The law of ``(M_0, M_1)`` built from an atomic start law and kernel."""
    atoms = []
    for pt, w0 in zip(m0_law.points, m0_law.weights):
        vals, probs = kernel.conditional(pt)
        atoms += [(pt, v, w0 * p) for v, p in zip(vals, probs)]
    return canonicalize(atoms, d=m0_law.d)


@dataclass(frozen=True, eq=False)
class BftcSpec:
    """Ingredients of a BFTC(alpha).

    For atomic ingredients the adjointness of the forward and backward one-step
    laws is checked exactly at construction (``KernelMismatch`` otherwise).
    Analytic specs are checked on demand with :meth:`check`.
    """

    alpha: float
    m0_law: SpectralMeasure
    forward: TailKernel
    backward: TailKernel

    def __post_init__(self):
        object.__setattr__(self, "alpha", as_alpha(self.alpha))
        if self.is_atomic:
            self._check_exact()

    @property
    def d(self) -> int:
        return self.forward.d

    @property
    def is_atomic(self) -> bool:
        return (
            isinstance(self.forward, AtomicKernel)
            and isinstance(self.backward, AtomicKernel)
            and isinstance(self.m0_law, AtomicSpectral)
        )

    @classmethod
    def from_measure(cls, P: AtomMeasure, alpha) -> "BftcSpec":
        """BFTC whose forward one-step law is ``P``; the backward law is its adjoint."""
        return cls(alpha, marginal_law(P), AtomicKernel(P), AtomicKernel(adjoint(P, alpha)))

    def one_step_laws(self) -> tuple[AtomMeasure, AtomMeasure]:
        return joint_measure(self.m0_law, self.forward), joint_measure(self.m0_law, self.backward)

    def _check_exact(self):
        try:
            P, Pb = self.one_step_laws()
            if not is_admissible(P, self.alpha).admissible:
                raise KernelMismatch("forward one-step law is not admissible")
            if not adjoint(P, self.alpha).allclose(Pb):
                raise KernelMismatch("backward one-step law is not the adjoint of the forward one")
        except (NotAdmissible, UnknownAngle) as exc:
            raise KernelMismatch(str(exc)) from exc

    def reversed(self) -> "BftcSpec":
        return BftcSpec(self.alpha, self.m0_law, self.backward, self.forward)

    def check(self, stream=None, n: int = GATE_N, level: float = GATE_LEVEL, n_perm: int = 999) -> dict:
        """Statistical adjointness gate; raises ``KernelMismatch`` on rejection.

        Compares the backward one-step law with the adjoint of the forward one,
        realized by reweighting forward draws: (a) the nonzero mass
        ``Pr(M_{-1} != 0)`` against ``E|M_1|^alpha 1{M_1 != 0}`` with a normal
        z-test and (b) the laws of ``(M_0, M_{-1})`` given ``M_{-1} != 0``
        with an energy permutation test. The smaller p-value, doubled, is
        compared with ``level``.
        """
        if self.is_atomic:
            self._check_exact()
            return {"exact": True, "p_value": 1.0}
        rng = _random.as_generator(stream)
        m0 = self.m0_law.sample(n, rng)
        m1 = self.forward.sample(m0, rng)
        mb = self.backward.sample(m0, rng)
        res = compare_with_adjoint(m0, m1, m0, mb, self.alpha, rng, n_perm=n_perm)
        if res["p_value"] < level:
            raise KernelMismatch(f"backward kernel rejected as adjoint (p = {res['p_value']:.3g})")
        return res


class AdjointSample(NamedTuple):
    s: np.ndarray
    m: np.ndarray
    nonzero_mass: float
    nonzero_mass_ci: float


def adjoint_resample(s, m, alpha, size: int, stream=None) -> AdjointSample:
    """Draw from the nonzero part of the adjoint of the empirical law of ``(s, m)``.

    Each pair with ``m != 0`` becomes ``(m/|m|, s/|m|)`` with weight
    ``|m|**alpha``; ``size`` points are drawn by systematic resampling. The
    mass of that part, ``mean(|m|**alpha 1{m != 0})``, is returned with a
    0.99 normal half-width. The zero part of the adjoint is not sampled.
    """
    alpha = as_alpha(alpha)
    rng = _random.as_generator(stream)
    s = np.atleast_2d(np.asarray(s, float))
    m = np.asarray(m, float).reshape(len(s), -1)
    u, r = polar_rows(m)
    wt = np.where(r > 0, r**alpha, 0.0)
    nz = r > 0
    p = wt[nz] / wt[nz].sum()
    pos = (rng.random() + np.arange(size)) / size
    idx = np.minimum(np.searchsorted(np.cumsum(p), pos, side="right"), nz.sum() - 1)
    idx = rng.permutation(idx)
    s_star = u[nz][idx]
    m_star = (s[nz] / r[nz, None])[idx]
    return AdjointSample(s_star, m_star, float(wt.mean()), normal_ci_halfwidth(wt, CI_LEVEL))


def compare_with_adjoint(s, m, s_b, m_b, alpha, stream=None, n_perm: int = 999, n_projections: int = 8) -> dict:
    """Test whether the pairs ``(s_b, m_b)`` follow the adjoint of the law of ``(s, m)``."""
    from scipy import stats

    rng = _random.as_generator(stream)
    _, rb = polar_rows(np.asarray(m_b, float).reshape(len(s_b), -1))
    nzb = rb > 0
    _, r = polar_rows(np.asarray(m, float).reshape(len(s), -1))
    wt = np.where(r > 0, r ** as_alpha(alpha), 0.0)
    diff = nzb.mean() - wt.mean()
    se = math.sqrt(nzb.var(ddof=1) / len(nzb) + wt.var(ddof=1) / len(wt))
    p_mass = 1.0 if se == 0 else float(2 * stats.norm.sf(abs(diff) / se))
    if nzb.sum() >= 2 and (r > 0).sum() >= 2:
        ad = adjoint_resample(s, m, alpha, int(nzb.sum()), rng)
        X = np.hstack([np.atleast_2d(s_b)[nzb], np.asarray(m_b).reshape(len(s_b), -1)[nzb]])
        Y = np.hstack([ad.s, ad.m])
        res = energy_test(X, Y, n_perm=n_perm, stream=rng, n_projections=n_projections)
        p_law, stat = res.p_value, res.statistic
    else:
        p_law, stat = 1.0, 0.0
    return {
        "exact": False,
        "mass_diff": float(diff),
        "p_mass": p_mass,
        "energy": stat,
        "p_law": p_law,
        "p_value": min(1.0, 2 * min(p_mass, p_law)),
    }


def sample_bftc(spec: BftcSpec, s: int, t: int, stream=None, size: int | None = None) -> TailChainPath:
    """Sample ``size`` (default 1) BFTC paths on times ``-s .. t``.

    ``M_0`` comes from ``spec.m0_law``; the forward and backward extensions use
    separate draws, so they are independent given ``M_0``.
    """
    if s < 0 or t < 0:
        raise ValueError("horizons must be >= 0")
    rng = _random.as_generator(stream)
    n = 1 if size is None else int(size)
    m0 = np.asarray(spec.m0_law.sample(n, rng), float).reshape(n, spec.d)
    fwd = [m0]
    for _ in range(t):
        fwd.append(spec.forward.step(fwd[-1], rng))
    back = [m0]
    for _ in range(s):
        back.append(spec.backward.step(back[-1], rng))
    values = np.stack(back[::-1] + fwd[1:], axis=1)
    return TailChainPath(s, t, values)


def sample_bftc_parallel(spec: BftcSpec, s: int, t: int, n: int, seed, workers: int | None = None) -> TailChainPath:
    """Like :func:`sample_bftc` for ``n`` paths split over threads.

    Chunks of fixed size draw from streams spawned from ``seed``; the result
    does not depend on the number of workers.
    """
    parts = _random.parallel_map_chunks(lambda k, rng: sample_bftc(spec, s, t, rng, k).values, n, seed, workers)
    return TailChainPath(s, t, np.concatenate(parts, axis=0))


# --------------------------------------------------------------------------
# time-change identities


@dataclass(frozen=True)
class TestFunctional:
    """Bounded path functional vanishing when its first argument is 0.

    ``fn`` maps an array of windows of shape ``(n, s + 1 + t, d)`` to ``n``
    values.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    bound: float
    name: str = "f"

    __test__ = False  # not a pytest class

    def __call__(self, windows: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(windows), dtype=float)

    def vanishes(self, length: int, d: int, stream=None, trials: int = 16) -> bool:
        rng = _random.as_generator(stream)
        w = rng.standard_normal((trials, length, d)) * 3.0
        w[:, 0] = 0.0
        return bool(np.all(self(w) == 0.0))


class FamilyMember(NamedTuple):
    i: int
    estimate: float
    ci: float


def _member_values(f: TestFunctional, paths: TailChainPath, s: int, t: int, i: int, alpha: float) -> np.ndarray:
    # window of times -s+i .. t+i inside paths sampled on -s .. t+s
    win = paths.values[:, i : i + s + t + 1]
    ri = np.linalg.norm(paths.values[:, s + i], axis=1)
    out = np.zeros(len(win))
    alive = ri > 0
    if alive.any():
        fv = f(win[alive] / ri[alive, None, None])
        if np.any(np.abs(fv) > f.bound * (1 + 1e-12)):
            raise UnboundedFunctional(f"{f.name} exceeds its declared bound {f.bound}")
        out[alive] = fv * ri[alive] ** alpha
    return out


def timechange_family(f: TestFunctional, spec: BftcSpec, s: int, t: int, n: int, stream=None, paths=None) -> list[FamilyMember]:
    """Monte Carlo estimates of the ``s + 1`` reweighted expectations.

    Member ``i`` estimates ``E[f(M_{-s+i}/|M_i|, ..., M_{t+i}/|M_i|) |M_i|^alpha
    1{M_i != 0}]``. All members reuse one batch of ``n`` paths on times
    ``-s .. t + s``; half-widths are 0.99 normal intervals.
    """
    if n < 2:
        raise ValueError("need n >= 2 paths")
    if not f.vanishes(s + 1 + t, spec.d):
        raise ValueError(f"{f.name} does not vanish when its first argument is 0")
    if paths is None:
        paths = sample_bftc(spec, s, t + s, stream, n)
    out = []
    for i in range(s + 1):
        v = _member_values(f, paths, s, t, i, spec.alpha)
        out.append(FamilyMember(i, float(v.mean()), normal_ci_halfwidth(v, CI_LEVEL)))
    return out


def timechange_gap(f: TestFunctional, spec: BftcSpec, s: int, t: int, i: int, n: int, stream=None) -> tuple[float, float]:
    """Estimate and 0.99 half-width of member ``i`` of the time-change family."""
    if not 0 <= i <= s:
        raise ValueError("index i must lie in 0..s")
    if n < 2:
        raise ValueError("need n >= 2 paths")
    if not f.vanishes(s + 1 + t, spec.d):
        raise ValueError(f"{f.name} does not vanish when its first argument is 0")
    paths = sample_bftc(spec, s - i, t + i, stream, n)
    shifted = TailChainPath(s, t + s, np.concatenate(
        [np.zeros((n, i, spec.d)), paths.values, np.zeros((n, s - i, spec.d))], axis=1))
    v = _member_values(f, shifted, s, t, i, spec.alpha)
    return float(v.mean()), normal_ci_halfwidth(v, CI_LEVEL)


def family_agrees(members: list[FamilyMember]) -> bool:
    """Pairwise agreement within the sum of the half-widths."""
    return all(abs(a.estimate - b.estimate) <= a.ci + b.ci for a, b in itertools.combinations(members, 2))


# --------------------------------------------------------------------------
# exact versions for atomic specs


def enumerate_paths(spec: BftcSpec, s: int, t: int) -> tuple[np.ndarray, np.ndarray]:
    """All paths on times ``-s .. t`` of an atomic BFTC with their probabilities."""
    if not spec.is_atomic:
        raise TypeError("path enumeration needs an atomic spec")

    def extend(kernel, states, probs):
        new_states, new_probs = [], []
        for x, p in zip(states, probs):
            r = np.linalg.norm(x)
            if r == 0:
                new_states.append(np.zeros_like(x))
                new_probs.append(p)
                continue
            vals, q = kernel.conditional(x / r)
            new_states += list(r * vals)
            new_probs += list(p * q)
        return new_states, new_probs

    paths = []
    for pt, w in zip(spec.m0_law.points, spec.m0_law.weights):
        fwd = [([pt], w)]
        for _ in range(t):
            nxt = []
            for seq, p in fwd:
                st, pr = extend(spec.forward, [seq[-1]], [p])
                nxt += [(seq + [x], q) for x, q in zip(st, pr)]
            fwd = nxt
        back = [([pt], 1.0)]
        for _ in range(s):
            nxt = []
            for seq, p in back:
                st, pr = extend(spec.backward, [seq[-1]], [p])
                nxt += [(seq + [x], q) for x, q in zip(st, pr)]
            back = nxt
        for (bseq, bp), (fseq, fp) in itertools.product(back, fwd):
            paths.append((np.array(bseq[::-1] + fseq[1:]), bp * fp))
    values = np.array([p for p, _ in paths])
    probs = np.array([q for _, q in paths])
    return values, probs


def timechange_family_exact(f: TestFunctional, spec: BftcSpec, s: int, t: int) -> list[float]:
    """Exact values of the time-change family for an atomic spec."""
    values, probs = enumerate_paths(spec, s, t + s)
    paths = TailChainPath(s, t + s, values)
    return [math.fsum(_member_values(f, paths, s, t, i, spec.alpha) * probs) for i in range(s + 1)]


def onestep_identity(f: Callable, P: AtomMeasure, alpha) -> tuple[float, float]:
    """Both sides of ``E f(M_{-1}, M_0) = E[f(M_0/|M_1|, M_1/|M_1|) |M_1|^alpha 1{M_1 != 0}]``.

    The left side sums over the atoms of the adjoint of ``P``; ``f(y_{-1}, y_0)``
    must vanish when ``y_{-1} = 0``.
    """
    alpha = as_alpha(alpha)
    Pb = adjoint(P, alpha)
    lhs = math.fsum(float(f(m, s)) * w for s, m, w in zip(Pb.s, Pb.m, Pb.w))
    rhs = 0.0
    terms = []
    for s, m, w in zip(P.s, P.m, P.w):
        r = np.linalg.norm(m)
        if r > 0:
            terms.append(float(f(s / r, m / r)) * r**alpha * w)
    rhs = math.fsum(terms)
    return lhs, rhs


def default_battery() -> list[TestFunctional]:
    """Bounded functionals vanishing when the first block is 0.

    Indicators of a nonzero start and of positive first coordinates, plus
    clipped norms, spread over the window.
    """

    def norm(w, j):
        return np.linalg.norm(w[:, j], axis=1)

    return [
        TestFunctional(lambda w: (norm(w, 0) > 0).astype(float), 1.0, "nonzero_start"),
        TestFunctional(lambda w: np.minimum(norm(w, 0), 1.0), 1.0, "clipped_start"),
        TestFunctional(lambda w: (w[:, 0, 0] > 0).astype(float), 1.0, "positive_start"),
        TestFunctional(lambda w: np.minimum(norm(w, 0), 1.0) * np.minimum(norm(w, -1), 1.0), 1.0, "clipped_ends"),
        TestFunctional(
            lambda w: (norm(w, 0) > 0) * (w[:, w.shape[1] // 2, 0] > 0) * np.minimum(norm(w, 1), 2.0), 2.0, "sign_middle"
        ),
    ]
