"""Simulation of Markov recursions ``X_t = Phi(X_{t-1}, e_t)`` and extreme windows.

Noise batches are tuples of arrays sharing a leading axis; ``transition`` and
``tail_map`` act on rows of states with a matching noise batch. Trajectories
are generated in chunks of :data:`tailchains._random.CHUNK` noise draws, so
the generic loop and the compiled fast paths consume the random stream in the
same order and give the same output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numba
import numpy as np

from . import _random
from .errors import DegenerateSample, NoExceedances, NumericOverflow
from .measures import as_alpha

DEFAULT_CAP = 1e150
DEFAULT_BURN_IN = 10_000

Noise = tuple


def _take(noise: Noise, idx) -> Noise:
    return tuple(a[idx] for a in noise)


@dataclass(frozen=True, eq=False)
class AffineStep:
    """Marks a model as ``X_t = A_t X_{t-1} + B_t``.

    ``coeffs(noise)`` returns ``(A, B)`` with shapes ``(k, d, d)`` (or
    ``(1, d, d)`` for a fixed matrix) and ``(k, d)``.
    """

    coeffs: Callable[[Noise], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True, eq=False)
class ModelSpec:
    d: int
    transition: Callable[[np.ndarray, Noise], np.ndarray]
    noise: Callable[[int, np.random.Generator], Noise]
    tail_map: Callable[[np.ndarray, Noise], np.ndarray]
    alpha: float | None = None
    alpha_known: bool = True
    init: Callable[[np.random.Generator], np.ndarray] | None = None
    burn_in: int = DEFAULT_BURN_IN
    bounded_growth: bool = True  # author's declaration that sup_{|y|<=x} |Phi(y, e)| = O(x)
    name: str = "model"
    affine: AffineStep | None = None

    def __post_init__(self):
        if self.alpha is not None:
            object.__setattr__(self, "alpha", as_alpha(self.alpha))

    def initial_state(self, rng) -> np.ndarray:
        if self.init is None:
            return np.zeros(self.d)
        return np.asarray(self.init(rng), float).reshape(self.d)


@numba.njit(cache=True)
def _affine_run(x0, A, B, cap):
    k, d = B.shape
    out = np.empty((k, d))
    x = x0.copy()
    fixed = A.shape[0] == 1
    for t in range(k):
        a = A[0] if fixed else A[t]
        nrm = 0.0
        y = np.empty(d)
        for i in range(d):
            acc = B[t, i]
            for j in range(d):
                acc += a[i, j] * x[j]
            y[i] = acc
            nrm += acc * acc
        if not nrm <= cap * cap:  # also catches nan
            return out, t
        x = y
        out[t] = y
    return out, -1


def simulate(model: ModelSpec, n: int, burn_in: int | None = None, seed=None, cap: float = DEFAULT_CAP) -> np.ndarray:
    """Trajectory of ``n`` states after ``burn_in`` discarded steps, shape ``(n, d)``.

    Raises ``NumericOverflow`` once a norm exceeds ``cap``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    burn = model.burn_in if burn_in is None else int(burn_in)
    rng = _random.as_generator(seed)
    x = model.initial_state(rng)
    total = burn + n
    out = np.empty((n, model.d))
    pos = 0
    for size in _random.chunk_sizes(total):
        e = model.noise(size, rng)
        if model.affine is not None:
            A, B = model.affine.coeffs(e)
            block, bad = _affine_run(x, np.ascontiguousarray(A, float), np.ascontiguousarray(B, float), cap)
            if bad >= 0:
                raise NumericOverflow(f"norm exceeded {cap:g} at step {pos + bad}")
        else:
            block = np.empty((size, model.d))
            for i in range(size):
                x = np.asarray(model.transition(x[None], _take(e, slice(i, i + 1))), float)[0]
                if not np.linalg.norm(x) <= cap:
                    raise NumericOverflow(f"norm exceeded {cap:g} at step {pos + i}")
                block[i] = x
        x = block[-1].copy()
        lo = max(pos, burn)
        if pos + size > burn:
            out[lo - burn : pos + size - burn] = block[lo - pos :]
        pos += size
    return out


def simulate_replicates(model: ModelSpec, n: int, replicates: int, seed, burn_in: int | None = None,
                        workers: int | None = None, cap: float = DEFAULT_CAP) -> list[np.ndarray]:
    """Independent chains, one spawned stream each, run across threads."""
    rngs = _random.spawn(seed, replicates)
    nw = min(_random.worker_count(workers), replicates)
    if nw <= 1:
        return [simulate(model, n, burn_in, r, cap) for r in rngs]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=nw) as pool:
        return list(pool.map(lambda r: simulate(model, n, burn_in, r, cap), rngs))


# --------------------------------------------------------------------------
# windows


@dataclass(frozen=True)
class ExtremeWindow:
    y: float
    normalized: np.ndarray  # (s + t + 1, d), middle row has norm 1


@dataclass(frozen=True, eq=False)
class WindowSet(Sequence):
    """All windows around exceedances, stored as arrays.

    ``normalized[k, j]`` is ``X_{i_k - s + j} / |X_{i_k|`` for the ``k``-th
    exceedance time ``i_k = index[k]``.
    """

    s: int
    t: int
    threshold: float
    y: np.ndarray
    normalized: np.ndarray
    index: np.ndarray

    def __len__(self):
        return len(self.y)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return WindowSet(self.s, self.t, self.threshold, self.y[k], self.normalized[k], self.index[k])
        return ExtremeWindow(float(self.y[k]), self.normalized[k])

    def __iter__(self) -> Iterator[ExtremeWindow]:
        return (self[k] for k in range(len(self)))

    def at(self, j: int) -> np.ndarray:
        """Normalized values at relative time ``j`` for every window."""
        return self.normalized[:, j + self.s]

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.s, self.t, self.threshold, self.y[idx], self.normalized[idx], self.index[idx])

    def to_rows(self) -> np.ndarray:
        """Rows ``(y, flattened window)`` for CSV output."""
        return np.column_stack([self.y, self.normalized.reshape(len(self.y), -1)])


def norms(traj) -> np.ndarray:
    traj = np.asarray(traj, float)
    return np.abs(traj) if traj.ndim == 1 else np.linalg.norm(traj, axis=1)


def extract_windows(traj, x: float, s: int, t: int) -> WindowSet:
    """Windows ``X_{j-s..j+t} / |X_j|`` around every ``j`` with ``|X_j| > x``.

    Exceedances too close to either end for a full window are skipped;
    overlapping windows are all kept.
    """
    traj = np.asarray(traj, float)
    if traj.ndim == 1:
        traj = traj[:, None]
    if x <= 0:
        raise ValueError("threshold must be positive")
    if s < 0 or t < 0 or s + t >= len(traj):
        raise ValueError("window longer than the trajectory")
    r = norms(traj)
    idx = np.flatnonzero(r > x)
    idx = idx[(idx >= s) & (idx + t < len(traj))]
    if len(idx) == 0:
        raise NoExceedances(f"no complete window above threshold {x:g}")
    rel = np.arange(-s, t + 1)
    win = traj[idx[:, None] + rel] / r[idx, None, None]
    return WindowSet(s, t, float(x), r[idx] / x, win, idx)


def percentile_threshold(traj, q: float) -> float:
    return float(np.percentile(norms(traj), q))


# --------------------------------------------------------------------------
# checks of the scaling limit


def phi_limit_probe(model: ModelSpec, s, e: Noise, radii: Sequence[float]) -> np.ndarray:
    """Gaps ``|Phi(x s, e) / x - phi(s, e)|`` at each radius."""
    radii = np.asarray(radii, float)
    if np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be positive and increasing")
    s = np.asarray(s, float).reshape(1, model.d)
    e = tuple(np.asarray(a)[None] if np.ndim(a) == 0 or np.shape(a)[0] != 1 else np.asarray(a) for a in e)
    limit = np.asarray(model.tail_map(s, e), float)[0]
    return np.array([np.linalg.norm(np.asarray(model.transition(x * s, e), float)[0] / x - limit) for x in radii])


@dataclass(frozen=True)
class GrowthProbe:
    radii: tuple[float, float]
    sup: tuple[float, float]
    ratio: float
    ok: bool


def growth_probe(model: ModelSpec, e: Noise, radii=(10.0, 100.0), points: int = 33) -> GrowthProbe:
    """Lattice estimate of ``sup_{|y| <= x} |Phi(y, e)|`` at two radii.

    Linear growth means the ratio of the two suprema stays within twice the
    ratio of the radii.
    """
    grid = np.linspace(-1.0, 1.0, points)
    if model.d <= 3:
        lattice = np.stack(np.meshgrid(*([grid] * model.d)), axis=-1).reshape(-1, model.d)
    else:
        lattice = np.random.default_rng(0).uniform(-1, 1, (points**3, model.d))
    lattice = lattice[np.linalg.norm(lattice, axis=1) <= 1.0]
    e1 = tuple(np.repeat(np.asarray(a).reshape(1, *np.shape(a)[1:]), len(lattice), axis=0) for a in e)
    sups = []
    for x in radii:
        vals = np.asarray(model.transition(x * lattice, e1), float)
        sups.append(float(np.max(np.linalg.norm(vals, axis=1))))
    ratio = sups[1] / sups[0] if sups[0] > 0 else np.inf
    return GrowthProbe(tuple(radii), tuple(sups), ratio, bool(ratio <= 2 * radii[1] / radii[0]))


def hill_alpha(norm_sample, k: int) -> float:
    """Hill estimate ``1 / mean(log X_(i) - log X_(k+1))`` over the top ``k``."""
    x = np.asarray(norm_sample, float).ravel()
    if k < 2 or k >= len(x):
        raise ValueError(f"need 2 <= k < n, got k={k}, n={len(x)}")
    top = -np.sort(-np.partition(x, len(x) - k - 1)[len(x) - k - 1 :])
    if np.any(top <= 0):
        raise DegenerateSample("top order statistics must be positive")
    if 1 - len(np.unique(top)) / len(top) > 0.5:
        raise DegenerateSample("more than half of the top order statistics are tied")
    h = np.mean(np.log(top[:k]) - np.log(top[k]))
    if h <= 0:
        raise DegenerateSample("zero log-spacing")
    return float(1.0 / h)


def stationarity_check(traj, quantiles=(0.5, 0.9, 0.99), tol: float = 0.1) -> dict:
    """Compare norm quantiles of the first and second half of a trajectory."""
    r = norms(traj)
    h = len(r) // 2
    q1 = np.quantile(r[:h], quantiles)
    q2 = np.quantile(r[h:], quantiles)
    rel = np.abs(q1 - q2) / np.maximum(np.abs(q1) + np.abs(q2), 1e-300) * 2
    return {
        "quantiles": list(quantiles),
        "first_half": q1.tolist(),
        "second_half": q2.tolist(),
        "max_relative_gap": float(rel.max()),
        "ok": bool(rel.max() <= tol),
    }
