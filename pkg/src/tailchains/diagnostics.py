"""Two-sample statistics, permutation tests and confidence intervals.

Energy distance is the common yardstick for comparing laws. It is computed as
the V-statistic

    2 mean|x - y| - mean|x - x'| - mean|y - y'|

over all pairs (self-pairs included), which is exactly zero for identical
samples and never negative. In one dimension the pair sums come from a single
sort. For large multivariate samples a sliced version averages 1-d energy
distances over fixed random directions; the factor ``1 / E|theta_1|`` makes it
an unbiased approximation of the full statistic.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy import special, stats

from .errors import DimensionMismatch, TailChainError, TooFewWindows

EXACT_PAIR_LIMIT = 4_000_000
DEFAULT_PERM = 999
DEFAULT_BOOT = 1000


class PreconditionError(TailChainError, ValueError):
    module = "diagnostics"


@dataclass(frozen=True)
class TwoSampleResult:
    statistic: float
    p_value: float
    n1: int
    n2: int
    method: str

    def to_record(self, test: str, seed=None) -> dict:
        rec = {"test": test, **asdict(self), "seed": seed}
        rec.pop("method")
        return rec

    def to_json(self, test: str, seed=None) -> str:
        return json.dumps(self.to_record(test, seed), sort_keys=True)


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    elif x.ndim > 2:
        x = x.reshape(len(x), -1)
    return x


def _check_pair(X, Y) -> tuple[np.ndarray, np.ndarray]:
    X, Y = _as_2d(X), _as_2d(Y)
    if len(X) == 0 or len(Y) == 0:
        raise PreconditionError("energy distance needs two nonempty samples")
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatch(f"dimensions {X.shape[1]} and {Y.shape[1]} differ")
    return X, Y


def _sorted_pair_sum(z: np.ndarray) -> np.ndarray:
    """sum_{i<j} |z_i - z_j| along the last axis of an already sorted array."""
    n = z.shape[-1]
    coef = 2 * np.arange(n) - n + 1
    return z @ coef


def _energy_1d(x: np.ndarray, y: np.ndarray) -> float:
    n, m = len(x), len(y)
    tz = _sorted_pair_sum(np.sort(np.concatenate([x, y])))
    tx = _sorted_pair_sum(np.sort(x))
    ty = _sorted_pair_sum(np.sort(y))
    cross = tz - tx - ty
    return float(2 * cross / (n * m) - 2 * tx / n**2 - 2 * ty / m**2)


def _mean_abs_projection(d: int) -> float:
    # E|theta_1| for theta uniform on S^{d-1}
    return float(np.exp(special.gammaln(d / 2) - special.gammaln((d + 1) / 2)) / np.sqrt(np.pi))


def directions(d: int, k: int, seed: int = 0) -> np.ndarray:
    z = np.random.default_rng(seed).standard_normal((k, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _pair_mean(A: np.ndarray, B: np.ndarray, block: int = 2048) -> float:
    from scipy.spatial.distance import cdist

    total = 0.0
    for i in range(0, len(A), block):
        total += cdist(A[i : i + block], B).sum()
    return total / (len(A) * len(B))


def energy_distance(X, Y, method: str = "auto", n_projections: int = 32, seed: int = 0) -> float:
    """Energy distance between two samples of vectors (rows).

    ``method`` is ``"exact"``, ``"sliced"`` or ``"auto"`` (exact in one
    dimension or when the number of pairs is small, sliced otherwise).
    """
    X, Y = _check_pair(X, Y)
    d = X.shape[1]
    if d == 1:
        return max(_energy_1d(X[:, 0], Y[:, 0]), 0.0)
    if method == "auto":
        method = "exact" if (len(X) + len(Y)) ** 2 <= EXACT_PAIR_LIMIT else "sliced"
    if method == "exact":
        val = 2 * _pair_mean(X, Y) - _pair_mean(X, X) - _pair_mean(Y, Y)
        return max(float(val), 0.0)
    theta = directions(d, n_projections, seed)
    vals = [_energy_1d(X @ t, Y @ t) for t in theta]
    return max(float(np.mean(vals)) / _mean_abs_projection(d), 0.0)


# --------------------------------------------------------------------------
# permutation tests


class _SortedEnergy:
    """Energy statistic for relabelings of a fixed pooled 1-d (or projected) sample.

    The pooled projections are sorted once; each relabeling then costs
    O(k * N) with no further sorting.
    """

    def __init__(self, Z: np.ndarray, n1: int, scale: float):
        # Z: (k, N) projections of the pooled sample
        self.order = np.argsort(Z, axis=1, kind="stable")
        self.zs = np.take_along_axis(Z, self.order, axis=1)
        self.n1 = n1
        self.n2 = Z.shape[1] - n1
        self.tz = _sorted_pair_sum(self.zs)
        self.scale = scale

        n1, n2 = self.n1, self.n2
        self.pos = np.arange(Z.shape[1])
        self.ax = 2.0 / (n1 * n2) + 2.0 / n1**2
        self.ay = 2.0 / (n1 * n2) + 2.0 / n2**2
        self.base = 2.0 * self.tz / (n1 * n2)

    def _energy(self, lab: np.ndarray) -> np.ndarray:
        # lab: x-labels in sorted order, shape (k, N). Expands
        # sum_p z_p * (lab_p * gx_p + (1 - lab_p) * gy_p) into dot products.
        n1, n2, ax, ay = self.n1, self.n2, self.ax, self.ay
        c = np.cumsum(lab, axis=1, dtype=np.int64).astype(float)
        zl = self.zs * lab
        zc = np.einsum("kn,kn->k", self.zs, c)
        zlc = np.einsum("kn,kn->k", zl, c)
        zlp = zl @ self.pos
        zl1 = zl.sum(axis=1)
        zp = self.zs @ self.pos
        z1 = self.zs.sum(axis=1)
        gy_sum = ay * (2 * zp - 2 * zc - (n2 - 1) * z1)
        diff = 2 * (ax + ay) * zlc - 2 * ay * zlp - ((n1 + 1) * ax + (1 - n2) * ay) * zl1
        return self.base - (gy_sum + diff)

    def __call__(self, is_x: np.ndarray) -> float:
        return float(np.mean(self._energy(is_x[self.order])) / self.scale)

    def permuted(self, is_x: np.ndarray, rng: np.random.Generator) -> float:
        if self.zs.shape[0] == 1:
            # a uniform relabeling of sorted positions has the same law
            lab = rng.permutation(is_x[self.order[0]])[None, :]
        else:
            lab = rng.permutation(is_x)[self.order]
        return float(np.mean(self._energy(lab)) / self.scale)


class _MatrixEnergy:
    def __init__(self, Z: np.ndarray, n1: int):
        from scipy.spatial.distance import cdist

        self.D = cdist(Z, Z)
        self.n1 = n1
        self.n2 = len(Z) - n1

    def __call__(self, is_x: np.ndarray) -> float:
        a = is_x.astype(float)
        b = 1.0 - a
        Da = self.D @ a
        sxx = a @ Da
        sxy = b @ Da
        syy = b @ (self.D @ b)
        return float(2 * sxy / (self.n1 * self.n2) - sxx / self.n1**2 - syy / self.n2**2)


def _energy_engine(Z: np.ndarray, n1: int, method: str, n_projections: int, seed: int):
    d = Z.shape[1]
    if d == 1:
        return _SortedEnergy(Z.T, n1, 1.0)
    if method == "auto":
        method = "exact" if len(Z) ** 2 <= EXACT_PAIR_LIMIT else "sliced"
    if method == "exact":
        return _MatrixEnergy(Z, n1)
    theta = directions(d, n_projections, seed)
    return _SortedEnergy(theta @ Z.T, n1, _mean_abs_projection(d))


def permutation_test(
    X,
    Y,
    statistic: str | Callable = "energy",
    n_perm: int = DEFAULT_PERM,
    stream=None,
    method: str = "auto",
    n_projections: int = 32,
) -> TwoSampleResult:
    """Permutation p-value ``(1 + #{T_perm >= T_obs}) / (n_perm + 1)``.

    ``statistic`` is ``"energy"`` (fast relabeling engine) or any callable
    ``statistic(X, Y) -> float`` with large values against the null.
    """
    if n_perm < 100:
        raise PreconditionError(f"n_perm must be >= 100, got {n_perm}")
    rng = stream if isinstance(stream, np.random.Generator) else np.random.default_rng(stream)
    X, Y = _check_pair(X, Y)
    n1, n2 = len(X), len(Y)
    Z = np.vstack([X, Y])
    is_x = np.zeros(n1 + n2, dtype=bool)
    is_x[:n1] = True
    if statistic == "energy":
        stat = _energy_engine(Z, n1, method, n_projections, seed=0)
    else:
        def stat(mask):
            return float(statistic(Z[mask], Z[~mask]))

    if hasattr(stat, "permuted"):
        draw = lambda: stat.permuted(is_x, rng)  # noqa: E731
    else:
        draw = lambda: stat(rng.permutation(is_x))  # noqa: E731
    observed = stat(is_x)
    tol = 1e-10 * max(1e-3, abs(observed))
    count = sum(draw() >= observed - tol for _ in range(n_perm))
    return TwoSampleResult(max(observed, 0.0), (1 + count) / (n_perm + 1), n1, n2, "permutation")


def energy_test(X, Y, n_perm: int = DEFAULT_PERM, stream=None, **kw) -> TwoSampleResult:
    return permutation_test(X, Y, "energy", n_perm, stream, **kw)


# --------------------------------------------------------------------------
# intervals


def normal_ci_halfwidth(values, level: float = 0.99) -> float:
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        raise PreconditionError("need at least two values for a confidence interval")
    z = stats.norm.ppf(0.5 + level / 2)
    return float(z * v.std(ddof=1) / np.sqrt(len(v)))


def binomial_ci(k: int, n: int, level: float = 0.99) -> tuple[float, float]:
    """Clopper-Pearson interval for a binomial proportion."""
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="exact")
    return float(ci.low), float(ci.high)


def ks_one_sample(sample, cdf: Callable) -> TwoSampleResult:
    res = stats.kstest(np.asarray(sample, float), cdf)
    return TwoSampleResult(float(res.statistic), float(res.pvalue), len(sample), 0, "asymptotic")


def ks_two_sample(x, y) -> TwoSampleResult:
    res = stats.ks_2samp(np.asarray(x, float), np.asarray(y, float))
    return TwoSampleResult(float(res.statistic), float(res.pvalue), len(x), len(y), "asymptotic")


def block_bootstrap_ci(
    windows,
    statistic: Callable,
    block_len: int,
    n_boot: int = DEFAULT_BOOT,
    level: float = 0.95,
    stream=None,
) -> tuple[float, float]:
    """Moving-block bootstrap percentile interval.

    ``windows`` is indexed along axis 0 in time order; blocks of
    ``block_len`` consecutive windows are drawn with replacement until the
    original length is reached.
    """
    if block_len < 1:
        raise PreconditionError("block_len must be >= 1")
    if n_boot < 200:
        raise PreconditionError("n_boot must be >= 200")
    data = np.asarray(windows)
    n = len(data)
    if n // block_len < 5:
        raise TooFewWindows(f"{n} windows make fewer than 5 blocks of length {block_len}")
    rng = stream if isinstance(stream, np.random.Generator) else np.random.default_rng(stream)
    n_blocks = -(-n // block_len)
    offsets = np.arange(block_len)
    reps = np.empty(n_boot)
    for b in range(n_boot):
        starts = rng.integers(0, n - block_len + 1, n_blocks)
        idx = (starts[:, None] + offsets).ravel()[:n]
        reps[b] = statistic(data[idx])
    lo, hi = np.quantile(reps, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)
