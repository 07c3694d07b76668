"""Polar decomposition, Pareto radii and finite atomic measures.

Atomic measures live on ``S^{d-1} x R^d``: each atom is a triple ``(s, m, w)``
with ``s`` a unit vector, ``m`` an arbitrary vector and ``w`` its probability.
They are kept in a canonical form (merged duplicates, sorted, weights summing
to one) so that two measures can be compared coordinate by coordinate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import BadWeights, DimensionMismatch, DomainError, ZeroVector

UNIT_TOL = 1e-12
MERGE_TOL = 1e-9


@dataclass(frozen=True)
class TailIndex:
    alpha: float

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha <= 0:
            raise DomainError(f"tail index must be positive, got {self.alpha}")

    def __float__(self):
        return float(self.alpha)


def as_alpha(alpha) -> float:
    return float(TailIndex(float(alpha)))


@dataclass(frozen=True)
class UnitVector:
    coords: tuple

    def __post_init__(self):
        c = tuple(float(x) for x in np.ravel(self.coords))
        if len(c) < 1:
            raise DomainError("unit vector needs dimension >= 1")
        if abs(np.linalg.norm(c) - 1.0) > UNIT_TOL:
            raise DomainError(f"not a unit vector: {c}")
        object.__setattr__(self, "coords", c)

    @property
    def d(self) -> int:
        return len(self.coords)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)


def polar(v) -> tuple[UnitVector, float]:
    """Split ``v`` into its direction and Euclidean norm."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    r = float(np.linalg.norm(v))
    if r == 0.0:
        raise ZeroVector("polar decomposition of the zero vector")
    u = v / r
    # a second division pins the norm to 1 up to rounding of the last ulp
    u = u / np.linalg.norm(u)
    return UnitVector(tuple(u)), r


def polar_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise polar split; zero rows get direction 0 and radius 0."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(r[..., None] > 0, x / np.where(r > 0, r, 1.0)[..., None], 0.0)
    return u, r


def sample_pareto(alpha, u):
    """Inverse-CDF Pareto(alpha) draw ``u ** (-1/alpha)`` for ``u`` in (0, 1]."""
    alpha = as_alpha(alpha)
    arr = np.asarray(u, dtype=float)
    if np.any(~(arr > 0)) or np.any(arr > 1):
        raise DomainError("uniform variate must lie in (0, 1]")
    out = arr ** (-1.0 / alpha)
    return float(out) if out.ndim == 0 else out


def pareto_radii(alpha, size, rng) -> np.ndarray:
    # 1 - U lies in (0, 1], the range sample_pareto accepts
    return sample_pareto(alpha, 1.0 - rng.random(size))


# --------------------------------------------------------------------------
# atoms


@dataclass(frozen=True)
class Atom:
    s: tuple
    m: tuple
    w: float

    def __post_init__(self):
        object.__setattr__(self, "s", tuple(float(x) for x in np.ravel(self.s)))
        object.__setattr__(self, "m", tuple(float(x) for x in np.ravel(self.m)))
        object.__setattr__(self, "w", float(self.w))
        if len(self.s) != len(self.m):
            raise DimensionMismatch("atom s and m must share dimension")


def match_row(rows: np.ndarray, x: np.ndarray, tol: float = MERGE_TOL) -> int:
    """Index of the first row of ``rows`` equal to ``x`` within tolerance, else -1."""
    if len(rows) == 0:
        return -1
    scale = np.maximum(1.0, np.maximum(np.max(np.abs(rows), axis=1), np.max(np.abs(x))))
    hit = np.flatnonzero(np.max(np.abs(rows - x), axis=1) <= tol * scale)
    return int(hit[0]) if hit.size else -1


def match_rows(rows: np.ndarray, pts: np.ndarray, tol: float = MERGE_TOL) -> np.ndarray:
    """For each row, the index of the first matching point in ``pts`` or -1."""
    rows = np.atleast_2d(rows)
    if len(rows) == 0 or len(pts) == 0:
        return np.full(len(rows), -1)
    diff = np.max(np.abs(rows[:, None, :] - pts[None, :, :]), axis=2)
    hit = diff <= tol
    return np.where(hit.any(axis=1), hit.argmax(axis=1), -1)


def _lexsort_rows(a: np.ndarray) -> np.ndarray:
    return np.lexsort(a.T[::-1]) if a.size else np.arange(len(a))


class AtomMeasure:
    """Canonical finite probability measure on ``S^{d-1} x R^d``.

    Build instances with :func:`canonicalize`; the constructor assumes its
    arrays already are canonical.
    """

    __slots__ = ("s", "m", "w", "d")

    def __init__(self, s: np.ndarray, m: np.ndarray, w: np.ndarray):
        self.s = np.array(s, dtype=float)
        self.m = np.array(m, dtype=float)
        self.w = np.array(w, dtype=float)
        self.d = self.s.shape[1]
        for a in (self.s, self.m, self.w):
            a.setflags(write=False)

    def __len__(self):
        return len(self.w)

    def __iter__(self):
        for s, m, w in zip(self.s, self.m, self.w):
            yield Atom(tuple(s), tuple(m), w)

    @property
    def atoms(self) -> list[Atom]:
        return list(self)

    def __repr__(self):
        body = ", ".join(f"({list(a.s)}, {list(a.m)}, {a.w:.6g})" for a in self)
        return f"AtomMeasure(d={self.d}, [{body}])"

    def __eq__(self, other):
        if not isinstance(other, AtomMeasure):
            return NotImplemented
        return (
            self.d == other.d
            and len(self) == len(other)
            and np.array_equal(self.s, other.s)
            and np.array_equal(self.m, other.m)
            and np.array_equal(self.w, other.w)
        )

    __hash__ = None

    def allclose(self, other: "AtomMeasure", atol: float = 1e-10) -> bool:
        if self.d != other.d or len(self) != len(other):
            return False
        return bool(
            np.allclose(self.s, other.s, rtol=0, atol=atol)
            and np.allclose(self.m, other.m, rtol=atol, atol=atol)
            and np.allclose(self.w, other.w, rtol=0, atol=atol)
        )

    @property
    def nonzero(self) -> np.ndarray:
        """Mask of atoms with ``m != 0``."""
        return np.any(self.m != 0.0, axis=1)

    def sphere_marginal(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct sphere points (sorted) and their total mass."""
        pts, inv = np.unique(self.s, axis=0, return_inverse=True)
        return pts, np.bincount(inv.ravel(), weights=self.w, minlength=len(pts))

    def to_dict(self) -> dict:
        return {
            "d": int(self.d),
            "atoms": [{"s": list(a.s), "m": list(a.m), "w": a.w} for a in self],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc: dict) -> "AtomMeasure":
        d = int(doc["d"])
        atoms = [Atom(a["s"], a["m"], a["w"]) for a in doc["atoms"]]
        for a in atoms:
            if len(a.s) != d:
                raise DimensionMismatch(f"atom dimension {len(a.s)} != d={d}")
        return canonicalize(atoms, d=d)

    @classmethod
    def from_json(cls, text: str) -> "AtomMeasure":
        return cls.from_dict(json.loads(text))


def _as_triples(atoms) -> list[tuple[np.ndarray, np.ndarray, float]]:
    out = []
    for a in atoms:
        if isinstance(a, Atom):
            s, m, w = a.s, a.m, a.w
        else:
            s, m, w = a
        out.append((np.atleast_1d(np.asarray(s, float)), np.atleast_1d(np.asarray(m, float)), float(w)))
    return out


def _normalize(w: np.ndarray) -> np.ndarray:
    """Scale to an exact (``math.fsum``) total of 1; a no-op when already there."""
    total = math.fsum(w)
    if total == 1.0:
        return w
    w = w / total
    k = int(np.argmax(w))
    for _ in range(4):
        total = math.fsum(w)
        if total == 1.0:
            break
        w[k] += 1.0 - total
    return w


def canonicalize(atoms: Iterable, d: int | None = None, weight_tol: float = 1e-9) -> AtomMeasure:
    """Merge duplicate atoms, sort them and renormalize the weights.

    Atoms are duplicates when their ``s`` and ``m`` agree within a relative
    tolerance of ``MERGE_TOL``; the lexicographically smallest representative
    keeps its coordinates. Sphere points are snapped first, so atoms sharing an
    angle share bit-identical ``s`` coordinates. Zero-weight atoms are dropped.
    """
    triples = _as_triples(atoms)
    if not triples:
        raise BadWeights("empty atom list")
    dims = {len(t[0]) for t in triples} | {len(t[1]) for t in triples}
    if d is not None:
        dims.add(d)
    if len(dims) != 1:
        raise DimensionMismatch(f"mixed dimensions {sorted(dims)}")
    d = dims.pop()
    w = np.array([t[2] for t in triples])
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise BadWeights("weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > weight_tol:
        raise BadWeights(f"weights sum to {w.sum()!r}, not 1")
    s = np.array([t[0] for t in triples])
    m = np.array([t[1] for t in triples])
    if not np.all(np.isfinite(s)) or not np.all(np.isfinite(m)):
        raise BadWeights("atom coordinates must be finite")
    ns = np.linalg.norm(s, axis=1)
    if np.any(np.abs(ns - 1.0) > MERGE_TOL):
        raise DomainError("atom angles must be unit vectors")
    off = np.abs(ns - 1.0) > 4 * np.finfo(float).eps
    s[off] = s[off] / ns[off, None]
    keep = w > 0
    s, m, w = s[keep], m[keep], w[keep]

    order = _lexsort_rows(np.hstack([s, m]))
    s, m, w = s[order], m[order], w[order]

    reps_s = np.empty((0, d))
    for i in range(len(s)):
        j = match_row(reps_s, s[i])
        if j < 0:
            reps_s = np.vstack([reps_s, s[i]])
        else:
            s[i] = reps_s[j]

    keys = np.empty((0, 2 * d))
    ws: list[float] = []
    for i in range(len(s)):
        key = np.concatenate([s[i], m[i]])
        j = match_row(keys, key)
        if j < 0:
            keys = np.vstack([keys, key])
            ws.append(w[i])
        else:
            ws[j] += w[i]
    wv = _normalize(np.array(ws))
    order = _lexsort_rows(keys)
    keys, wv = keys[order], wv[order]
    return AtomMeasure(keys[:, :d], keys[:, d:], wv)


# --------------------------------------------------------------------------
# spectral measures on the sphere


class SpectralMeasure:
    """Probability law on ``S^{d-1}``; subclasses provide ``sample``."""

    d: int

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    @property
    def is_atomic(self) -> bool:
        return False


@dataclass(frozen=True, eq=False)
class AtomicSpectral(SpectralMeasure):
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, float))
        w = np.asarray(self.weights, float).ravel()
        if len(pts) != len(w):
            raise DimensionMismatch("points and weights differ in length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise BadWeights("spectral weights must be nonnegative and sum to 1")
        if np.any(np.abs(np.linalg.norm(pts, axis=1) - 1.0) > UNIT_TOL):
            raise DomainError("spectral atoms must be unit vectors")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def is_atomic(self) -> bool:
        return True

    def sample(self, size, rng):
        idx = rng.choice(len(self.weights), size=size, p=self.weights)
        return self.points[idx]

    def mass_at(self, u) -> float:
        j = match_row(self.points, np.asarray(u, float))
        return 0.0 if j < 0 else float(self.weights[j])


@dataclass(frozen=True)
class UniformSphere(SpectralMeasure):
    d: int

    def sample(self, size, rng):
        if self.d == 1:
            return rng.choice(np.array([-1.0, 1.0]), size=size)[:, None]
        z = rng.standard_normal((size, self.d))
        return z / np.linalg.norm(z, axis=1, keepdims=True)

    def density(self, u) -> np.ndarray:
        """Density with respect to surface measure."""
        from scipy.special import gamma

        area = 2 * np.pi ** (self.d / 2) / gamma(self.d / 2)
        u = np.atleast_2d(u)
        return np.full(len(u), 1.0 / area)


@dataclass(frozen=True, eq=False)
class SphereDensity(SpectralMeasure):
    """Law on the sphere with a density (w.r.t. surface measure) given by a callable.

    Sampling is by rejection from the uniform law; ``bound`` must dominate the
    density.
    """

    d: int
    density: Callable[[np.ndarray], np.ndarray]
    bound: float

    def sample(self, size, rng):
        uni = UniformSphere(self.d)
        out = np.empty((0, self.d))
        for _ in range(10_000):
            if len(out) >= size:
                return out[:size]
            k = max(64, 2 * (size - len(out)))
            prop = uni.sample(k, rng)
            acc = rng.random(k) * self.bound < self.density(prop)
            out = np.vstack([out, prop[acc]])
        raise DomainError("density bound too loose for rejection sampling")


def marginal_law(P: AtomMeasure) -> AtomicSpectral:
    pts, w = P.sphere_marginal()
    return AtomicSpectral(pts, w / w.sum())


def dirac(s: Sequence[float], m: Sequence[float]) -> AtomMeasure:
    return canonicalize([(s, m, 1.0)])
