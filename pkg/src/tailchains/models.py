"""Built-in models with closed-form tail objects.

``KestenOrthogonalSpec``
    ``X_t = R_t Q_t X_{t-1} + B_t`` with a positive radial factor ``R``
    (``E R^alpha = 1``), a random orthogonal ``Q`` and light-tailed ``B``. Its
    tail chain multiplies by ``R Q`` forward and by ``R* Q'`` backward, where
    ``R*`` has density ``f_R(1/y) y^{-(2 + alpha)}``.

``Ar1Spec``
    ``X_t = A X_{t-1} + B_t`` with symmetric Pareto(alpha) innovations whose
    angle follows ``lambda``. Its tail chain is ``M_{-N+t} = A^t Theta``
    (zero before ``-N``), ``N`` having weights ``c_n = int |A^n theta|^alpha
    lambda(d theta)``.

Radial laws and innovation laws come from small name registries so that models
can be described in JSON.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special, stats

from .diagnostics import normal_ci_halfwidth
from .errors import (
    DomainError,
    KernelMismatch,
    NoContraction,
    NotNormalized,
    RejectionStall,
    UnsupportedAngle,
)
from .markov_engine import AffineStep, ModelSpec
from .measures import (
    AtomicSpectral,
    SpectralMeasure,
    SphereDensity,
    UniformSphere,
    as_alpha,
    canonicalize,
    match_rows,
    pareto_radii,
)
from .tailchain import (
    AdjointSample,
    AtomicKernel,
    BftcSpec,
    FunctionKernel,
    MapKernel,
    TailChainPath,
    adjoint_resample,
)

GRID_POINTS = 2**14
NORM_TOL = 1e-6
TRUNCATION_TOL = 1e-17
MAX_POWER = 64
MAX_TERMS = 200_000
STALL_RATE = 1e-4


# --------------------------------------------------------------------------
# radial laws


class RadialLaw:
    """Law of a positive random variable ``R``."""

    name = "radial"
    is_point = False

    def pdf(self, y):
        raise NotImplementedError

    def sample(self, size: int, rng) -> np.ndarray:
        raise NotImplementedError

    def partial_moment(self, p: float, lower) -> np.ndarray:
        """``E[R^p 1{R >= lower}]``."""
        raise NotImplementedError

    def moment(self, p: float) -> float:
        return float(self.partial_moment(p, 0.0))

    def log_bracket(self, alpha: float) -> tuple[float, float]:
        """Interval of ``log R`` carrying essentially all mass of ``R`` and of
        its ``R^alpha``-tilt."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class LogNormal(RadialLaw):
    mu: float
    sigma: float
    name = "lognormal"

    def __post_init__(self):
        if self.sigma <= 0:
            raise DomainError("lognormal sigma must be positive")

    @classmethod
    def unit_moment(cls, sigma: float, alpha) -> "LogNormal":
        """The member with ``E R^alpha = 1``, i.e. ``mu = -alpha sigma^2 / 2``."""
        return cls(-as_alpha(alpha) * sigma**2 / 2, sigma)

    def pdf(self, y):
        return stats.lognorm.pdf(y, self.sigma, scale=math.exp(self.mu))

    def sample(self, size, rng):
        return np.exp(rng.normal(self.mu, self.sigma, size))

    def partial_moment(self, p, lower):
        lower = np.asarray(lower, float)
        with np.errstate(divide="ignore"):
            z = (self.mu + p * self.sigma**2 - np.log(lower)) / self.sigma
        return np.exp(p * self.mu + p**2 * self.sigma**2 / 2) * special.ndtr(z)

    def log_bracket(self, alpha):
        shift = alpha * self.sigma**2
        return self.mu - 10 * self.sigma - abs(shift), self.mu + 10 * self.sigma + abs(shift)

    def to_dict(self):
        return {"name": "lognormal", "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class LogUniform(RadialLaw):
    lo: float
    hi: float
    name = "loguniform"

    def __post_init__(self):
        if not 0 < self.lo < self.hi:
            raise DomainError("loguniform needs 0 < lo < hi")

    @classmethod
    def unit_moment(cls, lo: float, hi: float, alpha) -> "LogUniform":
        """``[lo, hi]`` rescaled so that ``E R^alpha = 1``."""
        c = cls(lo, hi).moment(as_alpha(alpha)) ** (-1.0 / alpha)
        return cls(c * lo, c * hi)

    def pdf(self, y):
        y = np.asarray(y, float)
        inside = (y >= self.lo) & (y <= self.hi)
        return np.where(inside, 1.0 / (np.where(inside, y, 1.0) * math.log(self.hi / self.lo)), 0.0)

    def sample(self, size, rng):
        return np.exp(rng.uniform(math.log(self.lo), math.log(self.hi), size))

    def partial_moment(self, p, lower):
        L = np.clip(np.asarray(lower, float), self.lo, self.hi)
        span = math.log(self.hi / self.lo)
        if p == 0:
            return np.log(self.hi / L) / span
        return (self.hi**p - L**p) / (p * span)

    def log_bracket(self, alpha):
        return math.log(self.lo), math.log(self.hi)

    def to_dict(self):
        return {"name": "loguniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class PointMass(RadialLaw):
    r: float = 1.0
    name = "point"
    is_point = True

    def sample(self, size, rng):
        return np.full(size, float(self.r))

    def partial_moment(self, p, lower):
        return np.where(np.asarray(lower, float) <= self.r, self.r**p, 0.0)

    def log_bracket(self, alpha):
        return math.log(self.r), math.log(self.r)

    def to_dict(self):
        return {"name": "point", "r": self.r}


def radial_from_dict(spec: dict, alpha) -> RadialLaw:
    name = spec["name"]
    if name == "lognormal":
        if "mu" in spec:
            return LogNormal(float(spec["mu"]), float(spec["sigma"]))
        return LogNormal.unit_moment(float(spec["sigma"]), alpha)
    if name in ("loguniform", "log-uniform"):
        if spec.get("normalize", False):
            return LogUniform.unit_moment(float(spec["lo"]), float(spec["hi"]), alpha)
        return LogUniform(float(spec["lo"]), float(spec["hi"]))
    if name == "point":
        return PointMass(float(spec.get("r", 1.0)))
    raise DomainError(f"unknown radial law {name!r}")


# --------------------------------------------------------------------------
# additive and innovation laws


@dataclass(frozen=True)
class AdditiveLaw:
    """Law of the additive term ``B``: ``zero``, ``normal`` or ``pareto-symmetric``.

    ``pareto-symmetric`` is ``scale * Z * Theta`` with ``P(Z > z) = z^{-alpha}``
    for ``z >= 1`` and ``Theta`` drawn from ``spectral``.
    """

    name: str = "zero"
    scale: float = 1.0
    alpha: float | None = None
    spectral: SpectralMeasure | None = None

    def sample(self, size: int, d: int, rng) -> np.ndarray:
        if self.name == "zero":
            return np.zeros((size, d))
        if self.name == "normal":
            return self.scale * rng.standard_normal((size, d))
        if self.name == "pareto-symmetric":
            theta = (self.spectral or UniformSphere(d)).sample(size, rng).reshape(size, d)
            return self.scale * pareto_radii(self.alpha, size, rng)[:, None] * theta
        raise DomainError(f"unknown additive law {self.name!r}")

    def to_dict(self) -> dict:
        out = {"name": self.name}
        if self.name != "zero":
            out["scale"] = self.scale
        return out


def _spectral_from_json(spec, d: int) -> SpectralMeasure:
    if spec is None or spec == "uniform":
        return UniformSphere(d)
    return AtomicSpectral(np.asarray(spec["points"], float).reshape(-1, d), np.asarray(spec["weights"], float))


def _spectral_to_json(lam: SpectralMeasure):
    if isinstance(lam, AtomicSpectral):
        return {"points": lam.points.tolist(), "weights": lam.weights.tolist()}
    if isinstance(lam, UniformSphere):
        return "uniform"
    raise DomainError("only uniform or atomic spectral laws serialize")


# --------------------------------------------------------------------------
# Kesten recurrence with orthogonal rotations


def haar_orthogonal(size: int, d: int, rng) -> np.ndarray:
    """Haar-distributed orthogonal matrices, shape ``(size, d, d)``.

    QR of Gaussian matrices with the signs of ``diag(R)`` folded into ``Q``.
    """
    if d == 1:
        return rng.choice(np.array([-1.0, 1.0]), size=size).reshape(size, 1, 1)
    z = rng.standard_normal((size, d, d))
    q, r = np.linalg.qr(z)
    sign = np.sign(np.diagonal(r, axis1=1, axis2=2))
    sign[sign == 0] = 1.0
    return q * sign[:, None, :]


@dataclass(frozen=True, eq=False)
class KestenOrthogonalSpec:
    d: int
    alpha: float
    radial: RadialLaw
    rotation: str = "haar"  # or "identity"
    additive: AdditiveLaw = field(default_factory=AdditiveLaw)
    burn_in: int = 10_000
    strict: bool = True

    def __post_init__(self):
        object.__setattr__(self, "alpha", as_alpha(self.alpha))
        if self.rotation not in ("haar", "identity"):
            raise DomainError(f"unknown rotation law {self.rotation!r}")
        if self.strict:
            try:
                mom = self.radial.moment(self.alpha)
            except NotImplementedError:
                mom = None
            if mom is not None and abs(mom - 1.0) > NORM_TOL:
                raise NotNormalized(f"E[R^alpha] = {mom:.8g}, expected 1")

    name = "kesten"

    def rotations(self, size: int, rng) -> np.ndarray:
        if self.rotation == "identity":
            return np.broadcast_to(np.eye(self.d), (size, self.d, self.d)).copy()
        return haar_orthogonal(size, self.d, rng)

    def check_moment(self, n: int = 100_000, stream=None) -> tuple[float, float, bool]:
        """Monte Carlo ``E R^alpha`` with 0.99 half-width and whether 1 is covered."""
        rng = np.random.default_rng(stream) if not isinstance(stream, np.random.Generator) else stream
        v = self.radial.sample(n, rng) ** self.alpha
        est, ci = float(v.mean()), normal_ci_halfwidth(v)
        return est, ci, abs(est - 1.0) <= ci

    def check_orthogonality(self, n: int = 1000, stream=None, tol: float = 1e-10) -> float:
        rng = np.random.default_rng(stream) if not isinstance(stream, np.random.Generator) else stream
        Q = self.rotations(n, rng)
        err = float(np.max(np.abs(np.einsum("nki,nkj->nij", Q, Q) - np.eye(self.d))))
        if err > tol:
            raise DomainError(f"rotation draws deviate from orthogonality by {err:.3g}")
        return err

    def noise(self, size: int, rng):
        R = self.radial.sample(size, rng)
        Q = self.rotations(size, rng)
        B = self.additive.sample(size, self.d, rng)
        return R, Q, B

    def transition(self, X, e):
        R, Q, B = e
        return R[:, None] * np.einsum("nij,nj->ni", Q, X) + B

    def tail_map(self, S, e):
        R, Q = e[0], e[1]
        return R[:, None] * np.einsum("nij,nj->ni", Q, S)

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            d=self.d,
            transition=self.transition,
            noise=self.noise,
            tail_map=self.tail_map,
            alpha=self.alpha,
            burn_in=self.burn_in,
            name="kesten",
            affine=AffineStep(lambda e: (e[0][:, None, None] * e[1], e[2])),
        )

    def forward_kernel(self) -> MapKernel:
        return MapKernel(self.tail_map, lambda n, rng: (self.radial.sample(n, rng), self.rotations(n, rng)), self.d)

    def backward_kernel(self) -> FunctionKernel:
        back = kesten_backward_increment(self)

        def draw(S, rng):
            A = back.sample_matrices(len(S), rng)
            return np.einsum("nij,nj->ni", A, S)

        return FunctionKernel(draw, self.d)

    def bftc_spec(self) -> BftcSpec:
        return BftcSpec(self.alpha, UniformSphere(self.d), self.forward_kernel(), self.backward_kernel())

    def to_dict(self) -> dict:
        return {
            "type": "kesten",
            "d": self.d,
            "alpha": self.alpha,
            "radial": self.radial.to_dict(),
            "rotation": self.rotation,
            "additive": self.additive.to_dict(),
            "burn_in": self.burn_in,
        }


class BackwardRadial:
    """Law of ``R*`` with density ``f_R(1/y) y^{-(2 + alpha)}``.

    Sampling inverts a cumulative trapezoid CDF on a log-spaced grid of
    :data:`GRID_POINTS` points. The density's integral is checked by adaptive
    quadrature at construction.
    """

    def __init__(self, radial: RadialLaw, alpha, grid_points: int = GRID_POINTS):
        self.radial = radial
        self.alpha = as_alpha(alpha)
        if radial.is_point:
            if abs(radial.r**self.alpha - 1.0) > NORM_TOL:
                raise NotNormalized(f"point mass at {radial.r} has E[R^alpha] != 1")
            self.point = 1.0 / radial.r
            self.integral = 1.0
            return
        self.point = None
        a, b = radial.log_bracket(self.alpha)
        self.log_lo, self.log_hi = -b, -a  # bracket of log R*
        self.integral = integrate.quad(
            lambda u: float(self.pdf(math.exp(u))) * math.exp(u), self.log_lo, self.log_hi, limit=500,
            epsabs=1e-12, epsrel=1e-12,
        )[0]
        if abs(self.integral - 1.0) > NORM_TOL:
            raise NotNormalized(f"density of R* integrates to {self.integral:.10g}")
        self.grid = np.linspace(self.log_lo, self.log_hi, grid_points)
        g = self.pdf(np.exp(self.grid)) * np.exp(self.grid)
        cdf = np.concatenate([[0.0], np.cumsum((g[1:] + g[:-1]) / 2 * np.diff(self.grid))])
        self.grid_cdf = cdf / cdf[-1]

    def pdf(self, y):
        y = np.asarray(y, float)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = self.radial.pdf(1.0 / y) * y ** (-(2.0 + self.alpha))
        return np.where(y > 0, np.nan_to_num(out, nan=0.0, posinf=0.0), 0.0)

    def cdf(self, y):
        """``P(R* <= y) = E[R^alpha 1{R >= 1/y}]``, from the radial law's partial moments."""
        y = np.asarray(y, float)
        if self.point is not None:
            return np.where(y >= self.point, 1.0, 0.0)
        with np.errstate(divide="ignore"):
            return self.radial.partial_moment(self.alpha, 1.0 / y)

    def sample(self, size: int, rng) -> np.ndarray:
        if self.point is not None:
            return np.full(size, self.point)
        u = rng.random(size)
        return np.exp(np.interp(u, self.grid_cdf, self.grid))


@dataclass(frozen=True, eq=False)
class KestenBackward:
    """Backward increment ``R* Q*`` of a Kesten spec, with ``Q* = Q'``."""

    spec: KestenOrthogonalSpec
    radial: BackwardRadial

    @property
    def density(self) -> Callable:
        return self.radial.pdf

    def sample(self, size: int, rng) -> tuple[np.ndarray, np.ndarray]:
        r = self.radial.sample(size, rng)
        q = np.swapaxes(self.spec.rotations(size, rng), 1, 2)
        return r, q

    def sample_matrices(self, size: int, rng) -> np.ndarray:
        r, q = self.sample(size, rng)
        return r[:, None, None] * q

    def __iter__(self):  # unpacks as (density, sampler)
        return iter((self.density, self.sample))


def kesten_backward_increment(spec: KestenOrthogonalSpec, grid_points: int = GRID_POINTS) -> KestenBackward:
    return KestenBackward(spec, BackwardRadial(spec.radial, spec.alpha, grid_points))


@dataclass(frozen=True)
class FixedPointGap:
    gap: float
    ci: float
    per_function: dict

    @property
    def flagged(self) -> bool:
        return self.gap > self.ci

    def __float__(self):
        return self.gap


def _sphere_battery(d: int) -> dict[str, Callable]:
    fs = {
        "one": lambda c: np.ones(len(c)),
        "x1": lambda c: c[:, 0],
        "x1^2": lambda c: c[:, 0] ** 2,
        "x1^3": lambda c: c[:, 0] ** 3,
    }
    if d >= 2:
        fs["x1*x2"] = lambda c: c[:, 0] * c[:, 1]
        fs["x1^2-x2^2"] = lambda c: c[:, 0] ** 2 - c[:, 1] ** 2
    return fs


def kesten_spectral_fixedpoint_gap(spec: KestenOrthogonalSpec, n: int, stream=None) -> FixedPointGap:
    """Largest discrepancy between ``E f(AC/|AC|) |AC|^alpha`` and ``E f(C)``.

    ``C`` is uniform on the sphere; both sides are estimated from independent
    draws of size ``n`` for each function of a fixed polynomial battery. The
    reported half-width (level 0.99) belongs to the worst function.
    """
    if n < 1000:
        raise ValueError("n must be >= 1000")
    rng = np.random.default_rng(stream) if not isinstance(stream, np.random.Generator) else stream
    uni = UniformSphere(spec.d)
    C = uni.sample(n, rng).reshape(n, spec.d)
    R = spec.radial.sample(n, rng)
    Q = spec.rotations(n, rng)
    AC = R[:, None] * np.einsum("nij,nj->ni", Q, C)
    r = np.linalg.norm(AC, axis=1)
    U = AC / r[:, None]
    C2 = uni.sample(n, rng).reshape(n, spec.d)
    z = stats.norm.ppf(0.995)
    per = {}
    for name, f in _sphere_battery(spec.d).items():
        lhs = f(U) * r**spec.alpha
        rhs = f(C2)
        ci = float(z * math.sqrt(lhs.var(ddof=1) / n + rhs.var(ddof=1) / n))
        per[name] = (float(abs(lhs.mean() - rhs.mean())), ci)
    worst = max(per, key=lambda k: per[k][0] - per[k][1])
    return FixedPointGap(per[worst][0], per[worst][1], per)


def kesten_adjoint_reweighted(spec: KestenOrthogonalSpec, c_sampler: Callable, n: int, stream=None) -> AdjointSample:
    """Adjoint law ``E[1(AC/|AC|, C/|AC|) |AC|^alpha]`` for an arbitrary angle law.

    ``c_sampler(size, rng)`` draws ``C``; draws are reweighted, so no product
    structure is assumed.
    """
    rng = np.random.default_rng(stream) if not isinstance(stream, np.random.Generator) else stream
    C = np.asarray(c_sampler(n, rng), float).reshape(n, spec.d)
    R, Q = spec.radial.sample(n, rng), spec.rotations(n, rng)
    AC = R[:, None] * np.einsum("nij,nj->ni", Q, C)
    return adjoint_resample(C, AC, spec.alpha, n, rng)


# --------------------------------------------------------------------------
# AR(1) with heavy-tailed innovations


def contraction_power(A: np.ndarray, max_power: int = MAX_POWER) -> tuple[int, float]:
    """Smallest ``m <= max_power`` with ``sup_{|x|=1} |A^m x| < 1`` and that supremum.

    The supremum over the sphere is the spectral norm, so no grid is needed.
    """
    P = np.eye(len(A))
    for m in range(1, max_power + 1):
        P = A @ P
        rho = float(np.linalg.norm(P, 2))
        if rho < 1.0:
            return m, rho
    raise NoContraction(f"no power A^m with m <= {max_power} is a contraction")


def _atomic_view(lam: SpectralMeasure) -> SpectralMeasure:
    if isinstance(lam, UniformSphere) and lam.d == 1:
        return AtomicSpectral(np.array([[-1.0], [1.0]]), np.array([0.5, 0.5]))
    return lam


def _sphere_rule(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes on ``S^{d-1}`` and surface-measure weights."""
    if d == 2:
        k = 4096
        phi = 2 * np.pi * np.arange(k) / k
        return np.column_stack([np.cos(phi), np.sin(phi)]), np.full(k, 2 * np.pi / k)
    if d == 3:
        x, wx = np.polynomial.legendre.leggauss(256)
        k = 512
        phi = 2 * np.pi * np.arange(k) / k
        ct, ph = np.meshgrid(x, phi, indexing="ij")
        st = np.sqrt(1 - ct**2)
        nodes = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=-1).reshape(-1, 3)
        w = np.outer(wx, np.full(k, 2 * np.pi / k)).ravel()
        return nodes, w
    # quasi-Monte Carlo in higher dimension
    sob = stats.qmc.Sobol(d, scramble=True, seed=0).random(2**16)
    z = stats.norm.ppf(np.clip(sob, 1e-12, 1 - 1e-12))
    nodes = z / np.linalg.norm(z, axis=1, keepdims=True)
    area = 2 * np.pi ** (d / 2) / special.gamma(d / 2)
    return nodes, np.full(len(nodes), area / len(nodes))


def _density_of(lam: SpectralMeasure) -> Callable:
    if isinstance(lam, (UniformSphere, SphereDensity)):
        return lam.density
    raise DomainError("continuous innovation angle laws need a density")


@dataclass(frozen=True, eq=False)
class Ar1Spec:
    A: np.ndarray
    alpha: float
    innovation: SpectralMeasure
    scale: float = 1.0
    burn_in: int = 1000
    contraction: tuple[int, float] = field(init=False)

    name = "ar1"

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, float))
        if A.shape[0] != A.shape[1]:
            raise DomainError("A must be square")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "alpha", as_alpha(self.alpha))
        object.__setattr__(self, "innovation", _atomic_view(self.innovation))
        if self.innovation.d != A.shape[0]:
            raise DomainError("innovation law and A differ in dimension")
        object.__setattr__(self, "contraction", contraction_power(A))

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def atomic(self) -> bool:
        return self.innovation.is_atomic

    def noise(self, size, rng):
        law = AdditiveLaw("pareto-symmetric", self.scale, self.alpha, self.innovation)
        return (law.sample(size, self.d, rng),)

    def transition(self, X, e):
        return X @ self.A.T + e[0]

    def tail_map(self, S, e=None):
        return np.asarray(S, float) @ self.A.T

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            d=self.d,
            transition=self.transition,
            noise=self.noise,
            tail_map=self.tail_map,
            alpha=self.alpha,
            burn_in=self.burn_in,
            name="ar1",
            affine=AffineStep(lambda e: (self.A[None], e[0])),
        )

    def bftc_spec(self, decomposition: "Ar1TailDecomposition | None" = None) -> BftcSpec:
        return ar1_bftc_spec(self, decomposition)

    def to_dict(self) -> dict:
        return {
            "type": "ar1",
            "d": self.d,
            "alpha": self.alpha,
            "A": self.A.tolist(),
            "innovation": {"name": "pareto-symmetric", "scale": self.scale,
                           "spectral": _spectral_to_json(self.innovation)},
            "burn_in": self.burn_in,
        }


@dataclass(frozen=True, eq=False)
class Ar1TailDecomposition:
    c: np.ndarray
    p: np.ndarray
    n_max: int
    remainder: float  # bound on the relative mass dropped by truncation
    total: float  # sum of the retained c_n


def _powers(A: np.ndarray, n: int) -> np.ndarray:
    out = np.empty((n + 1, len(A), len(A)))
    out[0] = np.eye(len(A))
    for k in range(1, n + 1):
        out[k] = A @ out[k - 1]
    return out


def ar1_tail_decomposition(spec: Ar1Spec, tol: float = TRUNCATION_TOL) -> Ar1TailDecomposition:
    """Weights ``c_n`` and ``p_n = c_n / sum_k c_k`` of the AR(1) tail chain.

    Terms are added until the geometric tail bound drops below ``tol`` times
    the running sum.
    """
    m, rho = contraction_power(spec.A)
    lam = spec.innovation
    if lam.is_atomic:
        nodes, wts = lam.points, lam.weights
    else:
        nodes, wts = _sphere_rule(spec.d)
        wts = wts * _density_of(lam)(nodes)
    damp = 1.0 - rho**spec.alpha
    c: list[float] = []
    v = nodes.copy()
    n_max = None
    while n_max is None:
        if len(c) > MAX_TERMS:
            raise NoContraction("tail weights did not decay within the term budget")
        c.append(math.fsum(wts * np.linalg.norm(v, axis=1) ** spec.alpha))
        v = v @ spec.A.T
        N = len(c) - 1 - m  # the last m terms bound the remainder after N
        if N >= 0:
            bound = math.fsum(c[N + 1 :]) / damp
            if bound <= tol * math.fsum(c[: N + 1]):
                n_max = N
    c_arr = np.array(c[: n_max + 1])
    total = math.fsum(c_arr)
    return Ar1TailDecomposition(c_arr, c_arr / total, n_max, bound / total, total)


@dataclass(frozen=True, eq=False)
class Ar1SpectralSample:
    """Draws of ``(N, Theta)``; ``M_0 = A^N Theta`` is a unit vector."""

    N: np.ndarray
    theta: np.ndarray
    A: np.ndarray

    def __len__(self):
        return len(self.N)

    def value_at(self, k: int) -> np.ndarray:
        """``M_k = A^{N + k} Theta`` (zero where ``N + k < 0``)."""
        e = self.N + k
        out = np.zeros_like(self.theta)
        ok = e >= 0
        if ok.any():
            P = _powers(self.A, int(e[ok].max()))
            out[ok] = np.einsum("nij,nj->ni", P[e[ok]], self.theta[ok])
        return out

    def m0(self) -> np.ndarray:
        return self.value_at(0)

    def path(self, s: int, t: int) -> TailChainPath:
        return TailChainPath(s, t, np.stack([self.value_at(k) for k in range(-s, t + 1)], axis=1))


def ar1_spectral_sampler(spec: Ar1Spec, decomposition: Ar1TailDecomposition, stream=None,
                         size: int = 1) -> Ar1SpectralSample:
    """Draw ``N`` with probabilities ``p_n`` and then ``Theta`` given ``N = n``.

    Given ``N = n``, ``Theta = s / |A^n s|`` where ``s`` follows ``lambda``
    reweighted by ``|A^n s|^alpha`` (exact for atomic ``lambda``, rejection
    otherwise).
    """
    rng = np.random.default_rng(stream) if not isinstance(stream, np.random.Generator) else stream
    p = decomposition.p
    N = rng.choice(len(p), size=size, p=p)
    theta = np.empty((size, spec.d))
    lam = spec.innovation
    P = _powers(spec.A, int(N.max()))
    for n in np.unique(N):
        sel = np.flatnonzero(N == n)
        An = P[n]
        if lam.is_atomic:
            r = np.linalg.norm(lam.points @ An.T, axis=1)
            w = lam.weights * r**spec.alpha
            j = rng.choice(len(w), size=len(sel), p=w / w.sum())
            theta[sel] = lam.points[j] / r[j, None]
        else:
            top = np.linalg.norm(An, 2) ** spec.alpha
            got = np.empty((0, spec.d))
            tried = 0
            while len(got) < len(sel):
                k = max(256, 2 * (len(sel) - len(got)))
                s = lam.sample(k, rng).reshape(k, spec.d)
                r = np.linalg.norm(s @ An.T, axis=1)
                acc = rng.random(k) * top < r**spec.alpha
                got = np.vstack([got, s[acc] / r[acc, None]])
                tried += k
                if tried >= 10_000 and len(got) / tried < STALL_RATE:
                    raise RejectionStall(f"acceptance rate {len(got) / tried:.2g} at N = {n}")
            theta[sel] = got[: len(sel)]
    return Ar1SpectralSample(N, theta, spec.A)


def _atomic_upsilon_terms(spec: Ar1Spec, decomposition: Ar1TailDecomposition):
    """Atoms ``(n, j)`` of the spectral law: direction, pre-image and mass."""
    lam = spec.innovation
    P = _powers(spec.A, decomposition.n_max)
    rows = []
    for n in range(decomposition.n_max + 1):
        v = lam.points @ P[n].T
        r = np.linalg.norm(v, axis=1)
        for j in np.flatnonzero(r > 0):
            prev = lam.points[j] @ P[n - 1].T / r[j] if n > 0 else None
            rows.append((n, v[j] / r[j], prev, lam.weights[j] * r[j] ** spec.alpha))
    return rows


def ar1_upsilon(spec: Ar1Spec, decomposition: Ar1TailDecomposition) -> SpectralMeasure:
    """Spectral law ``sum_n p_n lambda_n`` of the stationary AR(1)."""
    if spec.atomic:
        rows = _atomic_upsilon_terms(spec, decomposition)
        atoms = [(u, u, w / decomposition.total) for _, u, _, w in rows]
        merged = canonicalize(atoms, d=spec.d)
        return AtomicSpectral(merged.s, merged.w)
    return Ar1Upsilon(spec, decomposition)


@dataclass(frozen=True, eq=False)
class Ar1Upsilon(SpectralMeasure):
    """Spectral law of an AR(1) with a continuous innovation angle law.

    Sampling goes through ``A^N Theta``; the density needs ``A`` invertible.
    """

    spec: Ar1Spec
    decomposition: Ar1TailDecomposition

    @property
    def d(self) -> int:
        return self.spec.d

    def sample(self, size, rng):
        return ar1_spectral_sampler(self.spec, self.decomposition, rng, size).m0()

    def scaled_density(self, u) -> np.ndarray:
        """``sum_k c_k`` times the density at each row of ``u``."""
        A = self.spec.A
        det = abs(np.linalg.det(A))
        if det == 0:
            raise UnsupportedAngle("density of the spectral law needs an invertible A")
        Ainv = np.linalg.inv(A)
        f = _density_of(self.spec.innovation)
        u = np.atleast_2d(np.asarray(u, float))
        total = np.zeros(len(u))
        v = u.copy()
        for n in range(self.decomposition.n_max + 1):
            r = np.linalg.norm(v, axis=1)  # |A^{-n} u|
            total += f(v / r[:, None]) * r ** (-(self.spec.alpha + self.d)) / det**n
            v = v @ Ainv.T
        return total

    def density(self, u) -> np.ndarray:
        return self.scaled_density(u) / self.decomposition.total


def ar1_backward_zero_prob(spec: Ar1Spec, decomposition: Ar1TailDecomposition, s) -> float:
    """``P(M_{-1} = 0 | M_0 = s) = f_lambda(s) / (sum_k c_k f_Upsilon(s))``.

    Atomic ``lambda`` uses probability masses in place of densities.
    """
    u = np.asarray(s, float).reshape(1, spec.d)
    lam = spec.innovation
    if spec.atomic:
        rows = _atomic_upsilon_terms(spec, decomposition)
        dirs = np.array([r[1] for r in rows])
        hit = match_rows(dirs, u) == 0
        mass = math.fsum(r[3] for r, h in zip(rows, hit) if h)
        if mass == 0:
            raise UnsupportedAngle(f"angle {u[0].tolist()} carries no spectral mass")
        return lam.mass_at(u[0]) / mass
    ups = Ar1Upsilon(spec, decomposition)
    scaled = float(ups.scaled_density(u)[0])
    if scaled <= 0:
        raise UnsupportedAngle(f"spectral density vanishes at {u[0].tolist()}")
    return float(_density_of(lam)(u)[0]) / scaled


def _atomic_ar1_laws(spec: Ar1Spec, decomposition: Ar1TailDecomposition):
    rows = _atomic_upsilon_terms(spec, decomposition)
    ups = canonicalize([(u, u, w / decomposition.total) for _, u, _, w in rows], d=spec.d)
    fwd = canonicalize([(u, u @ spec.A.T, w) for u, w in zip(ups.s, ups.w)], d=spec.d)
    back = [(u, np.zeros(spec.d) if n == 0 else prev, w / decomposition.total) for n, u, prev, w in rows]
    return AtomicSpectral(ups.s, ups.w), fwd, canonicalize(back, d=spec.d)


def ar1_bftc_spec(spec: Ar1Spec, decomposition: Ar1TailDecomposition | None = None) -> BftcSpec:
    """BFTC of the AR(1) model: ``s -> A s`` forward; backward to 0 with the
    extinction probability and otherwise to the preimage under ``A``.

    With atomic ``lambda`` whose spectral law has finitely many atoms the result
    is atomic and checked exactly; otherwise kernels are analytic.
    """
    dec = decomposition or ar1_tail_decomposition(spec)
    fwd_map = MapKernel(lambda S, e: S @ spec.A.T, lambda n, rng: (np.zeros(n),), spec.d)
    if spec.atomic:
        m0, fwd, back = _atomic_ar1_laws(spec, dec)
        try:
            return BftcSpec(spec.alpha, m0, AtomicKernel(fwd), AtomicKernel(back))
        except KernelMismatch:
            # infinitely many directions: truncation leaves the support open
            table = AtomicKernel(back)
            return BftcSpec(spec.alpha, m0, fwd_map, FunctionKernel(table.sample, spec.d))
    if abs(np.linalg.det(spec.A)) == 0:
        raise UnsupportedAngle("backward kernel with a continuous innovation law needs an invertible A")
    ups = Ar1Upsilon(spec, dec)
    Ainv = np.linalg.inv(spec.A)
    f = _density_of(spec.innovation)

    def backward(S, rng):
        q = f(S) / ups.scaled_density(S)
        alive = rng.random(len(S)) >= q
        return np.where(alive[:, None], S @ Ainv.T, 0.0)

    return BftcSpec(spec.alpha, ups, fwd_map, FunctionKernel(backward, spec.d))


# --------------------------------------------------------------------------
# JSON model descriptions


def model_from_dict(cfg: dict):
    kind = cfg.get("type")
    d = int(cfg["d"])
    alpha = as_alpha(cfg["alpha"])
    if kind == "ar1":
        A = np.asarray(cfg["A"], float).reshape(d, d)
        inn = cfg.get("innovation", {})
        name = inn.get("name", "pareto-symmetric")
        if name != "pareto-symmetric":
            raise DomainError(f"AR(1) innovations must be pareto-symmetric, got {name!r}")
        return Ar1Spec(A, alpha, _spectral_from_json(inn.get("spectral"), d), float(inn.get("scale", 1.0)),
                       int(cfg.get("burn_in", 1000)))
    if kind == "kesten":
        add = cfg.get("additive", {"name": "zero"})
        additive = AdditiveLaw(add["name"], float(add.get("scale", 1.0)))
        return KestenOrthogonalSpec(d, alpha, radial_from_dict(cfg["radial"], alpha), cfg.get("rotation", "haar"),
                                    additive, int(cfg.get("burn_in", 10_000)))
    raise DomainError(f"unknown model type {kind!r}")
