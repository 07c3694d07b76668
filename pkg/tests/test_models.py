import math

import numpy as np
import pytest
from scipy import integrate, stats

from tailchains.errors import DomainError, NoContraction, NotNormalized, RejectionStall, UnsupportedAngle
from tailchains.measures import AtomicSpectral, UniformSphere
from tailchains.models import (
    AdditiveLaw,
    Ar1Spec,
    BackwardRadial,
    KestenOrthogonalSpec,
    LogNormal,
    LogUniform,
    PointMass,
    ar1_backward_zero_prob,
    ar1_spectral_sampler,
    ar1_tail_decomposition,
    ar1_upsilon,
    contraction_power,
    haar_orthogonal,
    kesten_backward_increment,
    kesten_spectral_fixedpoint_gap,
    model_from_dict,
)

PM = UniformSphere(1)


def ar1(a, alpha=1.0, lam=PM):
    return Ar1Spec(a, alpha, lam)


# -- AR(1) decomposition ---------------------------------------------------


def test_decomposition_half_alpha_one():
    dec = ar1_tail_decomposition(ar1(0.5))
    n = np.arange(len(dec.p))
    assert np.array_equal(dec.c, 2.0**-n)
    assert np.array_equal(dec.p, 2.0 ** -(n + 1.0)) or np.max(np.abs(dec.p - 2.0 ** -(n + 1.0))) <= 1e-16
    assert dec.remainder < 1e-10
    assert dec.p.sum() == pytest.approx(1.0, abs=1e-15)


def test_decomposition_alpha_two():
    dec = ar1_tail_decomposition(ar1(0.5, 2.0))
    assert dec.c[:3] == pytest.approx([1, 0.25, 1 / 16])
    assert dec.p[0] == pytest.approx(0.75, abs=1e-15)


def test_decomposition_zero_matrix():
    dec = ar1_tail_decomposition(ar1(0.0))
    assert dec.p[0] == 1.0 and np.all(dec.p[1:] == 0)


def test_no_contraction():
    with pytest.raises(NoContraction):
        ar1(1.0)
    # nilpotent-like shear with norm > 1 but A^2 = 0
    m, rho = contraction_power(np.array([[0.0, 5.0], [0.0, 0.0]]))
    assert m == 2 and rho == 0.0


def test_decomposition_invariants_2d(rng):
    A = np.array([[0.3, 0.4], [-0.2, 0.5]])
    dec = ar1_tail_decomposition(Ar1Spec(A, 1.5, UniformSphere(2)))
    assert np.all(dec.p >= 0)
    assert dec.p.sum() == pytest.approx(1.0, abs=1e-12)
    assert dec.remainder < 1e-10


# -- AR(1) spectral sampler -----------------------------------------------


def test_sampler_examples(rng):
    spec = ar1(0.5)
    smp = ar1_spectral_sampler(spec, ar1_tail_decomposition(spec), rng, 20_000)
    one = smp.N == 1
    assert set(np.abs(smp.theta[one, 0]).tolist()) == {2.0}
    assert 0.45 < np.mean(smp.theta[one, 0] > 0) < 0.55
    zero = smp.N == 0
    assert set(np.abs(smp.theta[zero, 0]).tolist()) == {1.0}
    path = smp.path(2, 2).values
    k = np.flatnonzero(one)[0]
    assert path[k, :, 0].tolist() == pytest.approx([0, smp.theta[k, 0], smp.theta[k, 0] / 2, smp.theta[k, 0] / 4,
                                                    smp.theta[k, 0] / 8])
    assert np.allclose(np.abs(smp.m0()), 1.0, atol=1e-10)


def test_sampler_zero_matrix(rng):
    spec = ar1(0.0)
    smp = ar1_spectral_sampler(spec, ar1_tail_decomposition(spec), rng, 1000)
    assert np.all(smp.N == 0)
    assert np.all(smp.value_at(1) == 0) and np.all(smp.value_at(3) == 0)


def test_sampler_unit_m0_2d(rng):
    A = np.array([[0.3, 0.4], [-0.2, 0.5]])
    spec = Ar1Spec(A, 1.0, UniformSphere(2))
    smp = ar1_spectral_sampler(spec, ar1_tail_decomposition(spec), rng, 5000)
    assert np.max(np.abs(np.linalg.norm(smp.m0(), axis=1) - 1)) <= 1e-10


def test_sampler_stalls(rng):
    class NearAxis(UniformSphere):
        # angles within 1e-9 of the axis that A nearly annihilates
        def sample(self, size, rng):
            u = np.column_stack([np.full(size, 1e-9), np.ones(size)])
            return u / np.linalg.norm(u, axis=1, keepdims=True)

    spec = Ar1Spec(np.diag([0.5, 1e-9]), 1.0, NearAxis(2))
    dec = ar1_tail_decomposition(Ar1Spec(np.diag([0.5, 1e-9]), 1.0, UniformSphere(2)))
    forced = type(dec)(np.array([0.0, 1.0]), np.array([0.0, 1.0]), 1, 0.0, 1.0)
    with pytest.raises(RejectionStall):
        ar1_spectral_sampler(spec, forced, rng, 10)


def test_spectral_marginal_matches_upsilon(rng):
    spec = ar1(0.5)
    dec = ar1_tail_decomposition(spec)
    ups = ar1_upsilon(spec, dec)
    m0 = ar1_spectral_sampler(spec, dec, rng, 50_000).m0()[:, 0]
    assert ups.weights.sum() == pytest.approx(1.0)
    assert abs(np.mean(m0 > 0) - ups.mass_at(np.array([1.0]))) < 0.01


def test_upsilon_density_integrates_to_one():
    A = np.array([[0.5, 0.2], [0.0, 0.4]])
    spec = Ar1Spec(A, 1.0, UniformSphere(2))
    ups = ar1_upsilon(spec, ar1_tail_decomposition(spec))
    total, _ = integrate.quad(lambda p: ups.density(np.array([[math.cos(p), math.sin(p)]]))[0], 0, 2 * np.pi,
                              limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)


# -- extinction probability ------------------------------------------------


@pytest.mark.parametrize("a,alpha,expected", [(0.5, 1.0, 0.5), (0.5, 2.0, 0.75), (0.0, 1.0, 1.0)])
def test_backward_zero_prob(a, alpha, expected):
    spec = ar1(a, alpha)
    for s in (1.0, -1.0):
        assert ar1_backward_zero_prob(spec, ar1_tail_decomposition(spec), [s]) == pytest.approx(expected, abs=1e-14)


def test_backward_zero_prob_near_unit_root():
    spec = ar1(0.99)
    q = ar1_backward_zero_prob(spec, ar1_tail_decomposition(spec), [1.0])
    assert q == pytest.approx(0.01, rel=1e-9)


def test_backward_zero_prob_unsupported():
    lam = AtomicSpectral(np.array([[1.0]]), np.array([1.0]))
    spec = ar1(0.5, lam=lam)
    with pytest.raises(UnsupportedAngle):
        ar1_backward_zero_prob(spec, ar1_tail_decomposition(spec), [-1.0])


def test_backward_zero_prob_density_case():
    spec = Ar1Spec(0.5 * np.eye(2), 1.0, UniformSphere(2))
    q = ar1_backward_zero_prob(spec, ar1_tail_decomposition(spec), [0.6, 0.8])
    assert q == pytest.approx(0.5, abs=1e-9)


# -- Kesten ---------------------------------------------------------------


def test_haar_orthogonal(rng):
    Q = haar_orthogonal(500, 3, rng)
    assert np.max(np.abs(np.einsum("nki,nkj->nij", Q, Q) - np.eye(3))) < 1e-12
    # uniform first column: mean near zero
    assert np.all(np.abs(Q[:, :, 0].mean(axis=0)) < 0.2)


def test_kesten_invariants(rng):
    spec = KestenOrthogonalSpec(2, 1.0, LogNormal.unit_moment(0.5, 1.0))
    est, ci, ok = spec.check_moment(100_000, rng)
    assert ok
    assert spec.check_orthogonality(1000, rng) < 1e-10
    with pytest.raises(NotNormalized):
        KestenOrthogonalSpec(2, 1.0, PointMass(1.2))
    with pytest.raises(DomainError):
        KestenOrthogonalSpec(2, 1.0, PointMass(), rotation="reflection")


def test_rstar_point_mass(rng):
    back = kesten_backward_increment(KestenOrthogonalSpec(2, 1.0, PointMass()))
    r, q = back.sample(100, rng)
    assert np.all(r == 1.0)
    assert np.allclose(np.einsum("nki,nkj->nij", q, q), np.eye(2))


def test_rstar_lognormal_self_adjoint(rng):
    law = LogNormal.unit_moment(0.5, 1.0)
    back = BackwardRadial(law, 1.0)
    y = np.geomspace(0.1, 10, 50)
    assert np.allclose(back.pdf(y), law.pdf(y), rtol=1e-10)
    x = back.sample(100_000, rng)
    assert stats.kstest(x, back.cdf).pvalue > 0.01


def test_rstar_loguniform_integral():
    law = LogUniform.unit_moment(0.5, 2.0, 1.0)
    back = BackwardRadial(law, 1.0)
    assert abs(back.integral - 1.0) <= 1e-6
    g = np.linspace(back.log_lo, back.log_hi, 2**14)
    trap = integrate.trapezoid(back.pdf(np.exp(g)) * np.exp(g), g)
    assert abs(trap - 1.0) <= 1e-6


def test_rstar_not_normalized():
    with pytest.raises(NotNormalized):
        BackwardRadial(LogUniform(0.5, 2.0), 1.0)


def test_fixedpoint_gap_uniform(rng):
    gap = kesten_spectral_fixedpoint_gap(KestenOrthogonalSpec(3, 1.0, PointMass()), 20_000, rng)
    assert not gap.flagged
    assert gap.per_function["one"][0] == 0.0


def test_fixedpoint_gap_broken(rng):
    spec = KestenOrthogonalSpec(2, 1.0, PointMass(1.2), strict=False)
    gap = kesten_spectral_fixedpoint_gap(spec, 10_000, rng)
    assert gap.per_function["one"][0] == pytest.approx(0.2)
    assert gap.flagged
    with pytest.raises(ValueError):
        kesten_spectral_fixedpoint_gap(spec, 10, rng)


def test_kesten_increments_iid(rng):
    from tailchains.diagnostics import energy_test

    spec = KestenOrthogonalSpec(1, 1.0, LogNormal.unit_moment(0.5, 1.0))
    paths = spec.bftc_spec()
    from tailchains.tailchain import sample_bftc

    p = sample_bftc(paths, 0, 2, rng, 4000).values[:, :, 0]
    r1, r2 = p[:, 1] / p[:, 0], p[:, 2] / p[:, 1]
    assert energy_test(r1[:2000, None], r2[2000:, None], n_perm=199, stream=rng).p_value > 0.001


# -- JSON ------------------------------------------------------------------


def test_model_from_dict_roundtrip():
    spec = model_from_dict({"type": "ar1", "d": 1, "alpha": 1, "A": 0.5,
                            "innovation": {"name": "pareto-symmetric", "spectral": "uniform"}})
    assert isinstance(spec, Ar1Spec)
    again = model_from_dict(spec.to_dict())
    assert np.array_equal(again.A, spec.A) and again.alpha == spec.alpha
    k = model_from_dict({"type": "kesten", "d": 2, "alpha": 1, "radial": {"name": "lognormal", "sigma": 0.5},
                         "additive": {"name": "normal"}})
    assert isinstance(k, KestenOrthogonalSpec) and k.radial.mu == pytest.approx(-0.125)
    assert model_from_dict(k.to_dict()).radial == k.radial
    with pytest.raises(DomainError):
        model_from_dict({"type": "garch", "d": 1, "alpha": 1})


def test_additive_law_names(rng):
    assert np.all(AdditiveLaw().sample(5, 2, rng) == 0)
    with pytest.raises(DomainError):
        AdditiveLaw("cauchy").sample(5, 1, rng)
