import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailchains.admissible import (
    AdjointPair,
    adjoint,
    adjoint_expectation,
    check_pair,
    is_admissible,
    marginals_equal,
    random_admissible,
)
from tailchains.errors import NotAdmissible, NotCanonical
from tailchains.measures import AtomMeasure, canonicalize, dirac

HAND = canonicalize([([1.0], [0.5], 0.5), ([1.0], [0.0], 0.5)])


def test_hand_example():
    Ps = adjoint(HAND, 1.0)
    assert Ps == canonicalize([([1.0], [2.0], 0.25), ([1.0], [0.0], 0.75)])
    assert Ps.w.tolist() == [0.75, 0.25]


def test_hand_example_report():
    rep = is_admissible(HAND, 1.0)
    assert rep.admissible
    assert rep.worst_set_slack == pytest.approx(0.75)
    assert rep.alpha_moment == pytest.approx(0.25)


def test_dirac_identity_is_self_adjoint():
    P = dirac([1.0], [1.0])
    assert adjoint(P, 1.0) == P
    assert is_admissible(P, 1.0).worst_set_slack == 0.0


def test_inadmissible():
    P = dirac([1.0], [2.0])
    rep = is_admissible(P, 1.0)
    assert not rep.admissible and rep.worst_set_slack == pytest.approx(-1.0)
    with pytest.raises(NotAdmissible):
        adjoint(P, 1.0)


def test_mass_pushed_to_uncharged_angle_is_inadmissible():
    P = dirac([1.0], [-0.5])
    assert not is_admissible(P, 1.0).admissible


def test_not_canonical():
    bad = AtomMeasure(np.array([[1.0]]), np.array([[0.0]]), np.array([0.9]))
    with pytest.raises(NotCanonical):
        is_admissible(bad, 1.0)


def test_adjoint_expectation_matches_adjoint_sum():
    P = canonicalize([([1.0, 0.0], [0.3, 0.4], 0.5), ([0.6, 0.8], [0.5, 0.0], 0.5)])

    def f(s, m):
        return s[0] + 2 * m[1] ** 2

    Ps = adjoint(P, 1.5)
    direct = sum(f(s, m) * w for s, m, w in zip(Ps.s, Ps.m, Ps.w) if np.any(m != 0))
    assert adjoint_expectation(f, P, 1.5) == pytest.approx(direct, abs=1e-14)


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3]), st.integers(1, 20), st.sampled_from([0.5, 1.0, 2.0]))
@settings(max_examples=200, deadline=None)
def test_involution_and_marginals(seed, d, n_atoms, alpha):
    P = random_admissible(np.random.default_rng(seed), d, n_atoms, alpha)
    assert is_admissible(P, alpha).admissible
    Ps = adjoint(P, alpha)
    assert is_admissible(Ps, alpha).admissible
    assert marginals_equal(P, Ps)
    assert adjoint(Ps, alpha).allclose(P, 1e-10)
    assert check_pair(AdjointPair.from_measure(P, alpha))


def test_check_pair_rejects_wrong_partner():
    assert not check_pair(AdjointPair(HAND, HAND, 1.0))


def test_adjoint_moment_equals_nonzero_mass():
    # E|M_1|^alpha 1{M_1 != 0} under P equals the nonzero mass of P*
    P = random_admissible(np.random.default_rng(7), 2, 10, 1.0)
    Ps = adjoint(P, 1.0)
    assert is_admissible(P, 1.0).alpha_moment == pytest.approx(Ps.w[Ps.nonzero].sum(), abs=1e-12)
