import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptfourwell.control import (
    coefficient_assembly,
    tunnelling_controls,
    verify_requirement,
)
from ptfourwell.errors import BrokenPTRegimeError, ConstraintSolveError, SeedNormError
from ptfourwell.fock import ManyBodyState, build_basis
from ptfourwell.observables import density_moments, purity, single_particle_matrix
from ptfourwell.stateprep import (
    PerturbationSpec,
    _residual_jacobian,
    constraint_residuals,
    inner_mode_operator,
    mean_field_seed,
    perturb,
    product_state,
    project_constraints,
)
from ptfourwell.twomode import target_from

GAMMA, J, N_INNER = 0.5, 1.0, 5.0


@pytest.fixture(scope="module")
def default_setup():
    """Seed, perturbed and projected states of the default N = 22 setup."""
    target = target_from(GAMMA, J, N_INNER)
    basis = build_basis(22, 4)
    pure = product_state(mean_field_seed(target, 7.0, 5.0), basis)
    deflected = perturb(pure, PerturbationSpec(0.008, seed=0))
    projected, res = project_constraints(deflected, target)
    return target, pure, deflected, projected, res


def test_seed_invariants():
    target = target_from(GAMMA, J, N_INNER)
    seed = mean_field_seed(target, 7.0, 5.0)
    occ = np.abs(seed.psi) ** 2
    np.testing.assert_allclose(occ, [7, 5, 5, 5])
    phase = np.angle(seed.psi)
    assert (phase[0] - phase[1]) % (2 * math.pi) == pytest.approx(1.5 * math.pi)
    assert (phase[3] - phase[2]) % (2 * math.pi) == pytest.approx(0.5 * math.pi)
    assert seed.n_total == pytest.approx(22.0)


def test_product_state_small_examples():
    b = build_basis(2, 2)
    s = product_state(np.array([math.sqrt(2), 0.0]), b)
    np.testing.assert_allclose(np.abs(s.amplitudes), [1, 0, 0], atol=1e-15)
    b1 = build_basis(1, 2)
    s = product_state(np.array([1.0, 1.0]) / math.sqrt(2), b1)
    np.testing.assert_allclose(s.amplitudes, [1 / math.sqrt(2)] * 2)
    with pytest.raises(SeedNormError):
        product_state(np.array([1.0, 1.0]), b1)


@given(st.integers(1, 10), st.integers(0, 2**31))
@settings(max_examples=50, deadline=None)
def test_product_state_dyad(n, seed):
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=4) + 1j * rng.normal(size=4)
    psi *= math.sqrt(n) / np.linalg.norm(psi)
    state = product_state(psi, build_basis(n, 4))
    assert state.norm() == pytest.approx(1.0, abs=1e-12)
    s1 = single_particle_matrix(state)
    np.testing.assert_allclose(s1, np.outer(psi.conj(), psi), atol=1e-10)


def test_seed_inner_coherence(default_setup):
    target, pure, *_ = default_setup
    s1 = single_particle_matrix(pure)
    assert abs(s1[1, 2] - N_INNER * np.exp(-2j * target.phi)) < 1e-10
    assert purity(s1) == pytest.approx(1.0, abs=1e-10)


def test_perturbation_contract(default_setup):
    _, pure, deflected, *_ = default_setup
    same = perturb(pure, PerturbationSpec(0.0, seed=3))
    np.testing.assert_array_equal(same.amplitudes, pure.amplitudes)
    again = perturb(pure, PerturbationSpec(0.008, seed=0))
    np.testing.assert_array_equal(again.amplitudes, deflected.amplitudes)
    other = perturb(pure, PerturbationSpec(0.008, seed=1))
    assert np.abs(other.amplitudes - deflected.amplitudes).max() > 1e-6
    # real multipliers keep every amplitude phase
    ratio = deflected.amplitudes / pure.amplitudes
    assert np.abs(ratio.imag).max() < 1e-12 * np.abs(ratio).max()
    cplx = perturb(pure, PerturbationSpec(0.008, seed=0, complex_multipliers=True))
    ratio = cplx.amplitudes / pure.amplitudes
    assert np.abs(ratio.imag).max() > 1e-3
    with pytest.raises(ValueError):
        PerturbationSpec(-1.0)


def test_projection_meets_constraints(default_setup):
    target, _, deflected, projected, res = default_setup
    assert projected.norm() == pytest.approx(1.0, abs=1e-12)
    # recomputed from scratch through the observables module
    s1 = single_particle_matrix(projected)
    r = constraint_residuals(s1, GAMMA, J)
    assert np.abs(r).max() < 1e-8
    assert res.max_abs < 1e-8
    j12, j34 = tunnelling_controls(density_moments(projected), GAMMA)
    assert abs(verify_requirement(density_moments(projected), j12, j34)) < 1e-8
    assert np.linalg.norm(projected.amplitudes - deflected.amplitudes) < 0.1
    p4 = purity(s1)
    assert 0.9 <= p4 < 1.0


def test_projection_fixed_point(default_setup):
    target, _, _, projected, _ = default_setup
    again, res = project_constraints(projected, target)
    assert np.abs(again.amplitudes - projected.amplitudes).max() < 1e-12
    assert res.max_abs < 1e-12


def test_projection_with_complex_multipliers(default_setup):
    target, pure, *_ = default_setup
    cplx = perturb(pure, PerturbationSpec(0.008, seed=4, complex_multipliers=True))
    with pytest.raises(ConstraintSolveError):
        project_constraints(cplx, target)
    out, res = project_constraints(cplx, target, complex_multipliers=True)
    assert res.max_abs < 1e-8
    assert np.abs(constraint_residuals(single_particle_matrix(out), GAMMA, J)).max() < 1e-8


def test_broken_target_propagates():
    with pytest.raises(BrokenPTRegimeError):
        target_from(1.5, 1.0, 5.0)


@given(st.integers(0, 2**31), st.floats(0.05, 0.95))
@settings(max_examples=20, deadline=None)
def test_inner_mode_identity(seed, gamma):
    """|(a3 - e^{i chi} a2) psi|^2 = n2 + n3 - 2 Re(e^{i chi} s32) on any state."""
    rng = np.random.default_rng(seed)
    b = build_basis(4, 4)
    psi = rng.normal(size=b.dimension) + 1j * rng.normal(size=b.dimension)
    psi /= np.linalg.norm(psi)
    target = target_from(gamma, 1.0, 1.0)
    chi = math.asin(gamma)
    s = single_particle_matrix(ManyBodyState(b, psi))
    lhs = np.linalg.norm(inner_mode_operator(b, target) @ psi) ** 2
    rhs = s[1, 1].real + s[2, 2].real - 2 * (np.exp(1j * chi) * s[2, 1]).real
    assert lhs == pytest.approx(rhs, abs=1e-12)


@given(st.integers(0, 2**31))
@settings(max_examples=10, deadline=None)
def test_residual_jacobian_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    target = target_from(GAMMA, J, 2.0)
    b = build_basis(8, 4)
    base = perturb(product_state(mean_field_seed(target, 2.0, 2.0), b),
                   PerturbationSpec(0.05, seed=seed, complex_multipliers=True))
    psi = base.amplitudes
    w = 1 + 0.01 * rng.normal(size=b.dimension)
    _, jac = _residual_jacobian(b, psi, w * psi, GAMMA, J)
    direction = rng.normal(size=b.dimension)
    h = 1e-6
    plus, _ = _residual_jacobian(b, psi, (w + h * direction) * psi, GAMMA, J)
    minus, _ = _residual_jacobian(b, psi, (w - h * direction) * psi, GAMMA, J)
    fd = (plus - minus) / (2 * h)
    np.testing.assert_allclose(jac @ direction, fd, atol=1e-6 * max(1.0, np.abs(fd).max()))


@given(st.integers(0, 2**31), st.booleans())
@settings(max_examples=8, deadline=None)
def test_exact_constraints_force_degenerate_onsite_system(seed, complex_multipliers):
    """With all five conditions met, s13 = e^{i chi} s12, s24 = e^{i chi} s34 and
    s12 is parallel to s34, which makes the onsite determinant vanish."""
    target = target_from(GAMMA, J, 2.0)
    b = build_basis(8, 4)
    pure = product_state(mean_field_seed(target, 2.0, 2.0), b)
    spec = PerturbationSpec(0.02, seed=seed, complex_multipliers=complex_multipliers)
    out, res = project_constraints(perturb(pure, spec), target,
                                   complex_multipliers=complex_multipliers)
    assert res.max_abs < 1e-8
    m = density_moments(out)
    assert purity(m.sigma1, (1, 2)) == pytest.approx(1.0, abs=1e-10)
    j12, j34 = tunnelling_controls(m, GAMMA)
    coeffs = coefficient_assembly(m, j12, j34, 0.1)
    assert abs(coeffs.det) < 1e-10 * coeffs.det_scale
