"""Initial many-body states for the controlled four-well run.

A pure condensate is built from mean-field coefficients, every Fock amplitude
is multiplied by a normally distributed real number (mean 1, variance ``d``),
and the multipliers are then corrected so that the state satisfies the five
real conditions the feedback law needs at ``t = 0``:

    -J12 Re s13 + J34 Re s24 = 0
    -J12 Im s13 + J34 Im s24 = 0
    n2 = n3
    Im s23 = sqrt(n2 n3) gamma / J
    Re s23 = sqrt(n2 n3) sqrt(1 - gamma^2 / J^2)

with ``J12 = 2 gamma n2 / jt12`` and ``J34 = 2 gamma n3 / jt34`` evaluated on
the same state.

The last three conditions put ``s23`` on the Cauchy-Schwarz bound, so they
hold exactly when all inner-well particles occupy the single mode
``(a_2^dag + e^{i chi} a_3^dag) / sqrt 2``. Together with the first two they
make ``s12`` and ``s34`` parallel, and the onsite-energy system of the
feedback law is then singular: a state meeting all five conditions exactly
cannot start a controlled run.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .errors import ConstraintSolveError, SeedNormError
from .fock import FockBasis, ManyBodyState, annihilation_matrix
from .observables import one_body_images
from .twomode import TwoModeTarget

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MeanFieldSeed:
    psi: np.ndarray
    n1_0: float
    n4_0: float
    n: float
    phi: float

    @property
    def n_total(self) -> float:
        return float(np.sum(np.abs(self.psi) ** 2))


def mean_field_seed(target: TwoModeTarget, n1_0: float, n4_0: float) -> MeanFieldSeed:
    """Four-well mean-field state whose inner wells carry the two-mode eigenstate.

    The reservoir phases sit at -pi/2 (well 1) and +pi/2 (well 4) relative to
    their inner neighbours.
    """
    phi, n = target.phi, target.n
    psi = np.array([
        -1j * math.sqrt(n1_0) * np.exp(1j * phi),
        math.sqrt(n) * np.exp(1j * phi),
        math.sqrt(n) * np.exp(-1j * phi),
        1j * math.sqrt(n4_0) * np.exp(-1j * phi),
    ])
    return MeanFieldSeed(psi=psi, n1_0=n1_0, n4_0=n4_0, n=n, phi=phi)


def product_state(seed, basis: FockBasis) -> ManyBodyState:
    """Fock expansion of the condensate ``prod_i psi_i^{n_i}``.

    ``seed`` is a :class:`MeanFieldSeed` or a raw coefficient vector with
    ``sum |psi_i|^2 = N``.
    """
    psi = np.asarray(seed.psi if isinstance(seed, MeanFieldSeed) else seed, dtype=complex)
    n_total = basis.n_total
    if psi.shape != (basis.wells,):
        raise ValueError(f"need {basis.wells} mean-field coefficients, got {psi.shape}")
    norm2 = float(np.sum(np.abs(psi) ** 2))
    if abs(norm2 - n_total) > 1e-9 * n_total:
        raise SeedNormError(f"sum |psi_i|^2 = {norm2:.12g} but N_tot = {n_total}")
    unit = psi / math.sqrt(norm2)
    occ = basis.states
    with np.errstate(divide="ignore"):
        log_mod = np.log(np.abs(unit))
    log_c = 0.5 * (gammaln(n_total + 1) - gammaln(occ + 1).sum(axis=1))
    # 0 * log(0) must read as 0: empty wells contribute a factor of one.
    with np.errstate(invalid="ignore"):
        weighted = np.where(occ > 0, occ * log_mod, 0.0).sum(axis=1)
    phase = occ @ np.angle(unit)
    amps = np.exp(log_c + weighted) * np.exp(1j * phase)
    return ManyBodyState(basis, amps).normalized()


@dataclass(frozen=True)
class PerturbationSpec:
    d: float
    seed: int = 0
    mean: float = 1.0
    complex_multipliers: bool = False

    def __post_init__(self):
        if self.d < 0:
            raise ValueError(f"variance d must be >= 0, got {self.d}")


def perturb(state: ManyBodyState, spec: PerturbationSpec) -> ManyBodyState:
    """Multiply each amplitude by an independent normal sample and renormalise."""
    rng = np.random.default_rng(spec.seed)
    size = state.basis.dimension
    scale = math.sqrt(spec.d)
    z = rng.normal(spec.mean, scale, size)
    if spec.complex_multipliers:
        z = z + 1j * rng.normal(0.0, scale, size)
    if spec.d == 0:
        return state.normalized()
    return ManyBodyState(state.basis, z * state.amplitudes).normalized()


@dataclass(frozen=True)
class ConstraintResiduals:
    r: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.r).max())

    def as_list(self):
        return [float(v) for v in self.r]


def constraint_residuals(sigma1: np.ndarray, gamma: float, j: float) -> np.ndarray:
    """The five initial-state conditions evaluated on a single-particle matrix."""
    a = sigma1[1, 1].real
    b = sigma1[2, 2].real
    p = sigma1[0, 1].imag
    q = sigma1[2, 3].imag
    j12 = gamma * a / p
    j34 = gamma * b / q
    s13, s24, s23 = sigma1[0, 2], sigma1[1, 3], sigma1[1, 2]
    root = math.sqrt(max(a * b, 0.0))
    kappa = math.sqrt(1.0 - (gamma / j) ** 2)
    return np.array([
        -j12 * s13.real + j34 * s24.real,
        -j12 * s13.imag + j34 * s24.imag,
        a - b,
        s23.imag - root * gamma / j,
        s23.real - root * kappa,
    ])


# Ordered pairs (k, l) whose sigma_kl enter the residuals.
_PAIRS = ((1, 1), (2, 2), (0, 1), (2, 3), (0, 2), (1, 3), (1, 2))


def _residual_jacobian(basis, psi, x, gamma, j):
    """Residuals of ``x`` and their derivative w.r.t. real multipliers ``w``
    where ``x = w * psi``."""
    m = basis.wells
    images = one_body_images(basis, x)
    xc = x.conj()
    sig = {kl: complex(images[kl] @ xc) for kl in _PAIRS}
    # d sigma_kl / d w_i = conj(psi_i) (A_kl x)_i + psi_i conj((A_lk x)_i)
    dsig = {
        (k, l): psi.conj() * images[k, l] + psi * images[l, k].conj() for k, l in _PAIRS
    }
    sigma1 = np.zeros((m, m), dtype=complex)
    for (k, l), v in sig.items():
        sigma1[k, l] = v
        sigma1[l, k] = np.conj(v)
    r = constraint_residuals(sigma1, gamma, j)

    a, b = sig[(1, 1)].real, sig[(2, 2)].real
    p, q = sig[(0, 1)].imag, sig[(2, 3)].imag
    s13, s24 = sig[(0, 2)], sig[(1, 3)]
    j12, j34 = gamma * a / p, gamma * b / q
    root = math.sqrt(a * b)
    kappa = math.sqrt(1.0 - (gamma / j) ** 2)

    da, db = dsig[(1, 1)].real, dsig[(2, 2)].real
    dp, dq = dsig[(0, 1)].imag, dsig[(2, 3)].imag
    dj12 = gamma / p * da - gamma * a / p**2 * dp
    dj34 = gamma / q * db - gamma * b / q**2 * dq
    droot = (b * da + a * db) / (2.0 * root)
    jac = np.empty((5, x.size))
    jac[0] = -dj12 * s13.real - j12 * dsig[(0, 2)].real + dj34 * s24.real + j34 * dsig[(1, 3)].real
    jac[1] = -dj12 * s13.imag - j12 * dsig[(0, 2)].imag + dj34 * s24.imag + j34 * dsig[(1, 3)].imag
    jac[2] = da - db
    jac[3] = dsig[(1, 2)].imag - droot * gamma / j
    jac[4] = dsig[(1, 2)].real - droot * kappa
    return r, jac


def inner_mode_operator(basis: FockBasis, target: TwoModeTarget) -> sp.csr_matrix:
    """``a_3 - e^{i chi} a_2`` with ``chi = arcsin(gamma / J)``.

    Its kernel is exactly the set of states meeting the three inner-well
    conditions: ``a_3 psi = e^{i chi} a_2 psi`` gives ``n2 = n3`` and
    ``s23 = n2 e^{i chi}``; conversely those conditions put ``s23`` on the
    Cauchy-Schwarz bound ``|s23|^2 <= n2 n3``, which forces the kernel.
    """
    chi = math.asin(target.gamma / target.j)
    lower = FockBasis(basis.n_total - 1, basis.wells)
    a2 = annihilation_matrix(basis, 1, lower)
    a3 = annihilation_matrix(basis, 2, lower)
    return (a3 - np.exp(1j * chi) * a2).tocsr()


def inner_mode_profile(basis: FockBasis, target: TwoModeTarget):
    """Group labels and amplitude profile spanning the kernel of :func:`inner_mode_operator`.

    The kernel is the Fock space of the modes ``a_1``, ``f`` and ``a_4`` with
    ``f^dag = (a_2^dag + e^{i chi} a_3^dag) / sqrt 2``. Basis states sharing
    ``(n1, n2 + n3, n4)`` form one group; within a group every kernel vector is
    a multiple of ``profile``.
    """
    chi = math.asin(target.gamma / target.j)
    occ = basis.states
    m = occ[:, 1] + occ[:, 2]
    k = occ[:, 2]
    log_binom = gammaln(m + 1) - gammaln(k + 1) - gammaln(m - k + 1)
    profile = np.exp(0.5 * log_binom - 0.5 * m * math.log(2.0) + 1j * chi * k)
    keys = np.stack([occ[:, 0], m, occ[:, 3]], axis=1)
    _, groups = np.unique(keys, axis=0, return_inverse=True)
    return groups.ravel(), profile


def _group_frame(psi, groups, profile, complex_multipliers=False, coherence_tol=1e-8):
    """Orthonormal frame ``F`` (D x P) of multipliers ``w = F g`` with ``w * psi``
    in the kernel, for real parameters ``g``.

    Real multipliers get one column per group and need the group's amplitudes
    to share the profile's phases (mod pi); complex multipliers get two.
    """
    ratio = profile / psi
    n_groups = int(groups.max()) + 1
    scale = np.zeros(n_groups)
    np.add.at(scale, groups, np.abs(ratio) ** 2)
    rows = np.arange(psi.size)
    if complex_multipliers:
        col = ratio / np.sqrt(scale[groups])
        return sp.csr_matrix(
            (np.concatenate([col, 1j * col]),
             (np.concatenate([rows, rows]), np.concatenate([groups, groups + n_groups]))),
            shape=(psi.size, 2 * n_groups),
        )
    ref = np.zeros(n_groups, dtype=complex)
    np.add.at(ref, groups, ratio**2)
    rotated = ratio * np.exp(-0.5j * np.angle(ref))[groups]
    spread = np.abs(rotated.imag) / np.maximum(np.abs(rotated), 1e-300)
    if spread.max() > coherence_tol:
        raise ConstraintSolveError(
            "amplitude phases are not compatible with real multipliers "
            f"(phase spread {spread.max():.2e}); use complex multipliers"
        )
    col = rotated.real / np.sqrt(scale[groups])
    return sp.csr_matrix((col, (rows, groups)), shape=(psi.size, n_groups))


def project_constraints(state: ManyBodyState, target: TwoModeTarget, tol: float = 1e-10,
                        max_iter: int = 500, complex_multipliers: bool = False):
    """Nearest (in multiplier space) state satisfying the five initial conditions.

    The three inner-well conditions sit on a Cauchy-Schwarz boundary where
    their gradient vanishes, so they are imposed exactly through the
    equivalent linear condition of :func:`inner_mode_operator`: the
    multipliers ``w`` (starting at 1) are first projected orthogonally onto
    the subspace that satisfies it. The two reservoir conditions are then
    solved inside that subspace by damped Gauss-Newton with minimum-norm
    steps. Returns ``(state, ConstraintResiduals)`` with the five residuals of
    the normalised output.
    """
    basis = state.basis
    psi = state.normalized().amplitudes
    gamma, j = target.gamma, target.j
    if basis.n_total < 2:
        raise ConstraintSolveError("constraint projection needs at least two particles")
    if np.any(psi == 0):
        raise ConstraintSolveError("state has vanishing amplitudes; multipliers cannot reach them")
    groups, profile = inner_mode_profile(basis, target)
    frame = _group_frame(psi, groups, profile, complex_multipliers)
    frame_re = frame.real.T.tocsr()
    frame_im = frame.imag.T.tocsr()

    def evaluate(g):
        x = (frame @ g) * psi
        norm2 = float(np.vdot(x, x).real)
        r, jac = _residual_jacobian(basis, psi, x, gamma, j)
        jac_g = (frame_re @ jac[:2].T).T
        if complex_multipliers:
            # Imaginary multiplier components move x along i * psi.
            jac_i = _residual_jacobian(basis, 1j * psi, x, gamma, j)[1]
            jac_g = jac_g + (frame_im @ jac_i[:2].T).T
        return r / norm2, r[:2], jac_g

    g = (frame.conj().T @ np.ones(basis.dimension)).real
    r_norm, r2, jac2 = evaluate(g)
    for it in range(max_iter):
        if not np.all(np.isfinite(r_norm)):
            raise ConstraintSolveError("residuals became non-finite", residuals=r_norm)
        if np.abs(r_norm).max() < tol:
            break
        step = -np.linalg.pinv(jac2, rcond=1e-12) @ r2
        size = 1.0
        while True:
            r_norm_t, r2_t, jac2_t = evaluate(g + size * step)
            if np.all(np.isfinite(r2_t)) and np.linalg.norm(r2_t) < np.linalg.norm(r2):
                g, r_norm, r2, jac2 = g + size * step, r_norm_t, r2_t, jac2_t
                break
            size *= 0.5
            if size < 1e-8:
                raise ConstraintSolveError(
                    f"no descent step after {it} iterations", residuals=r_norm
                )
        log.debug("constraint iter %d: max|r| = %.3e", it, np.abs(r_norm).max())
    else:
        raise ConstraintSolveError(
            f"constraint residuals {np.abs(r_norm).max():.3e} above {tol:.1e} "
            f"after {max_iter} iterations",
            residuals=r_norm,
        )
    out = ManyBodyState(basis, (frame @ g) * psi).normalized()
    sigma1 = one_body_images(basis, out.amplitudes) @ out.amplitudes.conj()
    return out, ConstraintResiduals(constraint_residuals(sigma1, gamma, j))
