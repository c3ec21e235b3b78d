"""One- and two-particle density-matrix elements and derived quantities.

Conventions (0-based wells)::

    sigma1[k, l]           = <a_k^dag a_l>
    sigma_klmn             = <a_k^dag a_l a_m^dag a_n>
    current   jt[k, l]     = 2 Im sigma1[k, l]
    correlation c[k, l]    = 2 Re sigma1[k, l]

The first order of the BBGKY hierarchy only involves the two-particle elements
``sigma_kkkl`` and ``sigma_klll``; these are what :class:`DensityMoments`
carries. Arbitrary elements are available from :func:`two_particle_elements`.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import EmptySubsetError
from .fock import FockBasis, ManyBodyState

INNER_WELLS = (1, 2)


def one_body_images(basis: FockBasis, psi: np.ndarray) -> np.ndarray:
    """``images[k, l] = a_k^dag a_l psi`` for every ordered pair, shape (M, M, D)."""
    m = basis.wells
    return (basis.ladder_stack @ psi).reshape(m, m, basis.dimension)


@dataclass(frozen=True)
class DensityMoments:
    """Moments of one state needed by the first-order equations of motion.

    ``kkkl[k, l]`` holds ``sigma_kkkl = <n_k a_k^dag a_l>``; the mirrored
    element ``sigma_klll`` equals ``conj(kkkl[l, k])``.
    """

    sigma1: np.ndarray
    kkkl: np.ndarray
    n_total: int

    @property
    def wells(self):
        return self.sigma1.shape[0]

    @property
    def klll(self) -> np.ndarray:
        return self.kkkl.T.conj()

    @property
    def occupations(self) -> np.ndarray:
        return self.sigma1.diagonal().real.copy()

    def current(self, k, l) -> float:
        return 2.0 * self.sigma1[k, l].imag

    def correlation(self, k, l) -> float:
        return 2.0 * self.sigma1[k, l].real

    @property
    def sigma2(self) -> dict:
        """Map ``(k, l, m, n) -> sigma_klmn`` over the first-order index set."""
        out = {}
        klll = self.klll
        for k, l in product(range(self.wells), repeat=2):
            out[(k, k, k, l)] = complex(self.kkkl[k, l])
            out[(k, l, l, l)] = complex(klll[k, l])
        return out

    def scaled(self, factor: float) -> "DensityMoments":
        return DensityMoments(self.sigma1 * factor, self.kkkl * factor, self.n_total)


def moments_from_amplitudes(basis: FockBasis, psi: np.ndarray, images=None) -> DensityMoments:
    if images is None:
        images = one_body_images(basis, psi)
    psi_c = psi.conj()
    sigma1 = images @ psi_c
    kkkl = np.einsum("ik,i,kli->kl", basis.occupations, psi_c, images)
    return DensityMoments(sigma1, kkkl, basis.n_total)


def density_moments(state: ManyBodyState) -> DensityMoments:
    return moments_from_amplitudes(state.basis, state.amplitudes)


def single_particle_matrix(state: ManyBodyState) -> np.ndarray:
    images = one_body_images(state.basis, state.amplitudes)
    return images @ state.amplitudes.conj()


def first_order_index_set(wells: int = 4):
    """Every ``(k, l, m, n)`` appearing in the first-order equations."""
    idx = set()
    for k, l in product(range(wells), repeat=2):
        idx.add((k, k, k, l))
        idx.add((k, l, l, l))
    return sorted(idx)


def two_particle_elements(state: ManyBodyState, index_set=None) -> dict:
    """Exact ``sigma_klmn`` for each requested index tuple.

    Uses ``sigma_klmn = <a_l^dag a_k psi | a_m^dag a_n psi>``.
    """
    if index_set is None:
        index_set = first_order_index_set(state.basis.wells)
    images = one_body_images(state.basis, state.amplitudes)
    return {
        (k, l, m, n): complex(np.vdot(images[l, k], images[m, n])) for k, l, m, n in index_set
    }


def two_particle_tensor(state: ManyBodyState) -> np.ndarray:
    """Full rank-4 array ``T[k, l, m, n] = sigma_klmn`` (debugging aid)."""
    images = one_body_images(state.basis, state.amplitudes)
    return np.einsum("lki,mni->klmn", images.conj(), images)


def purity(sigma1: np.ndarray, wells=None) -> float:
    """Scaled purity ``(M tr(s^2) - 1) / (M - 1)`` of the trace-normalised block.

    ``wells`` selects the subsystem; ``None`` uses all wells.
    """
    sigma1 = np.asarray(sigma1)
    if wells is None:
        wells = range(sigma1.shape[0])
    idx = np.asarray(list(wells))
    m = len(idx)
    if m < 2:
        raise ValueError("purity needs at least two wells")
    block = sigma1[np.ix_(idx, idx)]
    trace = block.trace().real
    if not trace > 0.0:
        raise EmptySubsetError(f"wells {tuple(idx.tolist())} hold no particles")
    red = block / trace
    tr2 = np.einsum("ij,ji->", red, red).real
    return float((m * tr2 - 1.0) / (m - 1))


@dataclass(frozen=True)
class DerivedFirstOrder:
    occupations: np.ndarray
    currents: np.ndarray
    correlations: np.ndarray
    purity2: float
    purity4: float


def derived_first_order(sigma1: np.ndarray) -> DerivedFirstOrder:
    return DerivedFirstOrder(
        occupations=sigma1.diagonal().real.copy(),
        currents=2.0 * sigma1.imag,
        correlations=2.0 * sigma1.real,
        purity2=purity(sigma1, INNER_WELLS),
        purity4=purity(sigma1),
    )


def z_matrix(moments: DensityMoments, tunnelling: np.ndarray, u: float) -> np.ndarray:
    """Abbreviation ``Z_kl`` of the first-order equation for the whole chain.

    ``tunnelling`` is the symmetric bond matrix; absent bonds (beyond the
    chain ends) are simply zero entries.
    """
    s = moments.sigma1
    hop = tunnelling @ s - s @ tunnelling
    interaction = -u * (moments.kkkl - s) + u * (moments.klll - s)
    return hop + interaction


def bbgky_first_order_rhs(moments: DensityMoments, params) -> np.ndarray:
    """``d sigma1 / dt`` from ``i d_t sigma_kl = Z_kl - (eps_k - eps_l) sigma_kl``."""
    s = moments.sigma1
    eps = params.onsite()
    z = z_matrix(moments, params.tunnelling_matrix(), params.u)
    detuning = (eps[:, None] - eps[None, :]) * s
    return -1j * (z - detuning)
