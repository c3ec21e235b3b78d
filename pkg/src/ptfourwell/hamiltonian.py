"""Time-dependent Bose-Hubbard Hamiltonian of the four-well chain.

    H = - sum_<m,m'> J_mm' a_m^dag a_m' + U/2 sum_m n_m (n_m - 1) + sum_m eps_m n_m

with nearest-neighbour hopping only, a uniform interaction ``U`` and
``hbar = 1``. Only ``J12``, ``J34``, ``eps1`` and ``eps4`` are controls;
``J23`` and ``U`` are fixed and the inner onsite energies vanish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import ControlDivergedError
from .fock import FockBasis, ManyBodyState

WELLS = 4
# Nearest-neighbour bonds (0-based wells).
BONDS = ((0, 1), (1, 2), (2, 3))


@dataclass(frozen=True)
class ControlParams:
    j12: float
    j34: float
    eps1: float
    eps4: float
    j23: float = 1.0
    u: float = 0.0
    eps2: float = 0.0
    eps3: float = 0.0

    def check_finite(self):
        bad = [f.name for f in fields(self) if not math.isfinite(getattr(self, f.name))]
        if bad:
            raise ControlDivergedError(f"non-finite control parameters: {', '.join(bad)}")
        return self

    def tunnelling_matrix(self) -> np.ndarray:
        """Real symmetric ``J[m, m']``, nonzero only on nearest-neighbour bonds."""
        jm = np.zeros((WELLS, WELLS))
        for (m, mp), value in zip(BONDS, (self.j12, self.j23, self.j34)):
            jm[m, mp] = jm[mp, m] = value
        return jm

    def onsite(self) -> np.ndarray:
        return np.array([self.eps1, self.eps2, self.eps3, self.eps4], dtype=float)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


class HamiltonianTerms:
    """Cached operator structure for one basis; coefficients are supplied per call."""

    def __init__(self, basis: FockBasis):
        if basis.wells != WELLS:
            raise ValueError(f"the four-well Hamiltonian needs a 4-well basis, got {basis.wells}")
        self.basis = basis
        occ = basis.occupations
        self.number = occ  # (D, 4)
        self.pair_interaction = 0.5 * (occ * (occ - 1.0)).sum(axis=1)
        # Hermitian bond operators a_m^dag a_m' + a_m'^dag a_m.
        self.bond_ops = [
            (basis.hop_matrix(m, mp) + basis.hop_matrix(mp, m)).tocsr() for m, mp in BONDS
        ]

    @staticmethod
    def _bond_values(params):
        return (params.j12, params.j23, params.j34)

    def diagonal(self, params: ControlParams) -> np.ndarray:
        return params.u * self.pair_interaction + self.number @ params.onsite()

    def apply(self, psi: np.ndarray, params: ControlParams) -> np.ndarray:
        out = self.diagonal(params) * psi
        for op, j in zip(self.bond_ops, self._bond_values(params)):
            if j != 0.0:
                out -= j * (op @ psi)
        return out

    def matrix(self, params: ControlParams) -> sp.csr_matrix:
        h = sp.diags(self.diagonal(params)).tocsr()
        for op, j in zip(self.bond_ops, self._bond_values(params)):
            h = h - j * op
        return h.tocsr()


@lru_cache(maxsize=16)
def terms_for(basis: FockBasis) -> HamiltonianTerms:
    return HamiltonianTerms(basis)


def apply_hamiltonian(state: ManyBodyState, params: ControlParams) -> ManyBodyState:
    params.check_finite()
    return ManyBodyState(state.basis, terms_for(state.basis).apply(state.amplitudes, params))


def expectation(state: ManyBodyState, params: ControlParams) -> float:
    """Energy ``<psi|H|psi>``; the imaginary part must vanish."""
    value = state.vdot(apply_hamiltonian(state, params))
    scale = max(1.0, abs(value.real))
    if abs(value.imag) > 1e-10 * scale:
        raise ArithmeticError(f"energy expectation has imaginary part {value.imag:.3e}")
    return value.real
