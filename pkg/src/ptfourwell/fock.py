"""Occupation-number basis for bosons on a chain of wells.

Wells are indexed from 0 in code, so well ``k`` here is well ``k + 1`` in the
usual physics labelling. Basis states are ordered lexicographically
descending: ``(N, 0, ..., 0)`` comes first and ``(0, ..., 0, N)`` last.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import comb

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError

DEFAULT_MAX_DIMENSION = 5_000_000


def fock_dimension(n_total: int, wells: int) -> int:
    """Number of ways to distribute ``n_total`` bosons over ``wells`` sites."""
    return comb(n_total + wells - 1, n_total)


def _compositions(n, m):
    if m == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in _compositions(n - first, m - 1):
            yield (first,) + rest


class FockBasis:
    """Immutable enumeration of ``|n_1, ..., n_M>`` with fixed total ``N``.

    Attributes
    ----------
    n_total, wells : int
    states : ndarray, shape (D, M)
        Occupation tuples, one per row.
    """

    def __init__(self, n_total: int, wells: int, max_dimension: int = DEFAULT_MAX_DIMENSION):
        if n_total < 0:
            raise ValueError(f"n_total must be >= 0, got {n_total}")
        if wells < 2:
            raise ValueError(f"wells must be >= 2, got {wells}")
        dim = fock_dimension(n_total, wells)
        if dim > max_dimension:
            raise CapacityError(
                f"Fock dimension {dim} for N={n_total}, M={wells} exceeds cap {max_dimension}"
            )
        self.n_total = int(n_total)
        self.wells = int(wells)
        states = np.array(list(_compositions(self.n_total, self.wells)), dtype=np.int64)
        states.setflags(write=False)
        self.states = states
        # Base-(N+1) keys are strictly decreasing along the ordering.
        radix = self.n_total + 1
        self._weights = radix ** np.arange(self.wells - 1, -1, -1, dtype=np.int64)
        self._keys_ascending = (states @ self._weights)[::-1].copy()

    @property
    def dimension(self) -> int:
        return self.states.shape[0]

    def __len__(self):
        return self.dimension

    def __repr__(self):
        return f"FockBasis(n_total={self.n_total}, wells={self.wells}, D={self.dimension})"

    def index_of(self, occupation) -> int:
        occ = np.asarray(occupation, dtype=np.int64)
        if occ.shape != (self.wells,) or occ.min() < 0 or occ.sum() != self.n_total:
            raise KeyError(tuple(occupation))
        return int(self.indices_of(occ[None, :])[0])

    def indices_of(self, occupations: np.ndarray) -> np.ndarray:
        """Vectorised inverse of ``states`` for rows known to be in the basis."""
        keys = np.asarray(occupations, dtype=np.int64) @ self._weights
        pos = np.searchsorted(self._keys_ascending, keys)
        return self.dimension - 1 - pos

    @cached_property
    def occupations(self) -> np.ndarray:
        """Float copy of ``states`` for use as number-operator diagonals."""
        occ = self.states.astype(float)
        occ.setflags(write=False)
        return occ

    def hop_table(self, k: int, l: int):
        """Index form of ``a_k^dag a_l`` for ``k != l``.

        Returns ``(src, dst, factor)`` such that
        ``(a_k^dag a_l psi)[dst] = factor * psi[src]``.
        """
        return self._hop_tables[(k, l)]

    @cached_property
    def _hop_tables(self):
        tables = {}
        for k in range(self.wells):
            for l in range(self.wells):
                if k == l:
                    continue
                src = np.flatnonzero(self.states[:, l] > 0)
                target = self.states[src].copy()
                factor = np.sqrt((target[:, k] + 1.0) * target[:, l])
                target[:, k] += 1
                target[:, l] -= 1
                tables[(k, l)] = (src, self.indices_of(target), factor)
        return tables

    def hop_matrix(self, k: int, l: int) -> sp.csr_matrix:
        """Sparse ``a_k^dag a_l``; for ``k == l`` this is the number operator."""
        d = self.dimension
        if k == l:
            return sp.diags(self.occupations[:, k]).tocsr()
        src, dst, factor = self.hop_table(k, l)
        return sp.csr_matrix((factor, (dst, src)), shape=(d, d))

    @cached_property
    def ladder_stack(self) -> sp.csr_matrix:
        """All ``a_k^dag a_l`` stacked row-wise; block ``k*M + l`` has shape (D, D).

        One product ``ladder_stack @ psi`` yields every one-body image of ``psi``.
        """
        return sp.vstack(
            [self.hop_matrix(k, l) for k in range(self.wells) for l in range(self.wells)],
            format="csr",
        )


def build_basis(n_total: int, wells: int, max_dimension: int = DEFAULT_MAX_DIMENSION) -> FockBasis:
    if n_total < 1:
        raise ValueError(f"n_total must be >= 1, got {n_total}")
    return FockBasis(n_total, wells, max_dimension=max_dimension)


def annihilation_matrix(basis: FockBasis, k: int, target: FockBasis = None) -> sp.csr_matrix:
    """Sparse ``a_k`` from the ``N``-particle basis into the ``N - 1`` one."""
    if basis.n_total == 0:
        raise ValueError("cannot remove a particle from the vacuum")
    if target is None:
        target = FockBasis(basis.n_total - 1, basis.wells)
    src = np.flatnonzero(basis.states[:, k] > 0)
    occ = basis.states[src].copy()
    factor = np.sqrt(occ[:, k].astype(float))
    occ[:, k] -= 1
    dst = target.indices_of(occ)
    return sp.csr_matrix((factor, (dst, src)), shape=(target.dimension, basis.dimension))


@dataclass(frozen=True)
class ManyBodyState:
    """Amplitudes ``c_{n_1..n_M}`` over a :class:`FockBasis`."""

    basis: FockBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.basis.dimension,):
            raise ValueError(
                f"amplitude vector has shape {amps.shape}, basis needs ({self.basis.dimension},)"
            )
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_occupation(cls, basis: FockBasis, occupation, amplitude=1.0):
        amps = np.zeros(basis.dimension, dtype=complex)
        amps[basis.index_of(occupation)] = amplitude
        return cls(basis, amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "ManyBodyState":
        nrm = self.norm()
        if nrm == 0.0:
            raise ValueError("cannot normalise the zero vector")
        return ManyBodyState(self.basis, self.amplitudes / nrm)

    def vdot(self, other: "ManyBodyState") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def __add__(self, other):
        return ManyBodyState(self.basis, self.amplitudes + other.amplitudes)

    def __sub__(self, other):
        return ManyBodyState(self.basis, self.amplitudes - other.amplitudes)

    def __mul__(self, scalar):
        return ManyBodyState(self.basis, self.amplitudes * scalar)

    __rmul__ = __mul__


def _check_well(basis, k):
    if not 0 <= k < basis.wells:
        raise IndexError(f"well index {k} out of range for {basis.wells} wells")


def apply_hop(state: ManyBodyState, k: int, l: int) -> ManyBodyState:
    """Raw action of ``a_k^dag a_l`` (no renormalisation)."""
    basis = state.basis
    _check_well(basis, k)
    _check_well(basis, l)
    if k == l:
        raise ValueError("apply_hop needs k != l; use apply_number for a_k^dag a_k")
    src, dst, factor = basis.hop_table(k, l)
    out = np.zeros_like(state.amplitudes)
    out[dst] = factor * state.amplitudes[src]
    return ManyBodyState(basis, out)


def apply_number(state: ManyBodyState, k: int) -> ManyBodyState:
    _check_well(state.basis, k)
    return ManyBodyState(state.basis, state.basis.occupations[:, k] * state.amplitudes)
