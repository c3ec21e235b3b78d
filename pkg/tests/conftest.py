"""Shared fixtures and an independent dense-matrix oracle.

The oracle builds truncated single-mode ladder matrices, takes Kronecker
products over the wells and restricts to the fixed-N sector. It does not use
the package's basis enumeration or hop tables; the only link is matching
occupation tuples to reorder amplitudes.
"""

import itertools

import numpy as np
import pytest

from ptfourwell.fock import build_basis


class DenseOracle:
    def __init__(self, n_total, wells=4):
        self.n_total = n_total
        self.wells = wells
        cut = n_total + 1
        a = np.diag(np.sqrt(np.arange(1, cut)), 1)
        eye = np.eye(cut)
        self.annihilators = []
        for k in range(wells):
            mats = [a if i == k else eye for i in range(wells)]
            op = mats[0]
            for m in mats[1:]:
                op = np.kron(op, m)
            self.annihilators.append(op)
        tuples = list(itertools.product(range(cut), repeat=wells))
        keep = [i for i, t in enumerate(tuples) if sum(t) == n_total]
        self.keep = np.array(keep)
        self.tuples = [tuples[i] for i in keep]
        self.basis = build_basis(n_total, wells)
        pos = {t: i for i, t in enumerate(self.tuples)}
        # perm[i] = oracle index of package basis state i
        self.perm = np.array([pos[tuple(int(x) for x in s)] for s in self.basis.states])

    def restrict(self, op):
        sub = op[np.ix_(self.keep, self.keep)]
        return sub[np.ix_(self.perm, self.perm)]

    def hop(self, k, l):
        """``a_k^dag a_l`` in the package basis ordering."""
        a = self.annihilators
        return self.restrict(a[k].conj().T @ a[l])

    def hamiltonian(self, params):
        tun = params.tunnelling_matrix()
        eps = params.onsite()
        dim = self.basis.dimension
        h = np.zeros((dim, dim), dtype=complex)
        for k in range(self.wells):
            nk = self.hop(k, k)
            h += 0.5 * params.u * (nk @ nk - nk) + eps[k] * nk
            for l in range(self.wells):
                if tun[k, l] != 0.0:
                    h -= tun[k, l] * self.hop(k, l)
        return h


@pytest.fixture(scope="session")
def oracle_factory():
    cache = {}

    def make(n_total, wells=4):
        key = (n_total, wells)
        if key not in cache:
            cache[key] = DenseOracle(n_total, wells)
        return cache[key]

    return make


def random_state(rng, dim):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)
