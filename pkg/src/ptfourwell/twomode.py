"""Closed-form PT-symmetric ground state of the two-mode gain/loss model.

    i d/dt (psi1, psi2) = [[g|psi1|^2 + i gamma, -J], [-J, g|psi2|^2 - i gamma]] (psi1, psi2)

The ground state ``(sqrt(n) e^{i phi}, sqrt(n) e^{-i phi})`` with
``phi = -arcsin(gamma/J)/2`` has stationary occupations, current
``2 n gamma / J`` and correlation ``2 n sqrt(1 - gamma^2/J^2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import BrokenPTRegimeError


@dataclass(frozen=True)
class TwoModeTarget:
    gamma: float
    j: float
    n: float
    phi: float

    @property
    def current(self) -> float:
        return 2.0 * self.n * self.gamma / self.j

    @property
    def correlation(self) -> float:
        return 2.0 * self.n * math.sqrt(max(0.0, 1.0 - (self.gamma / self.j) ** 2))

    def psi(self) -> np.ndarray:
        amp = math.sqrt(self.n)
        return np.array([amp * np.exp(1j * self.phi), amp * np.exp(-1j * self.phi)])


def target_from(gamma: float, j: float, n: float) -> TwoModeTarget:
    if j <= 0 or n <= 0 or gamma < 0:
        raise ValueError(f"need j > 0, n > 0, gamma >= 0 (got gamma={gamma}, j={j}, n={n})")
    if gamma > j:
        raise BrokenPTRegimeError(f"gamma={gamma} exceeds j={j}: no PT-symmetric eigenstate")
    return TwoModeTarget(gamma=gamma, j=j, n=n, phi=-0.5 * math.asin(gamma / j))


def gpe_rhs(psi: np.ndarray, gamma: float, j: float, g: float) -> np.ndarray:
    """``d psi / dt`` of the two-mode Gross-Pitaevskii equation."""
    p1, p2 = psi
    h1 = (g * abs(p1) ** 2 + 1j * gamma) * p1 - j * p2
    h2 = -j * p1 + (g * abs(p2) ** 2 - 1j * gamma) * p2
    return -1j * np.array([h1, h2])


def observables(psi: np.ndarray) -> np.ndarray:
    """``(n1, n2, current, correlation)``; all invariant under a global phase."""
    s12 = np.conj(psi[0]) * psi[1]
    return np.array([abs(psi[0]) ** 2, abs(psi[1]) ** 2, 2 * s12.imag, 2 * s12.real])


def observable_rates(psi: np.ndarray, gamma: float, j: float, g: float) -> np.ndarray:
    dpsi = gpe_rhs(psi, gamma, j, g)
    p1, p2 = psi
    d1, d2 = dpsi
    ds12 = np.conj(d1) * p2 + np.conj(p1) * d2
    return np.array([
        2 * (np.conj(p1) * d1).real,
        2 * (np.conj(p2) * d2).real,
        2 * ds12.imag,
        2 * ds12.real,
    ])


def verify_stationarity(target: TwoModeTarget, g: float = 0.0) -> float:
    """Norm of the instantaneous drift of ``(n1, n2, current, correlation)``."""
    return float(np.linalg.norm(observable_rates(target.psi(), target.gamma, target.j, g)))


def integrate_gpe(target: TwoModeTarget, duration: float, g: float = 0.0, rtol: float = 1e-12,
                  atol: float = 1e-12):
    """Propagate the target state and return ``(times, observable rows)``."""
    sol = solve_ivp(
        lambda t, y: gpe_rhs(y, target.gamma, target.j, g),
        (0.0, duration),
        target.psi().astype(complex),
        method="DOP853",
        rtol=rtol,
        atol=atol,
    )
    return sol.t, np.array([observables(y) for y in sol.y.T])


def observable_drift(target: TwoModeTarget, duration: float = 1.0, g: float = 0.0) -> float:
    _, obs = integrate_gpe(target, duration, g)
    return float(np.abs(obs - obs[0]).max())
