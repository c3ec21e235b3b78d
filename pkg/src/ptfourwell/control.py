"""Feedback law for the four control parameters.

The tunnelling rates keep the inner occupations stationary,

    J12 = 2 gamma n2 / jt12,        J34 = 2 gamma n3 / jt34,

and the outer onsite energies keep ``-J12 sigma13 + J34 sigma24`` at zero by
solving the real 2x2 system

    alpha_r eps1 + beta_r eps4 = Omega_r
    alpha_i eps1 + beta_i eps4 = Omega_i

whose coefficients are built from the first-order moments and
``X_kl = 2 Re Z_kl``, ``Y_kl = 2 Im Z_kl``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import CollapseDetected, PureStateDegeneracy
from .hamiltonian import ControlParams
from .observables import DensityMoments, bbgky_first_order_rhs, z_matrix

# 0-based well labels.
W1, W2, W3, W4 = 0, 1, 2, 3


@dataclass(frozen=True)
class Thresholds:
    """Numerical cut-offs of the feedback law.

    ``current`` is relative to the particle number; ``control_max`` is in units
    of the inner tunnelling rate; ``degeneracy`` is relative to the size of the
    determinant's two products.
    """

    current: float = 1e-6
    control_max: float = 1e3
    degeneracy: float = 1e-10


DEFAULT_THRESHOLDS = Thresholds()


@dataclass(frozen=True)
class LinearSystemCoeffs:
    alpha_r: float
    beta_r: float
    omega_r: float
    alpha_i: float
    beta_i: float
    omega_i: float

    @property
    def det(self) -> float:
        return self.alpha_r * self.beta_i - self.beta_r * self.alpha_i

    @property
    def det_scale(self) -> float:
        return abs(self.alpha_r * self.beta_i) + abs(self.beta_r * self.alpha_i)

    def residual(self, eps1, eps4):
        return (
            self.alpha_r * eps1 + self.beta_r * eps4 - self.omega_r,
            self.alpha_i * eps1 + self.beta_i * eps4 - self.omega_i,
        )

    def magnitude(self) -> float:
        return max(
            abs(self.alpha_r), abs(self.beta_r), abs(self.omega_r),
            abs(self.alpha_i), abs(self.beta_i), abs(self.omega_i),
        )


def tunnelling_controls(moments: DensityMoments, gamma: float, thresholds=DEFAULT_THRESHOLDS):
    """Return ``(J12, J34)`` or raise :class:`CollapseDetected` on vanishing currents."""
    s = moments.sigma1
    jt12 = 2.0 * s[W1, W2].imag
    jt34 = 2.0 * s[W3, W4].imag
    floor = thresholds.current * moments.n_total
    if abs(jt12) < floor or abs(jt34) < floor:
        raise CollapseDetected(
            f"reservoir currents vanished: jt12={jt12:.3e}, jt34={jt34:.3e} (floor {floor:.1e})"
        )
    n2 = s[W2, W2].real
    n3 = s[W3, W3].real
    return 2.0 * gamma * n2 / jt12, 2.0 * gamma * n3 / jt34


def coefficient_assembly(moments: DensityMoments, j12: float, j34: float, u: float,
                         j23: float = 1.0) -> LinearSystemCoeffs:
    s = moments.sigma1
    n2 = s[W2, W2].real
    n3 = s[W3, W3].real
    jt12 = 2.0 * s[W1, W2].imag
    jt34 = 2.0 * s[W3, W4].imag
    if n2 == 0.0 or n3 == 0.0 or jt12 == 0.0 or jt34 == 0.0:
        raise CollapseDetected("coefficient assembly divides by a vanishing n2, n3, jt12 or jt34")
    c12 = 2.0 * s[W1, W2].real
    c34 = 2.0 * s[W3, W4].real
    c13, jt13 = 2.0 * s[W1, W3].real, 2.0 * s[W1, W3].imag
    c24, jt24 = 2.0 * s[W2, W4].real, 2.0 * s[W2, W4].imag

    tunnelling = ControlParams(j12, j34, 0.0, 0.0, j23=j23, u=u).tunnelling_matrix()
    z = z_matrix(moments, tunnelling, u)
    x = 2.0 * z.real
    y = 2.0 * z.imag

    alpha_r = 0.5 * j12 * (c12 * c13 / jt12 + jt13)
    beta_r = 0.5 * j34 * (c34 * c24 / jt34 + jt24)
    omega_r = (
        0.5 * j12 * (y[W2, W2] * c13 / (2 * n2) + x[W1, W2] * c13 / jt12
                     + x[W2, W2] * jt13 / (2 * n2) + y[W1, W3])
        - 0.5 * j34 * (y[W3, W3] * c24 / (2 * n3) + x[W3, W4] * c24 / jt34
                       + x[W3, W3] * jt24 / (2 * n3) + y[W2, W4])
    )
    alpha_i = 0.5 * j12 * (c12 * jt13 / jt12 - c13)
    beta_i = 0.5 * j34 * (c34 * jt24 / jt34 - c24)
    omega_i = (
        0.5 * j12 * (-x[W2, W2] * c13 / (2 * n2) + y[W2, W2] * jt13 / (2 * n2)
                     + x[W1, W2] * jt13 / jt12 - x[W1, W3])
        - 0.5 * j34 * (-x[W3, W3] * c24 / (2 * n3) + y[W3, W3] * jt24 / (2 * n3)
                       + x[W3, W4] * jt24 / jt34 - x[W2, W4])
    )
    return LinearSystemCoeffs(alpha_r, beta_r, omega_r, alpha_i, beta_i, omega_i)


def solve_onsite(coeffs: LinearSystemCoeffs, thresholds=DEFAULT_THRESHOLDS):
    """``(eps1, eps4)`` by Cramer's rule; rank deficiency raises PureStateDegeneracy."""
    det = coeffs.det
    if abs(det) < thresholds.degeneracy * (coeffs.det_scale + 1e-300):
        raise PureStateDegeneracy(
            f"onsite-energy system is degenerate: det={det:.3e}, scale={coeffs.det_scale:.3e}",
            det=det,
        )
    eps1 = (coeffs.beta_i * coeffs.omega_r - coeffs.beta_r * coeffs.omega_i) / det
    eps4 = -(coeffs.alpha_i * coeffs.omega_r - coeffs.alpha_r * coeffs.omega_i) / det
    return eps1, eps4


def onsite_controls(moments: DensityMoments, params: ControlParams, u: float = None,
                    thresholds=DEFAULT_THRESHOLDS):
    """Onsite energies for the tunnelling rates already stored in ``params``."""
    if u is None:
        u = params.u
    coeffs = coefficient_assembly(moments, params.j12, params.j34, u, j23=params.j23)
    return solve_onsite(coeffs, thresholds)


def verify_requirement(moments: DensityMoments, j12: float, j34: float) -> complex:
    """Residual of ``-J12 sigma13 + J34 sigma24 = 0``."""
    s = moments.sigma1
    return complex(-j12 * s[W1, W3] + j34 * s[W2, W4])


def compute_controls(moments: DensityMoments, gamma: float, j23: float, u: float,
                     thresholds=DEFAULT_THRESHOLDS) -> ControlParams:
    """Full feedback evaluation: tunnelling rates, then onsite energies."""
    j12, j34 = tunnelling_controls(moments, gamma, thresholds)
    eps1, eps4 = solve_onsite(coefficient_assembly(moments, j12, j34, u, j23=j23), thresholds)
    params = ControlParams(j12, j34, eps1, eps4, j23=j23, u=u)
    limit = thresholds.control_max * j23
    worst = max(abs(j12), abs(j34), abs(eps1), abs(eps4))
    if not math.isfinite(worst) or worst > limit:
        raise CollapseDetected(
            f"control parameters diverged: J12={j12:.3e}, J34={j34:.3e}, "
            f"eps1={eps1:.3e}, eps4={eps4:.3e} (limit {limit:.1e})"
        )
    return params


def requirement_rate(moments: DensityMoments, params: ControlParams, gamma: float) -> complex:
    """Time derivative of the requirement residual along the first-order flow.

    Independent of the alpha/beta/Omega route: differentiates
    ``-J12 sigma13 + J34 sigma24`` directly with the controls treated as
    functions of the moments. Vanishes when the onsite energies solve the
    linear system.
    """
    s = moments.sigma1
    ds = bbgky_first_order_rhs(moments, params)
    n2, n3 = s[W2, W2].real, s[W3, W3].real
    jt12, jt34 = 2 * s[W1, W2].imag, 2 * s[W3, W4].imag
    dj12 = 2 * gamma * (ds[W2, W2].real * jt12 - n2 * 2 * ds[W1, W2].imag) / jt12**2
    dj34 = 2 * gamma * (ds[W3, W3].real * jt34 - n3 * 2 * ds[W3, W4].imag) / jt34**2
    return complex(
        -dj12 * s[W1, W3] - params.j12 * ds[W1, W3] + dj34 * s[W2, W4] + params.j34 * ds[W2, W4]
    )


def linear_system_from_rate(moments: DensityMoments, j12: float, j34: float, u: float,
                            gamma: float, j23: float = 1.0) -> LinearSystemCoeffs:
    """Recover the 2x2 system from :func:`requirement_rate`, which is affine in
    ``(eps1, eps4)``: rate = A eps1 + B eps4 - C with complex A, B, C."""
    def rate(e1, e4):
        return requirement_rate(moments, ControlParams(j12, j34, e1, e4, j23=j23, u=u), gamma)

    base = rate(0.0, 0.0)
    a = rate(1.0, 0.0) - base
    b = rate(0.0, 1.0) - base
    return LinearSystemCoeffs(a.real, b.real, -base.real, a.imag, b.imag, -base.imag)
