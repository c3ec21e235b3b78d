"""Feedback-controlled Schroedinger evolution of the four-well chain.

Controls are recomputed from the live state inside every right-hand-side
evaluation, so the controlled flow ``d psi/dt = -i H(psi) psi`` is autonomous.
It is integrated with an embedded Dormand-Prince 5(4) pair. A stage whose
state makes the controls undefined (vanishing reservoir current, singular
onsite system) counts as a rejected step; the run ends once the step size
needed to avoid it falls below ``min_step``.
"""

from __future__ import annotations

import logging
import math
import time as _time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import __version__
from .control import DEFAULT_THRESHOLDS, Thresholds, compute_controls
from .errors import (
    CollapseDetected,
    ConfigError,
    ConstraintSolveError,
    ControlDivergedError,
    PTFourWellError,
    PureStateDegeneracy,
)
from .fock import FockBasis, ManyBodyState, build_basis
from .hamiltonian import ControlParams, HamiltonianTerms
from .observables import DerivedFirstOrder, derived_first_order, moments_from_amplitudes, one_body_images
from .stateprep import (
    ConstraintResiduals,
    PerturbationSpec,
    constraint_residuals,
    mean_field_seed,
    perturb,
    product_state,
    project_constraints,
)
from .twomode import target_from

log = logging.getLogger(__name__)

# Two-particle elements kept in every sample (0-based wells): the inner-well
# set entering the first-order equation of sigma_23.
RECORDED_SIGMA2 = ((1, 1, 1, 2), (1, 2, 2, 2), (1, 1, 1, 1), (2, 2, 2, 2))


@dataclass(frozen=True)
class RunConfig:
    n_total: int = 22
    gamma: float = 0.5
    j: float = 1.0
    u: float = 0.1
    d: float = 0.008
    seed: int = 0
    n: float = 5.0
    n1_0: float = 7.0
    n4_0: float = 5.0
    dt_initial: float = 1e-3
    t_max: float = 10.0
    sample_interval: float = 0.01
    collapse_threshold: float = DEFAULT_THRESHOLDS.current
    control_max: float = DEFAULT_THRESHOLDS.control_max
    degeneracy_threshold: float = DEFAULT_THRESHOLDS.degeneracy
    rtol: float = 1e-10
    atol: float = 1e-12
    min_step: float = 1e-9
    constraint_tol: float = 1e-10
    # Exploration switches; the defaults give the constrained initial state.
    complex_multipliers: bool = False
    project: bool = True

    @property
    def thresholds(self) -> Thresholds:
        return Thresholds(self.collapse_threshold, self.control_max, self.degeneracy_threshold)

    @property
    def g(self) -> float:
        """Macroscopic interaction of the matching two-mode model."""
        return self.u * (self.n_total - 1)

    def problems(self):
        out = []
        if self.n_total < 1:
            out.append("n_total must be >= 1")
        if self.j <= 0:
            out.append("j must be positive")
        if self.gamma < 0:
            out.append("gamma must be >= 0")
        if self.gamma > self.j:
            out.append(f"gamma exceeds j ({self.gamma} > {self.j})")
        if self.u < 0:
            out.append("u must be >= 0")
        if self.d < 0:
            out.append("d must be >= 0")
        if self.n <= 0:
            out.append("n must be positive")
        if self.n1_0 < 0 or self.n4_0 < 0:
            out.append("reservoir occupations n1_0, n4_0 must be >= 0")
        if abs(self.n1_0 + self.n4_0 + 2 * self.n - self.n_total) > 1e-9:
            out.append(
                f"n1_0 + n4_0 + 2 n = {self.n1_0 + self.n4_0 + 2 * self.n} differs from "
                f"n_total = {self.n_total}"
            )
        if self.t_max < 0:
            out.append("t_max must be >= 0")
        for name in ("dt_initial", "sample_interval", "rtol", "atol", "min_step",
                     "collapse_threshold", "control_max", "degeneracy_threshold",
                     "constraint_tol"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be positive")
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def as_dict(self):
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class Sample:
    t: float
    params: ControlParams
    derived: DerivedFirstOrder
    sigma2: dict
    norm: float


@dataclass
class RunRecord:
    config: RunConfig
    samples: list = field(default_factory=list)
    termination: str = "completed"
    termination_time: float = None
    message: str = ""
    constraint_residuals: list = None
    initial_purity2: float = None
    initial_purity4: float = None
    renormalizations: int = 0
    max_norm_drift: float = 0.0
    max_number_drift: float = 0.0
    steps: int = 0
    rejected: int = 0
    wall_time: float = 0.0
    version: str = __version__

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    def column(self, name: str) -> np.ndarray:
        return np.array([sample_row(s)[name] for s in self.samples])


def sample_row(sample: Sample) -> dict:
    """Flat view of a sample keyed by the time-series column names."""
    der, p = sample.derived, sample.params
    occ = der.occupations
    return {
        "t": sample.t,
        "n1": occ[0], "n2": occ[1], "n3": occ[2], "n4": occ[3],
        "jt12": der.currents[0, 1], "jt23": der.currents[1, 2], "jt34": der.currents[2, 3],
        "c23": der.correlations[1, 2],
        "J12": p.j12, "J34": p.j34, "eps1": p.eps1, "eps4": p.eps4,
        "P2": der.purity2, "P4": der.purity4,
        "norm": sample.norm,
    }


class ControlledFlow:
    """Right-hand side of the feedback-controlled Schroedinger equation."""

    def __init__(self, basis: FockBasis, gamma: float, j23: float, u: float,
                 thresholds: Thresholds = DEFAULT_THRESHOLDS):
        self.basis = basis
        self.gamma = gamma
        self.j23 = j23
        self.u = u
        self.thresholds = thresholds
        self.terms = HamiltonianTerms(basis)
        self._interaction = u * self.terms.pair_interaction
        self._occ = basis.occupations
        self.evaluations = 0

    def controls(self, psi: np.ndarray, images=None) -> ControlParams:
        moments = moments_from_amplitudes(self.basis, psi, images)
        return compute_controls(moments, self.gamma, self.j23, self.u, self.thresholds)

    def __call__(self, psi: np.ndarray):
        """Return ``(d psi/dt, controls used)``."""
        self.evaluations += 1
        if not np.all(np.isfinite(psi)):
            raise ControlDivergedError("state vector is not finite")
        images = one_body_images(self.basis, psi)
        params = self.controls(psi, images)
        diag = self._interaction + self._occ @ params.onsite()
        h_psi = diag * psi
        # Bond (m, m') contributes -J (a_m^dag a_m' + a_m'^dag a_m) psi.
        h_psi -= params.j12 * (images[0, 1] + images[1, 0])
        h_psi -= params.j23 * (images[1, 2] + images[2, 1])
        h_psi -= params.j34 * (images[2, 3] + images[3, 2])
        return -1j * h_psi, params


# Dormand-Prince 5(4) tableau.
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = np.array(_A[6] + (0.0,))
_B4 = np.array((5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40))
_E = _B5 - _B4

_SAFETY, _MIN_FACTOR, _MAX_FACTOR = 0.9, 0.2, 5.0

# Failures that make a trial stage unusable; the step is retried smaller.
_STAGE_FAILURES = (CollapseDetected, PureStateDegeneracy, ControlDivergedError)


def dp45_step(flow, psi, f0, h):
    """One Dormand-Prince trial step.

    Returns ``(psi_new, f_new, params_new, error_vector)``; ``f_new`` is the
    right-hand side at ``psi_new`` (first-same-as-last).
    """
    k = [f0]
    params = None
    for i in range(1, 7):
        y = psi.copy()
        for a, kj in zip(_A[i], k):
            if a != 0.0:
                y += (h * a) * kj
        f, params = flow(y)
        k.append(f)
    psi_new = y  # stage 7 sits at the 5th-order solution
    err = h * sum(e * kj for e, kj in zip(_E, k) if e != 0.0)
    return psi_new, k[6], params, err


def step_controlled(flow: ControlledFlow, psi: np.ndarray, dt: float):
    """Advance one fixed step ``dt`` (no error control). Returns ``(psi', controls at psi)``."""
    f0, params = flow(psi)
    psi_new, _, _, _ = dp45_step(flow, psi, f0, dt)
    return psi_new, params


def prepare_initial_state(config: RunConfig, basis: FockBasis = None):
    """Product state, random deflection and constraint projection.

    Returns ``(state, ConstraintResiduals)``.
    """
    if basis is None:
        basis = build_basis(config.n_total, 4)
    target = target_from(config.gamma, config.j, config.n)
    seed = mean_field_seed(target, config.n1_0, config.n4_0)
    pure = product_state(seed, basis)
    spec = PerturbationSpec(d=config.d, seed=config.seed,
                            complex_multipliers=config.complex_multipliers)
    deflected = perturb(pure, spec)
    if not config.project:
        sigma1 = one_body_images(basis, deflected.amplitudes) @ deflected.amplitudes.conj()
        return deflected, ConstraintResiduals(constraint_residuals(sigma1, config.gamma, config.j))
    return project_constraints(deflected, target, tol=config.constraint_tol,
                               complex_multipliers=config.complex_multipliers)


class _Integrator:
    def __init__(self, flow, psi, config, record):
        self.flow = flow
        self.psi = psi
        self.config = config
        self.record = record
        self.t = 0.0
        self.f, self.params = flow(psi)
        self.h = config.dt_initial
        self.n_total = flow.basis.n_total

    def _error_norm(self, err, psi_new):
        cfg = self.config
        scale = cfg.atol + cfg.rtol * max(np.linalg.norm(self.psi), np.linalg.norm(psi_new))
        return float(np.linalg.norm(err)) / scale

    def advance(self, t_target):
        """Integrate until ``t_target``; raises a stage failure if the step
        size needed to continue drops below ``min_step``."""
        cfg = self.config
        while self.t < t_target:
            remaining = t_target - self.t
            clipped = self.h >= remaining
            h = remaining if clipped else self.h
            try:
                psi_new, f_new, params_new, err = dp45_step(self.flow, self.psi, self.f, h)
                err_norm = self._error_norm(err, psi_new)
            except _STAGE_FAILURES as exc:
                self.record.rejected += 1
                if h <= cfg.min_step:
                    exc.time = self.t
                    raise
                self.h = max(0.25 * h, cfg.min_step)
                continue
            if err_norm > 1.0 or not math.isfinite(err_norm):
                self.record.rejected += 1
                if h <= cfg.min_step:
                    raise CollapseDetected(
                        f"step size fell below {cfg.min_step:g} at t={self.t:.6g}", time=self.t
                    )
                factor = _SAFETY * err_norm ** -0.2 if math.isfinite(err_norm) else _MIN_FACTOR
                self.h = max(h * max(_MIN_FACTOR, factor), cfg.min_step)
                continue
            nrm = float(np.linalg.norm(psi_new))
            drift = abs(nrm - 1.0)
            self.record.max_norm_drift = max(self.record.max_norm_drift, drift)
            if drift > 1e-12:
                psi_new = psi_new / nrm
                f_new, params_new = self.flow(psi_new)
                self.record.renormalizations += 1
                log.debug("renormalised at t=%.6g (drift %.2e)", self.t + h, drift)
            if drift > 1e-9:
                raise ControlDivergedError(f"norm drift {drift:.2e} in one step at t={self.t:.6g}")
            self.t = t_target if clipped else self.t + h
            self.psi, self.f, self.params = psi_new, f_new, params_new
            self.record.steps += 1
            factor = _MAX_FACTOR if err_norm == 0 else min(_MAX_FACTOR, _SAFETY * err_norm ** -0.2)
            proposal = h * max(_MIN_FACTOR, factor)
            # A step shortened to hit a sample time says nothing about the natural size.
            self.h = max(self.h, proposal) if clipped else proposal
            if self.params_diverged(self.params):
                raise CollapseDetected(
                    f"controls exceeded {cfg.control_max:g} J at t={self.t:.6g}", time=self.t
                )

    def params_diverged(self, params):
        limit = self.config.control_max * self.config.j
        return max(abs(params.j12), abs(params.j34), abs(params.eps1), abs(params.eps4)) > limit


def _make_sample(t, psi, params, basis):
    images = one_body_images(basis, psi)
    sigma1 = images @ psi.conj()
    sigma2 = {idx: complex(np.vdot(images[idx[1], idx[0]], images[idx[2], idx[3]]))
              for idx in RECORDED_SIGMA2}
    return Sample(
        t=t,
        params=params,
        derived=derived_first_order(sigma1),
        sigma2=sigma2,
        norm=float(np.linalg.norm(psi)),
    )


def run(config: RunConfig, initial_state: ManyBodyState = None) -> RunRecord:
    """State preparation followed by controlled integration up to ``t_max``.

    Module errors end the run with a termination status; the samples gathered
    so far are kept.
    """
    config.validate()
    started = _time.perf_counter()
    record = RunRecord(config=config)
    basis = initial_state.basis if initial_state is not None else build_basis(config.n_total, 4)
    try:
        if initial_state is None:
            state, residuals = prepare_initial_state(config, basis)
        else:
            state = initial_state.normalized()
            sigma1 = one_body_images(basis, state.amplitudes) @ state.amplitudes.conj()
            residuals = ConstraintResiduals(constraint_residuals(sigma1, config.gamma, config.j))
    except ConstraintSolveError as exc:
        record.termination = "error"
        record.termination_time = 0.0
        record.message = str(exc)
        record.constraint_residuals = (
            [float(v) for v in exc.residuals] if exc.residuals is not None else None
        )
        record.wall_time = _time.perf_counter() - started
        return record
    record.constraint_residuals = residuals.as_list()
    sigma1 = one_body_images(basis, state.amplitudes) @ state.amplitudes.conj()
    initial = derived_first_order(sigma1)
    record.initial_purity2, record.initial_purity4 = initial.purity2, initial.purity4

    flow = ControlledFlow(basis, config.gamma, config.j, config.u, config.thresholds)
    psi = state.amplitudes.copy()
    try:
        integ = _Integrator(flow, psi, config, record)
    except (CollapseDetected, ControlDivergedError, PureStateDegeneracy) as exc:
        # Keep the observables of the initial state; its controls are undefined.
        nan = float("nan")
        undefined = ControlParams(nan, nan, nan, nan, j23=config.j, u=config.u)
        record.samples.append(_make_sample(0.0, psi, undefined, basis))
        status = "degenerate" if isinstance(exc, PureStateDegeneracy) else "collapsed"
        return _finish(record, status, 0.0, exc, started)

    number_op = basis.occupations.sum(axis=1)
    record.samples.append(_make_sample(0.0, integ.psi, integ.params, basis))
    n_samples = int(math.floor(config.t_max / config.sample_interval + 1e-9))
    try:
        for i in range(1, n_samples + 1):
            integ.advance(i * config.sample_interval)
            record.samples.append(_make_sample(integ.t, integ.psi, integ.params, basis))
            _track_number(record, integ.psi, number_op, basis.n_total)
        if integ.t < config.t_max:
            integ.advance(config.t_max)
            record.samples.append(_make_sample(integ.t, integ.psi, integ.params, basis))
    except CollapseDetected as exc:
        _append_final(record, integ, basis)
        return _finish(record, "collapsed", integ.t, exc, started)
    except PureStateDegeneracy as exc:
        _append_final(record, integ, basis)
        return _finish(record, "degenerate", integ.t, exc, started)
    except PTFourWellError as exc:
        _append_final(record, integ, basis)
        return _finish(record, "error", integ.t, exc, started)
    record.termination_time = integ.t
    record.wall_time = _time.perf_counter() - started
    return record


def _track_number(record, psi, number_op, n_total):
    p = np.abs(psi) ** 2
    drift = abs(float(p @ number_op / p.sum()) - n_total)
    record.max_number_drift = max(record.max_number_drift, drift)


def _append_final(record, integ, basis):
    if record.samples and integ.t <= record.samples[-1].t:
        return
    record.samples.append(_make_sample(integ.t, integ.psi, integ.params, basis))


def _finish(record, status, t, exc, started):
    record.termination = status
    record.termination_time = t
    record.message = str(exc)
    record.wall_time = _time.perf_counter() - started
    log.info("run terminated (%s) at t=%.6g: %s", status, t, exc)
    return record


def collapse_time(record: RunRecord):
    return record.termination_time if record.termination == "collapsed" else None


def with_overrides(config: RunConfig, **changes) -> RunConfig:
    return replace(config, **changes)
