"""Galerkin-truncated, regularized flows and their time integration.

The state is the coefficient matrix ``c`` (``n x 3``) of
``u = sum_i c_i f_i`` in the Neumann/periodic eigenbasis.  Its equation is

    c' = -eps (lambda - 1) c - P_n N(u)

with ``N(u) = alpha J(u) x (J(u) x h) + J(u) x h`` for the LLG flow and
``N(u) = J(u) x (J(u) x h)`` for the heat flows, ``J`` the radial clip.  The
nonlinearity is evaluated pointwise on the collocation grid and projected back.
"""

import math
import warnings
from dataclasses import dataclass, field as dc_field, replace
from enum import Enum

import numpy as np

from . import _kernels
from .diagnostics import EnergyLedger, record
from .errors import NewtonDiverged, NotUnitLength, StepRejected, ValidationError
from .grid import Field, ModeCoefficients, build_basis
from .physics import FlowKind, effective_field_arrays

TOL_MAX = 1e-3


class Scheme(str, Enum):
    RK4 = "rk4"
    IMPLICIT_MIDPOINT = "implicit_midpoint"


@dataclass(frozen=True)
class StepperConfig:
    scheme: Scheme = Scheme.RK4
    dt: float = 1e-3
    newton_tol: float = 1e-13
    newton_max_iter: int = 500

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}", key="dt")
        if not self.newton_tol > 0:
            raise ValidationError("newton_tol must be positive", key="newton_tol")
        if self.newton_max_iter < 1:
            raise ValidationError("newton_max_iter must be >= 1", key="newton_max_iter")


class Dynamics:
    """Right-hand side of the coefficient ODE for one basis and model."""

    def __init__(self, basis, cfg, kernel=None):
        cfg.check_domain(basis.domain)
        self.basis = basis
        self.cfg = cfg
        self.domain = basis.domain
        self.current = cfg.current_on(basis.domain)
        if cfg.demag and kernel is None:
            from .demag import kernel_for
            kernel = kernel_for(basis.domain)
        self.kernel = kernel
        self.lam1 = basis.laplace_eigenvalues[:, None]
        # steps pushing max |u| past this are rejected; raised by initial_state
        # when the projected data already overshoots the sphere
        self.peak_limit = 1.0 + 10.0 * TOL_MAX
        self.llg = cfg.flow is FlowKind.LLG_SPIN_CURRENT

    def fields(self, c):
        b = self.basis
        return b.synthesize_array(c), b.synthesize_array(-self.lam1 * c), b.gradient_array(c)

    def effective(self, c, t):
        u, lap, grad = self.fields(c)
        return u, lap, grad, effective_field_arrays(u, lap, grad, self.cfg, t, self.current, self.kernel)

    def nonlinear(self, u, h):
        """Pointwise torque before projection."""
        if self.llg:
            return _kernels.torque(u, h, self.cfg.alpha, 1.0)
        return _kernels.torque(u, h, 1.0, 0.0)

    def rhs(self, c, t):
        u, _, _, h = self.effective(c, t)
        return -self.cfg.epsilon * self.lam1 * c - self.basis.analyze_array(self.nonlinear(u, h))

    @property
    def shift(self):
        """Diagonal stiffness absorbed into the implicit solve."""
        kappa = self.cfg.alpha if self.llg else 1.0
        return (self.cfg.epsilon + kappa) * self.lam1

    def cfl_limit(self, c=0.5):
        """``c / (eps * lambda_max + ||h|| estimate)``.

        The field estimate is the Laplacian's top eigenvalue times the torque
        gain, plus the current's advection speed on the top mode and a unit
        allowance each for anisotropy and demag.
        """
        lam_max = float(self.basis.laplace_eigenvalues.max())
        gain = self.cfg.gamma if self.llg else 1.0
        h_est = gain * lam_max + 2.0 + (1.0 if self.cfg.demag else 0.0)
        if self.cfg.beta and not self.current.is_zero:
            h_est += gain * self.cfg.beta * self.current.sup_norm(0.0) * math.sqrt(lam_max)
        return c / (self.cfg.epsilon * (lam_max + 1.0) + h_est)


@dataclass
class GalerkinState:
    coeffs: ModeCoefficients
    time: float
    config: object
    basis: object
    system: Dynamics = dc_field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.time < 0 or not np.isfinite(self.time):
            raise ValueError("time must be finite and non-negative")
        if self.system is None:
            self.system = Dynamics(self.basis, self.config)

    @property
    def c(self):
        return self.coeffs.coeffs

    def field(self):
        return Field(self.basis.domain, self.basis.synthesize_array(self.c))

    def with_coeffs(self, c, t):
        return GalerkinState(ModeCoefficients(self.basis, c), t, self.config, self.basis, self.system)


def _check_unit(u, tol):
    mod = np.sqrt(np.einsum("i...,i...->...", u, u))
    dev = float(np.max(np.abs(mod - 1.0)))
    if dev > tol:
        raise NotUnitLength(f"initial data must be unit length; max deviation {dev:.3e}")


def initial_state(u0, basis, cfg, kernel=None, unit_tol=1e-6):
    """Project unit-length initial data onto the basis."""
    _check_unit(u0.values, unit_tol)
    system = Dynamics(basis, cfg, kernel)
    coeffs = ModeCoefficients(basis, basis.analyze_array(u0.values))
    peak0 = _kernels.max_modulus(basis.synthesize_array(coeffs.coeffs))
    system.peak_limit = max(1.0, peak0) + 10.0 * TOL_MAX
    return GalerkinState(coeffs, 0.0, cfg, basis, system)


def rhs(state):
    return ModeCoefficients(state.basis, state.system.rhs(state.c, state.time))


# --------------------------------------------------------------------------
# steppers
# --------------------------------------------------------------------------

@dataclass
class StepInfo:
    """Byproducts of one step used by the ledger."""

    grad_step: float
    rhs_start: np.ndarray
    rhs_end: np.ndarray = None
    iterations: int = 0


def _rk4(system, c, t, dt, k1=None):
    k1 = system.rhs(c, t) if k1 is None else k1
    k2 = system.rhs(c + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = system.rhs(c + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = system.rhs(c + dt * k3, t + dt)
    return c + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), k1


def _grad_sq(system, c):
    return float(np.sum(system.lam1 * c * c))


def _implicit_midpoint(system, c, t, dt, tol, max_iter):
    """Solve ``c1 = c + dt F((c + c1)/2)`` by a preconditioned fixed point.

    The diagonal stiffness ``-shift * c`` is treated exactly, only the
    remainder is iterated.  Returns ``(c1, cm, iterations)``.
    """
    shift = system.shift
    tm = t + 0.5 * dt
    lhs = 1.0 + 0.5 * dt * shift
    rhs_lin = (1.0 - 0.5 * dt * shift) * c
    scale = max(1.0, float(np.max(np.abs(c))))
    c1 = c + dt * system.rhs(c, t)
    for it in range(1, max_iter + 1):
        cm = 0.5 * (c + c1)
        G = system.rhs(cm, tm) + shift * cm
        new = (rhs_lin + dt * G) / lhs
        if not np.all(np.isfinite(new)):
            raise NewtonDiverged(f"implicit midpoint iterate became non-finite at t={t}")
        delta = float(np.max(np.abs(new - c1)))
        c1 = new
        if delta <= tol * scale:
            return c1, 0.5 * (c + c1), it
    raise NewtonDiverged(
        f"implicit midpoint did not converge in {max_iter} iterations at t={t} "
        f"(last update {delta:.2e}); reduce dt"
    )


def _advance(state, stepper, dt, k1=None):
    system = state.system
    c, t = state.c, state.time
    if stepper.scheme is Scheme.RK4:
        c1, k1 = _rk4(system, c, t, dt, k1)
        k_end = system.rhs(c1, t + dt)
        # Simpson on the cubic Hermite interpolant through both ends
        cm = 0.5 * (c + c1) + dt / 8.0 * (k1 - k_end)
        g = (_grad_sq(system, c) + 4.0 * _grad_sq(system, cm) + _grad_sq(system, c1)) / 6.0
        info = StepInfo(g, k1, k_end)
    else:
        c1, cm, its = _implicit_midpoint(system, c, t, dt, stepper.newton_tol, stepper.newton_max_iter)
        info = StepInfo(_grad_sq(system, cm), k1, None, its)
    new = state.with_coeffs(c1, t + dt)
    peak = _kernels.max_modulus(new.basis.synthesize_array(c1))
    if not np.isfinite(peak) or peak > system.peak_limit:
        raise StepRejected(
            f"max |u| = {peak:.6f} exceeds {system.peak_limit:.6f} after step to t={t + dt:.6g}; dt too large"
        )
    return new, info


def step(state, stepper):
    """One step of size ``stepper.dt``."""
    return _advance(state, stepper, stepper.dt)[0]


# --------------------------------------------------------------------------
# evolution
# --------------------------------------------------------------------------

@dataclass
class RunOutput:
    """Sampled trajectory: times, coefficients and their time derivatives."""

    basis: object
    config: object
    stepper: StepperConfig
    times: np.ndarray
    coeffs: np.ndarray
    rates: np.ndarray
    ledger: EnergyLedger
    initial_l2_sq: float = 0.0

    @property
    def final(self):
        return self.coeffs[-1]

    def field_at(self, k):
        return Field(self.basis.domain, self.basis.synthesize_array(self.coeffs[k]))

    def coeffs_at(self, t):
        """Cubic Hermite interpolation from stored values and rates."""
        times = self.times
        if t <= times[0]:
            return self.coeffs[0]
        if t >= times[-1]:
            return self.coeffs[-1]
        k = int(np.searchsorted(times, t, side="right") - 1)
        h = times[k + 1] - times[k]
        s = (t - times[k]) / h
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2
        return (h00 * self.coeffs[k] + h10 * h * self.rates[k]
                + h01 * self.coeffs[k + 1] + h11 * h * self.rates[k + 1])


def check_cfl(system, stepper, warn=True):
    limit = system.cfl_limit()
    if warn and stepper.dt > limit:
        warnings.warn(
            f"dt={stepper.dt:g} exceeds the CFL probe limit {limit:.3g}", RuntimeWarning, stacklevel=3
        )
    return limit


def evolve(state, stepper, T, ledger=None, history=None, warn=True, callback=None):
    """March to ``T``, appending one ledger row per step.

    The step is shortened uniformly so that the last one lands on ``T``.
    ``history``, if given, is a list that receives ``(t, c, c')`` per step;
    ``callback(i, state)`` is called after step ``i`` (1-based).
    """
    if ledger is None:
        ledger = EnergyLedger()
    if T < state.time:
        raise ValueError(f"T={T} precedes the state time {state.time}")
    system = state.system
    if stepper.scheme is Scheme.RK4:
        check_cfl(system, stepper, warn)
    k = system.rhs(state.c, state.time)
    if not ledger.rows:
        record(state, ledger, rate=k)
        if history is not None:
            history.append((state.time, state.c.copy(), k))
    span = T - state.time
    nsteps = int(math.ceil(span / stepper.dt - 1e-9)) if span > 0 else 0
    if nsteps == 0:
        return state
    t0 = state.time
    dt = span / nsteps
    for i in range(nsteps):
        new, info = _advance(state, stepper, dt, k)
        new.time = t0 + (i + 1) * dt if i < nsteps - 1 else T
        k = info.rhs_end if info.rhs_end is not None else system.rhs(new.c, new.time)
        record(new, ledger, rate=k, grad_step=info.grad_step)
        if history is not None:
            history.append((new.time, new.c.copy(), k))
        state = new
        if callback is not None:
            callback(i + 1, state)
    return state


def run(u0, basis, cfg, stepper, T, kernel=None, warn=True):
    """Project ``u0``, evolve to ``T`` and keep every step."""
    state = initial_state(u0, basis, cfg, kernel)
    ledger = EnergyLedger(meta={"epsilon": cfg.epsilon, "alpha": cfg.alpha, "beta": cfg.beta,
                                "n": basis.n, "dt": stepper.dt, "scheme": stepper.scheme.value,
                                "flow": cfg.flow.value})
    history = []
    evolve(state, stepper, T, ledger, history, warn)
    times = np.array([h[0] for h in history])
    coeffs = np.stack([h[1] for h in history])
    rates = np.stack([h[2] for h in history])
    return RunOutput(basis, cfg, stepper, times, coeffs, rates, ledger,
                     initial_l2_sq=float(np.sum(u0.values ** 2) * basis.domain.cell_volume))


# --------------------------------------------------------------------------
# continuation in (n, eps)
# --------------------------------------------------------------------------

@dataclass
class ContinuationReport:
    runs: list
    schedule: list
    cauchy: list          # ((i, j), ||u_i - u_j||_{L2(space-time)})
    unit_defects: list    # final-time mean (1 - |u|^2)
    vol_defects: list     # |int |u(T)|^2 + 2 eps int int |grad u|^2 - Vol| / Vol


def _normalize_schedule(schedule, stepper):
    entries = []
    for item in schedule:
        item = tuple(item)
        if len(item) not in (2, 3):
            raise ValidationError(f"schedule entries are (n, eps[, dt]), got {item}", key="schedule")
        n, eps = int(item[0]), float(item[1])
        dt = float(item[2]) if len(item) == 3 else stepper.dt
        entries.append((n, eps, dt))
    if not entries:
        raise ValidationError("schedule must not be empty", key="schedule")
    for (n0, e0, _), (n1, e1, _) in zip(entries, entries[1:]):
        if n1 < n0 or e1 > e0:
            raise ValidationError("schedule needs n nondecreasing and eps nonincreasing", key="schedule")
    return entries


def vol_identity_defect(out):
    """``|int |u(T)|^2 + 2 eps sum dt <|grad u|^2> - Vol| / Vol`` from a run."""
    led = out.ledger
    t = led.column("t")
    g = led.column("grad_l2_sq_step")
    dissipated = 2.0 * out.config.epsilon * float(np.sum(np.diff(t) * g[1:]))
    vol = out.basis.domain.volume
    return abs(led.column("l2_sq")[-1] + dissipated - vol) / vol


def unit_defect(out):
    u = out.basis.synthesize_array(out.final)
    return float(np.mean(1.0 - np.einsum("i...,i...->...", u, u)))


def spacetime_distance(a, b, samples=41):
    """``||u_a - u_b||_{L2(Omega x [0, T])}`` on the shared grid (trapezoid in t)."""
    T = min(a.times[-1], b.times[-1])
    ts = np.linspace(0.0, T, samples)
    vol = a.basis.domain.cell_volume
    vals = []
    for t in ts:
        ua = a.basis.synthesize_array(a.coeffs_at(t))
        ub = b.basis.synthesize_array(b.coeffs_at(t))
        vals.append(float(np.sum((ua - ub) ** 2) * vol))
    return math.sqrt(float(np.trapezoid(vals, ts)))


def summarize(runs, schedule):
    cauchy = [((i, j), spacetime_distance(runs[i], runs[j]))
              for i in range(len(runs)) for j in range(i + 1, len(runs))]
    return ContinuationReport(runs, schedule, cauchy,
                              [unit_defect(r) for r in runs],
                              [vol_identity_defect(r) for r in runs])


def continuation(u0, cfg, schedule, stepper, T, warn=True):
    """Run every ``(n, eps[, dt])`` entry from the same initial data."""
    entries = _normalize_schedule(schedule, stepper)
    runs = []
    for n, eps, dt in entries:
        basis = build_basis(u0.domain, n)
        runs.append(run(u0, basis, replace(cfg, epsilon=eps), replace(stepper, dt=dt), T, warn=warn))
    return summarize(runs, entries)
