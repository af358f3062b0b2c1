"""Model ingredients: clipping, extended anisotropy, spin current, fields, energies."""

from dataclasses import dataclass, field as dc_field
from enum import Enum
from typing import Callable, NamedTuple

import numpy as np

from . import _kernels
from .errors import DomainMismatch, NotUnitLength, OutsideBall, SeriesTooShort, ValidationError
from .expr import POTENTIAL_VARIABLES, Expression, field_variables
from .grid import Boundary, Field, full_transform


class FlowKind(str, Enum):
    LLG_SPIN_CURRENT = "llg_spin_current"
    HEAT_FLOW_BOUNDED = "heat_flow_bounded"
    HEAT_FLOW_TORUS = "heat_flow_torus"


# --------------------------------------------------------------------------
# clipping
# --------------------------------------------------------------------------

def clip(u):
    """Pointwise ``u / max(1, |u|)``; accepts a Field or a ``(3, ...)`` array."""
    if isinstance(u, Field):
        return Field(u.domain, _kernels.clip(u.values))
    return _kernels.clip(u)


# --------------------------------------------------------------------------
# anisotropy
# --------------------------------------------------------------------------

def smoothstep_cutoff(delta0):
    """Quintic smoothstep rising from 0 at ``2 delta0`` to 1 at 1 (C2 at both ends).

    Returns a function ``s -> (zeta(s), zeta'(s))``.
    """
    lo = 2.0 * delta0
    width = 1.0 - lo

    def zeta(s):
        tau = np.clip((np.asarray(s, dtype=float) - lo) / width, 0.0, 1.0)
        value = tau ** 3 * (10.0 - 15.0 * tau + 6.0 * tau ** 2)
        slope = 30.0 * tau ** 2 * (1.0 - tau) ** 2 / width
        return value, slope

    return zeta


def _uniaxial_phi(z):
    return z[1] ** 2 + z[2] ** 2


def _uniaxial_grad(z):
    return np.stack((np.zeros_like(z[0]), 2.0 * z[1], 2.0 * z[2]))


def _zero_phi(z):
    return np.zeros_like(z[0])


def _zero_grad(z):
    return np.zeros_like(z)


@dataclass(frozen=True)
class AnisotropyPotential:
    """Energy density ``phi`` on the sphere and its gradient, plus the cutoff
    used to extend it to the closed unit ball.

    ``phi`` maps a ``(3, ...)`` array to ``(...)``; ``grad_phi`` maps it to
    ``(3, ...)``.
    """

    phi: Callable
    grad_phi: Callable
    delta0: float = 0.25
    zeta: Callable = None
    name: str = "custom"
    source: tuple = ()

    def __post_init__(self):
        if not 0.0 < self.delta0 < 0.5:
            raise ValidationError(f"delta0 must lie in (0, 1/2), got {self.delta0}", key="delta0")
        if self.zeta is None:
            object.__setattr__(self, "zeta", smoothstep_cutoff(self.delta0))

    @classmethod
    def uniaxial(cls, delta0=0.25):
        """Easy axis along x1: ``phi(u) = u2^2 + u3^2``."""
        return cls(_uniaxial_phi, _uniaxial_grad, delta0, name="uniaxial")

    @classmethod
    def zero(cls, delta0=0.25):
        return cls(_zero_phi, _zero_grad, delta0, name="zero")

    @classmethod
    def from_expressions(cls, value, gradient, delta0=0.25, check=True):
        """Plugin potential from expression strings in ``z1, z2, z3``.

        The gradient is checked against central differences of the value at
        random points of the sphere; a mismatch raises ValidationError.
        """
        if len(gradient) != 3:
            raise ValidationError("grad_phi needs exactly three expressions", key="grad_phi")
        val = Expression(value, POTENTIAL_VARIABLES)
        grads = [Expression(g, POTENTIAL_VARIABLES) for g in gradient]

        def phi(z):
            z = np.asarray(z, dtype=float)
            return np.broadcast_to(val(z1=z[0], z2=z[1], z3=z[2]), z.shape[1:]).astype(float)

        def grad_phi(z):
            z = np.asarray(z, dtype=float)
            return np.stack(
                [np.broadcast_to(g(z1=z[0], z2=z[1], z3=z[2]), z.shape[1:]) for g in grads]
            ).astype(float)

        pot = cls(phi, grad_phi, delta0, name="expression", source=(str(value), tuple(map(str, gradient))))
        if check:
            pot.self_test()
        return pot

    def self_test(self, samples=200, seed=0, h=1e-6, rtol=1e-4):
        """Finite-difference check of ``grad_phi`` on random sphere points."""
        rng = np.random.default_rng(seed)
        z = rng.normal(size=(3, samples))
        z /= np.linalg.norm(z, axis=0)
        g = self.grad_phi(z)
        fd = np.empty_like(z)
        for i in range(3):
            e = np.zeros((3, 1))
            e[i] = h
            fd[i] = (self.phi(z + e) - self.phi(z - e)) / (2 * h)
        scale = max(1.0, float(np.max(np.abs(g))))
        err = float(np.max(np.abs(fd - g))) / scale
        if not np.isfinite(err) or err > rtol:
            raise ValidationError(
                f"grad_phi disagrees with finite differences of phi (max rel err {err:.2e})",
                key="grad_phi",
            )
        return err


def _check_ball(z):
    if np.any(np.einsum("i...,i...->...", z, z) > (1.0 + 1e-9) ** 2):
        raise OutsideBall("extended potential is only defined on the closed unit ball")


def phi_extended(z, pot):
    """``zeta(|z|^2) phi(z / |z|)`` for ``|z|^2 > delta0``, else 0."""
    z = np.asarray(z, dtype=float)
    _check_ball(z)
    s = np.einsum("i...,i...->...", z, z)
    out = np.zeros(s.shape)
    mask = s > pot.delta0
    if np.any(mask):
        zm = z[:, mask]
        r = np.sqrt(s[mask])
        zeta, _ = pot.zeta(s[mask])
        out[mask] = zeta * pot.phi(zm / np.maximum(pot.delta0, r))
    return out


def grad_phi_extended(z, pot):
    """Analytic gradient of :func:`phi_extended` (chain rule through the cutoff
    and the radial projection)."""
    z = np.asarray(z, dtype=float)
    _check_ball(z)
    s = np.einsum("i...,i...->...", z, z)
    out = np.zeros(z.shape)
    mask = s > pot.delta0
    if np.any(mask):
        zm = z[:, mask]
        r = np.sqrt(s[mask])
        zhat = zm / r
        zeta, dzeta = pot.zeta(s[mask])
        gp = pot.grad_phi(zhat)
        tangential = gp - np.sum(gp * zhat, axis=0) * zhat
        out[:, mask] = 2.0 * dzeta * pot.phi(zhat) * zm + zeta / r * tangential
    return out


# --------------------------------------------------------------------------
# spin current
# --------------------------------------------------------------------------

class CurrentRepresentation(str, Enum):
    ANALYTIC_EXPRESSION = "analytic_expression"
    TABULATED_TIMESERIES = "tabulated_timeseries"


class SpinCurrent:
    """Prescribed current ``J(x, t)`` with ``dim`` components on a domain.

    Analytic currents wrap ``fn(coords, t) -> sequence of dim arrays``.
    Tabulated currents are linearly interpolated in time; their values have
    shape ``(nt, dim)`` (uniform in space) or ``(nt, dim, *resolution)``.
    The sup norm is the maximum of ``|J|`` over grid samples.
    """

    def __init__(self, domain, representation, fn=None, times=None, values=None,
                 zero=False, expressions=None):
        self.domain = domain
        self.representation = CurrentRepresentation(representation)
        self._fn = fn
        self.is_zero = bool(zero)
        self.expressions = expressions
        self._coords = None
        if self.representation is CurrentRepresentation.TABULATED_TIMESERIES:
            times = np.asarray(times, dtype=float)
            values = np.asarray(values, dtype=float)
            if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
                raise ValidationError("tabulated current needs >= 2 strictly increasing times")
            if values.shape[:2] != (times.size, domain.dim):
                raise ValidationError(
                    f"tabulated values must have shape ({times.size}, {domain.dim}, ...), "
                    f"got {values.shape}"
                )
            if values.ndim == 2:
                values = values.reshape(values.shape + (1,) * domain.dim)
            self.times = times
            self.values = values
        elif fn is None:
            raise ValidationError("analytic current needs a function")

    @classmethod
    def zero(cls, domain):
        def fn(coords, t):
            return [np.zeros_like(coords[0]) for _ in coords]

        return cls(domain, CurrentRepresentation.ANALYTIC_EXPRESSION, fn=fn, zero=True)

    @classmethod
    def analytic(cls, domain, fn):
        return cls(domain, CurrentRepresentation.ANALYTIC_EXPRESSION, fn=fn)

    @classmethod
    def from_expressions(cls, domain, texts):
        if len(texts) != domain.dim:
            raise ValidationError(
                f"current needs {domain.dim} component expressions, got {len(texts)}", key="components"
            )
        variables = field_variables(domain.dim)
        exprs = [Expression(t, variables) for t in texts]

        def fn(coords, t):
            env = {f"x{i + 1}": c for i, c in enumerate(coords)}
            env["t"] = t
            return [e(**env) for e in exprs]

        return cls(domain, CurrentRepresentation.ANALYTIC_EXPRESSION, fn=fn,
                   expressions=tuple(str(t) for t in texts))

    @classmethod
    def tabulated(cls, domain, times, values):
        return cls(domain, CurrentRepresentation.TABULATED_TIMESERIES, times=times, values=values)

    def evaluate(self, t):
        """Samples of ``J(., t)``, shape ``(dim, *resolution)``."""
        shape = (self.domain.dim,) + self.domain.resolution
        if self.representation is CurrentRepresentation.ANALYTIC_EXPRESSION:
            if self._coords is None:
                self._coords = self.domain.coordinates()
            comps = self._fn(self._coords, float(t))
            return np.stack([np.broadcast_to(np.asarray(c, dtype=float), self.domain.resolution)
                             for c in comps]).reshape(shape)
        tt = self.times
        if t < tt[0] - 1e-12 or t > tt[-1] + 1e-12:
            raise SeriesTooShort(f"t={t} outside tabulated range [{tt[0]}, {tt[-1]}]")
        k = int(np.clip(np.searchsorted(tt, t, side="right") - 1, 0, tt.size - 2))
        w = (t - tt[k]) / (tt[k + 1] - tt[k])
        vals = (1.0 - w) * self.values[k] + w * self.values[k + 1]
        return np.broadcast_to(vals, shape).copy()

    def sup_norm(self, t):
        if self.is_zero:
            return 0.0
        J = self.evaluate(t)
        return float(np.sqrt(np.max(np.sum(J * J, axis=0))))

    def sup_norm_series(self, times):
        return np.array([self.sup_norm(t) for t in times])

    def covers(self, T):
        if self.representation is CurrentRepresentation.ANALYTIC_EXPRESSION:
            return True
        return self.times[0] <= 1e-12 and self.times[-1] >= T - 1e-12


def accumulate_I(current, beta, T, samples=2001):
    """Trapezoidal ``beta^2 int_0^T ||J(., t)||_inf^2 dt``."""
    if T < 0:
        raise ValueError("T must be non-negative")
    if not current.covers(T):
        raise SeriesTooShort(f"current series does not cover [0, {T}]")
    if T == 0 or current.is_zero or beta == 0:
        return 0.0
    times = np.linspace(0.0, T, samples)
    if current.representation is CurrentRepresentation.TABULATED_TIMESERIES:
        inside = current.times[(current.times > 0) & (current.times < T)]
        times = np.union1d(times, inside)
    sup = current.sup_norm_series(times)
    return float(beta ** 2 * np.trapezoid(sup ** 2, times))


# --------------------------------------------------------------------------
# model configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    alpha: float = 1.0
    beta: float = 0.0
    epsilon: float = 0.1
    flow: FlowKind = FlowKind.LLG_SPIN_CURRENT
    demag: bool = False
    anisotropy: AnisotropyPotential = dc_field(default_factory=AnisotropyPotential.uniaxial)
    current: SpinCurrent = None

    def __post_init__(self):
        object.__setattr__(self, "flow", FlowKind(self.flow))
        if not self.alpha > 0:
            raise ValidationError(f"alpha must be positive, got {self.alpha}", key="alpha")
        if not self.beta >= 0:
            raise ValidationError(f"beta must be non-negative, got {self.beta}", key="beta")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValidationError(f"epsilon must lie in [0, 1], got {self.epsilon}", key="epsilon")
        if self.demag and self.flow is not FlowKind.LLG_SPIN_CURRENT:
            raise ValidationError("demag is only part of the LLG flow", key="demag")

    @property
    def gamma(self):
        return 1.0 + self.alpha ** 2

    def check_domain(self, domain):
        if self.demag and domain.dim != 3:
            raise ValidationError("demag requires dim=3", key="demag")
        torus = self.flow is FlowKind.HEAT_FLOW_TORUS
        if torus != (domain.boundary is Boundary.PERIODIC):
            raise ValidationError(
                f"flow {self.flow.value} requires "
                f"{'periodic' if torus else 'neumann'} boundary", key="boundary"
            )
        if self.current is not None and self.current.domain != domain:
            raise DomainMismatch("spin current lives on a different domain")

    def current_on(self, domain):
        return self.current if self.current is not None else SpinCurrent.zero(domain)


# --------------------------------------------------------------------------
# fields and energies
# --------------------------------------------------------------------------

def _derivatives(u):
    t = full_transform(u.domain)
    block = t.forward(u.values)
    lap = t.inverse(t.laplace_symbol * block)
    grad = np.stack([t.derivative(block, i) for i in range(u.domain.dim)])
    return lap, grad


def effective_field_arrays(u, lap, grad, cfg, t, current=None, kernel=None):
    """``Delta u - grad Phi~(clip u) [+ h_d(u)] + beta J.grad u`` from sampled pieces."""
    h = lap - grad_phi_extended(_kernels.clip(u), cfg.anisotropy)
    if cfg.demag and cfg.flow is FlowKind.LLG_SPIN_CURRENT:
        from .demag import demag_field_array
        h = h + demag_field_array(u, kernel)
    if cfg.beta != 0.0 and current is not None and not current.is_zero:
        J = current.evaluate(t)
        h = h + cfg.beta * np.einsum("i...,ic...->c...", J, grad)
    return h


def effective_field(u, cfg, t=0.0, kernel=None):
    """Effective field including the current term; demag only for the LLG flow."""
    cfg.check_domain(u.domain)
    if cfg.demag and kernel is None:
        from .demag import kernel_for
        kernel = kernel_for(u.domain)
    lap, grad = _derivatives(u)
    return Field(u.domain, effective_field_arrays(
        u.values, lap, grad, cfg, t, cfg.current_on(u.domain), kernel))


def tension_field_arrays(u, lap, grad):
    return lap + np.einsum("ic...,ic...->...", grad, grad)[None] * u


def tension_field(u):
    """``Delta u + |grad u|^2 u``."""
    lap, grad = _derivatives(u)
    return Field(u.domain, tension_field_arrays(u.values, lap, grad))


def _check_unit(values, tol=1e-6):
    mod = np.sqrt(np.einsum("i...,i...->...", values, values))
    if np.max(np.abs(mod - 1.0)) > tol:
        raise NotUnitLength(f"|u| deviates from 1 by {np.max(np.abs(mod - 1.0)):.3e}")


def tau_phi(u, pot):
    """Tension field minus the tangential part of the anisotropy gradient."""
    _check_unit(u.values)
    tau = tension_field(u).values
    g = grad_phi_extended(_kernels.clip(u.values), pot)
    g_normal = np.einsum("i...,i...->...", g, u.values)[None] * u.values
    return Field(u.domain, tau - (g - g_normal))


class Energy(NamedTuple):
    anisotropy: float
    exchange: float
    selfinduced: float
    total: float


def energy(u, cfg, kernel=None):
    """Anisotropy, exchange and self-induced energy by grid quadrature."""
    vol = u.domain.cell_volume
    aniso = float(np.sum(phi_extended(_kernels.clip(u.values), cfg.anisotropy)) * vol)
    _, grad = _derivatives(u)
    exchange = 0.5 * float(np.sum(grad ** 2) * vol)
    selfinduced = 0.0
    if cfg.demag:
        from .demag import demag_field_array, kernel_for
        kernel = kernel if kernel is not None else kernel_for(u.domain)
        selfinduced = -0.5 * float(np.sum(demag_field_array(u.values, kernel) * u.values) * vol)
    return Energy(aniso, exchange, selfinduced, aniso + exchange + selfinduced)
