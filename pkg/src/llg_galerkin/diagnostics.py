"""Monitors, identity defects, the a priori envelope and weak-form residuals.

Everything here consumes either a live state (``record``) or a stored
trajectory (times, coefficients and coefficient rates).  Time derivatives are
never differenced from snapshots; they come from the stored right-hand sides.
"""

import csv
import math
from dataclasses import dataclass, field as dc_field
from enum import Enum
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import CalibrationFailed, FlowMismatch, NotNearSphere, TooFewRows
from .grid import Boundary, full_transform
from .physics import FlowKind, effective_field_arrays, phi_extended

COLUMNS = (
    "t",
    "l2_sq",
    "grad_l2_sq",
    "dt_u_l2_sq",
    "cross_lap_l2_sq",
    "eps_lap_l2_sq",
    "energy_total",
    "q_monitor",
    "I_accum",
    "max_modulus",
    "grad_l2_sq_step",
)


@dataclass
class EnergyLedger:
    """Append-only table of per-step quadratures.

    ``grad_l2_sq_step`` is the time average of ``int |grad u|^2`` over the
    step that ended at the row (the initial row repeats ``grad_l2_sq``).
    """

    rows: list = dc_field(default_factory=list)
    meta: dict = dc_field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def append(self, row):
        values = tuple(float(row[c]) for c in COLUMNS)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"non-finite ledger entry: {dict(zip(COLUMNS, values))}")
        if self.rows and not values[0] > self.rows[-1][0]:
            raise ValueError("ledger times must be strictly increasing")
        self.rows.append(values)

    def column(self, name):
        k = COLUMNS.index(name)
        return np.array([r[k] for r in self.rows])

    def last(self, name):
        return self.rows[-1][COLUMNS.index(name)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for r in self.rows:
                w.writerow([f"{v:.17g}" for v in r])

    @classmethod
    def from_csv(cls, path, meta=None):
        led = cls(meta=dict(meta or {}))
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != COLUMNS:
                raise ValueError(f"{path}: unexpected ledger header {header}")
            for line in reader:
                led.append(dict(zip(COLUMNS, map(float, line))))
        return led


def _sup_sq(current, t):
    s = current.sup_norm(t)
    return s * s


def record(state, ledger, rate=None, grad_step=None):
    """Append one row for ``state``; ``rate`` is its right-hand side if known."""
    system = state.system
    cfg = state.config
    basis = state.basis
    c = state.c
    vol = basis.domain.cell_volume
    if rate is None:
        rate = system.rhs(c, state.time)
    u, lap, _ = system.fields(c)
    clipped = _kernels.clip(u)
    grad_sq = float(np.sum(system.lam1 * c * c))
    energy = float(np.sum(phi_extended(clipped, cfg.anisotropy)) * vol) + 0.5 * grad_sq
    if cfg.demag:
        from .demag import demag_field_array
        energy -= 0.5 * float(np.sum(demag_field_array(u, system.kernel) * u) * vol)
    I_acc = 0.0
    if ledger.rows:
        t0 = ledger.rows[-1][0]
        I_acc = ledger.last("I_accum")
        cur = system.current
        if cfg.beta and not cur.is_zero:
            t1 = state.time
            simpson = (_sup_sq(cur, t0) + 4 * _sup_sq(cur, 0.5 * (t0 + t1)) + _sup_sq(cur, t1)) / 6
            I_acc += cfg.beta ** 2 * (t1 - t0) * simpson
    cross = np.cross(clipped, lap, axis=0)
    ledger.append({
        "t": state.time,
        "l2_sq": float(np.sum(c * c)),
        "grad_l2_sq": grad_sq,
        "dt_u_l2_sq": float(np.sum(rate * rate)),
        "cross_lap_l2_sq": float(np.sum(cross * cross) * vol),
        "eps_lap_l2_sq": cfg.epsilon * float(np.sum((system.lam1 * c) ** 2)),
        "energy_total": energy,
        "q_monitor": _kernels.q_sum(u) * vol,
        "I_accum": I_acc,
        "max_modulus": _kernels.max_modulus(u),
        "grad_l2_sq_step": grad_sq if grad_step is None else grad_step,
    })


def q_monitor(u):
    """``int_{|u| > 1} |u|^2 (1 - 1/|u|) dx``."""
    return _kernels.q_sum(u.values) * u.domain.cell_volume


def _require_rows(ledger, k=2):
    if len(ledger) < k:
        raise TooFewRows(f"need at least {k} ledger rows, have {len(ledger)}")


def l2_dissipation_defect(ledger, epsilon=None):
    """Worst per-step ``|d/dt int|u|^2 + 2 eps <int|grad u|^2>| / max(1, int|u|^2)``."""
    _require_rows(ledger)
    eps = ledger.meta["epsilon"] if epsilon is None else epsilon
    t = ledger.column("t")
    l2 = ledger.column("l2_sq")
    g = ledger.column("grad_l2_sq_step")[1:]
    rate = np.diff(l2) / np.diff(t)
    return float(np.max(np.abs(rate + 2.0 * eps * g) / np.maximum(1.0, l2[1:])))


def q_increase(ledger):
    """Largest single-step increase of the maximum-principle monitor."""
    _require_rows(ledger)
    return float(max(0.0, np.max(np.diff(ledger.column("q_monitor")))))


# --------------------------------------------------------------------------
# a priori envelope
# --------------------------------------------------------------------------

class EnvelopeTerms(NamedTuple):
    lhs: float
    h1_sq0: float
    T: float
    I: float


class EnvelopeResult(NamedTuple):
    C_star: float
    violations: list
    terms: list
    bounds: list


def envelope_terms(ledger, alpha):
    """``sup grad^2 + int |u_t|^2 + alpha int |J(u) x Delta u|^2`` and the
    data entering the bound."""
    _require_rows(ledger, 1)
    t = ledger.column("t")
    lhs = float(np.max(ledger.column("grad_l2_sq")))
    if len(t) > 1:
        lhs += float(np.trapezoid(ledger.column("dt_u_l2_sq"), t))
        lhs += alpha * float(np.trapezoid(ledger.column("cross_lap_l2_sq"), t))
    h1 = ledger.rows[0][COLUMNS.index("l2_sq")] + ledger.rows[0][COLUMNS.index("grad_l2_sq")]
    return EnvelopeTerms(lhs, h1, float(t[-1] - t[0]), ledger.last("I_accum"))


def envelope_bound(C, terms):
    return C * terms.T + (C * terms.I + 1.0) * (terms.h1_sq0 + C * terms.T) * math.exp(C * terms.I)


def gronwall_envelope(ledgers, calibration_index=0, alpha=None, rtol=1e-12):
    """Smallest ``C`` for which the envelope bounds the calibration run, and
    the indices of other runs that it fails to bound."""
    if not ledgers:
        raise ValueError("need at least one ledger")
    alphas = [alpha if alpha is not None else led.meta.get("alpha", 1.0) for led in ledgers]
    terms = [envelope_terms(led, a) for led, a in zip(ledgers, alphas)]
    cal = terms[calibration_index]

    def slack(C):
        return envelope_bound(C, cal) - cal.lhs

    if slack(0.0) >= 0:
        C = 0.0
    else:
        hi = 1.0
        while slack(hi) < 0:
            hi *= 2.0
            if hi > 1e12 or not math.isfinite(envelope_bound(hi, cal)):
                raise CalibrationFailed("no finite constant bounds the calibration run")
        lo = 0.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if slack(mid) >= 0:
                hi = mid
            else:
                lo = mid
            if hi - lo <= 1e-14 * hi:
                break
        C = hi
    bounds = [envelope_bound(C, tm) for tm in terms]
    violations = [i for i, (tm, b) in enumerate(zip(terms, bounds))
                  if i != calibration_index and tm.lhs > b * (1.0 + rtol)]
    return EnvelopeResult(C, violations, terms, bounds)


# --------------------------------------------------------------------------
# trajectories on the grid
# --------------------------------------------------------------------------

class Definition(str, Enum):
    """Which weak formulation a residual refers to."""

    LLG = "llg"
    HEAT_BOUNDED = "heat_bounded"
    HEAT_TORUS = "heat_torus"


_DEFINITION_FOR = {
    FlowKind.LLG_SPIN_CURRENT: Definition.LLG,
    FlowKind.HEAT_FLOW_BOUNDED: Definition.HEAT_BOUNDED,
    FlowKind.HEAT_FLOW_TORUS: Definition.HEAT_TORUS,
}


@dataclass
class Trajectory:
    """Grid samples of ``u``, ``u_t``, ``grad u`` and the lower-order field
    ``-grad Phi + [h_d] + beta J.grad u`` at every stored time."""

    domain: object
    config: object
    times: np.ndarray
    u: list
    u_t: list
    grad: list
    lower: list
    lap: list


def sample_trajectory(out, stride=1):
    from .solver import Dynamics

    system = Dynamics(out.basis, out.config)
    cfg = out.config
    idx = list(range(0, len(out.times), stride))
    if idx[-1] != len(out.times) - 1:
        idx.append(len(out.times) - 1)
    us, uts, grads, lows, laps = [], [], [], [], []
    for k in idx:
        c = out.coeffs[k]
        u, lap, grad = system.fields(c)
        h = effective_field_arrays(u, lap, grad, cfg, out.times[k], system.current, system.kernel)
        us.append(u)
        uts.append(out.basis.synthesize_array(out.rates[k]))
        grads.append(grad)
        lows.append(h - lap)
        laps.append(lap)
    return Trajectory(out.basis.domain, cfg, out.times[idx], us, uts, grads, lows, laps)


# --------------------------------------------------------------------------
# test functions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    """``phi(x, t)``; ``values(t)`` is ``(3, *res)``, ``grad(t)`` is ``(dim, 3, *res)``."""

    __test__ = False  # not a pytest class

    ident: str
    spatial: np.ndarray
    spatial_grad: np.ndarray
    horizon: float = 1.0
    bump: bool = True

    def profile(self, t):
        if not self.bump:
            return 1.0
        return math.sin(math.pi * t / self.horizon) ** 2

    def values(self, t):
        return self.profile(t) * self.spatial

    def grad(self, t):
        return self.profile(t) * self.spatial_grad


def _mode_samples(domain, k):
    """Unnormalized tensor cosine with integer wavenumbers ``k`` and its gradient."""
    xs = domain.coordinates()
    factors, dfactors = [], []
    for i, (x, L) in enumerate(zip(xs, domain.lengths)):
        w = (k[i] * math.pi / L) if domain.boundary is Boundary.NEUMANN else (2 * math.pi * k[i] / L)
        factors.append(np.cos(w * x))
        dfactors.append(-w * np.sin(w * x))
    psi = np.prod(factors, axis=0)
    dpsi = []
    for i in range(domain.dim):
        parts = list(factors)
        parts[i] = dfactors[i]
        dpsi.append(np.prod(parts, axis=0))
    return psi, np.stack(dpsi)


def _library_modes(dim):
    modes = [(0,) * dim]
    for axes in ((0,), (1,), (0, 1)):
        k = [0] * dim
        for a in axes:
            if a < dim:
                k[a] = 1
            else:
                k[0] += 1
        modes.append(tuple(k))
    return modes


def test_function_library(domain, horizon, sphere_valued=False):
    """Twelve canonical test functions: four low modes times three directions.

    The default family is ``sin^2(pi t / T) psi_k(x) e_d``.  The sphere-valued
    variant is ``(e_d + psi_k e_{d+1} / 2) / |.|`` without a time factor.
    """
    lib = []
    for k in _library_modes(domain.dim):
        psi, dpsi = _mode_samples(domain, k)
        for d in range(3):
            ident = f"k{''.join(map(str, k))}_e{d + 1}" + ("_s2" if sphere_valued else "")
            if not sphere_valued:
                spatial = np.zeros((3,) + psi.shape)
                spatial[d] = psi
                grad = np.zeros((domain.dim, 3) + psi.shape)
                grad[:, d] = dpsi
                lib.append(TestFunction(ident, spatial, grad, horizon, True))
            else:
                v = np.zeros((3,) + psi.shape)
                v[d] = 1.0
                v[(d + 1) % 3] = 0.5 * psi
                dv = np.zeros((domain.dim, 3) + psi.shape)
                dv[:, (d + 1) % 3] = 0.5 * dpsi
                norm = np.sqrt(np.sum(v * v, axis=0))
                phi = v / norm
                # d(v/|v|) = dv/|v| - v <v, dv> / |v|^3
                vdv = np.einsum("c...,ic...->i...", v, dv)
                grad = dv / norm - phi[None] * (vdv / norm ** 2)[:, None]
                lib.append(TestFunction(ident, phi, grad, horizon, False))
    return lib


test_function_library.__test__ = False


# --------------------------------------------------------------------------
# weak-form residuals
# --------------------------------------------------------------------------

@dataclass
class WeakResidualReport:
    test_function_id: str
    residual: float
    signed: float
    refinement_level: int
    flow_kind: FlowKind


def _cross(a, b):
    return np.cross(a, b, axis=0)


def _dot(a, b):
    return np.sum(a * b)


def _grad_cross(u, gu, phi, gphi):
    """``grad (u x phi)`` with the derivative axis first."""
    return np.cross(gu, phi[None], axis=1) + np.cross(u[None], gphi, axis=1)


def _time_integral(values, times):
    if len(times) == 1:
        return 0.0
    return float(np.trapezoid(values, times))


def _integrands(traj, phi, form):
    vol = traj.domain.cell_volume
    cfg = traj.config
    a = cfg.alpha
    out = []
    for t, u, ut, gu, low in zip(traj.times, traj.u, traj.u_t, traj.grad, traj.lower):
        p = phi.values(t)
        gp = phi.grad(t)
        uxg = np.cross(u[None], gu, axis=1)
        if form == "llg":
            val = (_dot(ut, p) - a * _dot(_cross(u, ut), p)
                   - cfg.gamma * (_dot(uxg, gp) - _dot(_cross(u, low), p)))
        elif form == "test":
            uxh = _cross(u, low)
            val = (_dot(ut, p) + a * _dot(uxg, _grad_cross(u, gu, p, gp)) - _dot(uxg, gp)
                   - a * _dot(uxh, _cross(u, p)) + _dot(uxh, p))
        elif form == "rotated":
            uxh = _cross(u, low)
            val = (_dot(_cross(u, ut), p) + a * _dot(uxg, gp) + _dot(uxg, _grad_cross(u, gu, p, gp))
                   - a * _dot(uxh, p) - _dot(uxh, _cross(u, p)))
        else:  # heat flows, flat metric
            grad_sq = np.sum(gu * gu, axis=(0, 1))
            val = (_dot(ut, p) + _dot(gu, gp) - np.sum(grad_sq * np.sum(u * p, axis=0))
                   - _dot(_cross(u, low), _cross(u, p)))
        out.append(val * vol)
    return _time_integral(np.array(out), traj.times)


def _as_trajectory(run):
    return run if isinstance(run, Trajectory) else sample_trajectory(run)


def weak_residual(run, phi, cfg=None, definition=None, refinement_level=0):
    """``|LHS - RHS|`` of the weak formulation matching the flow kind."""
    traj = _as_trajectory(run)
    cfg = cfg or traj.config
    expected = _DEFINITION_FOR[cfg.flow]
    if definition is not None and Definition(definition) is not expected:
        raise FlowMismatch(f"definition {Definition(definition).value} does not apply to {cfg.flow.value}")
    if traj.config.flow is not cfg.flow:
        raise FlowMismatch("run and configuration disagree on the flow kind")
    signed = _integrands(traj, phi, "llg" if expected is Definition.LLG else "heat")
    return WeakResidualReport(phi.ident, abs(signed), signed, refinement_level, cfg.flow)


def llg_test_form_residual(run, phi):
    """Signed residual of the LLG weak form tested directly against ``phi``."""
    return _integrands(_as_trajectory(run), phi, "test")


def llg_rotated_test_form_residual(run, phi):
    """Signed residual of the same form tested against ``u x phi``."""
    return _integrands(_as_trajectory(run), phi, "rotated")


def llg_gilbert_residual(run, phi):
    """Signed residual of the Gilbert weak form (tested against ``phi``)."""
    return _integrands(_as_trajectory(run), phi, "llg")


def heat_flow_term_identity(u, phi, grad_phi):
    """Both sides of ``-<u x grad u, grad(u x phi)> = -<grad u, grad phi> + |grad u|^2 <u, phi>``
    integrated over the grid, for a unit-length ``u``.  Returns ``(lhs, rhs)``."""
    t = full_transform(u.domain)
    block = t.forward(u.values)
    gu = np.stack([t.derivative(block, i) for i in range(u.domain.dim)])
    uv = u.values
    vol = u.domain.cell_volume
    uxg = np.cross(uv[None], gu, axis=1)
    lhs = -_dot(uxg, _grad_cross(uv, gu, phi, grad_phi)) * vol
    rhs = (-_dot(gu, grad_phi) + np.sum(np.sum(gu * gu, axis=(0, 1)) * np.sum(uv * phi, axis=0))) * vol
    return float(lhs), float(rhs)


# --------------------------------------------------------------------------
# Gilbert-form equivalence
# --------------------------------------------------------------------------

def gilbert_form_defect(run, cfg=None, gamma=None, sphere_tol=1e-3):
    """``||u_t - alpha u x u_t + gamma u x h|| / ||u_t - alpha u x u_t||`` in
    ``L2(Omega x [0, T])``, with ``h`` the full effective field.

    The run must stay near the sphere in the sense that the largest modulus
    over all samples is within ``sphere_tol`` of 1.
    """
    traj = _as_trajectory(run)
    cfg = cfg or traj.config
    if cfg.flow is not FlowKind.LLG_SPIN_CURRENT:
        raise FlowMismatch("the Gilbert form only applies to the LLG flow")
    g = cfg.gamma if gamma is None else gamma
    peak = max(_kernels.max_modulus(u) for u in traj.u)
    if abs(peak - 1.0) > sphere_tol:
        raise NotNearSphere(f"max |u| = {peak:.6f} is not within {sphere_tol:g} of 1")
    num, den = [], []
    vol = traj.domain.cell_volume
    for u, ut, low, lap in zip(traj.u, traj.u_t, traj.lower, traj.lap):
        lhs = ut - cfg.alpha * _cross(u, ut)
        res = lhs + g * _cross(u, lap + low)
        num.append(float(np.sum(res * res)) * vol)
        den.append(float(np.sum(lhs * lhs)) * vol)
    n = _time_integral(np.array(num), traj.times)
    d = _time_integral(np.array(den), traj.times)
    if d == 0.0:
        return 0.0 if n == 0.0 else math.inf
    return math.sqrt(n / d)


def unit_length_deviation(run):
    traj = _as_trajectory(run)
    return max(float(np.max(np.abs(np.sqrt(np.sum(u * u, axis=0)) - 1.0))) for u in traj.u)
