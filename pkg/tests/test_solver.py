import math
import warnings

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from llg_galerkin.diagnostics import EnergyLedger, l2_dissipation_defect
from llg_galerkin.errors import NewtonDiverged, NotUnitLength, StepRejected, ValidationError
from llg_galerkin.grid import BoxDomain, Field, ModeCoefficients, build_basis
from llg_galerkin.physics import AnisotropyPotential, FlowKind, ModelConfig, SpinCurrent
from llg_galerkin.solver import (
    Dynamics, GalerkinState, Scheme, StepperConfig, check_cfl, continuation, evolve, initial_state, rhs, run,
    spacetime_distance, step,
)

from conftest import smooth_unit_field

IMPLICIT = StepperConfig(Scheme.IMPLICIT_MIDPOINT, dt=0.01)


def uniform(domain, v):
    vals = np.zeros((3,) + domain.resolution)
    vals[:] = np.reshape(v, (3,) + (1,) * domain.dim)
    return Field(domain, vals)


@pytest.fixture
def small():
    d = BoxDomain((1.0, 1.0, 1.0), (8, 8, 8))
    return d, build_basis(d, 27)


def test_stepper_config_validation():
    with pytest.raises(ValidationError):
        StepperConfig(dt=0.0)
    with pytest.raises(ValueError):
        StepperConfig(scheme="euler")
    assert StepperConfig(scheme="rk4").scheme is Scheme.RK4


def test_initial_data_must_be_unit(small):
    d, b = small
    with pytest.raises(NotUnitLength):
        initial_state(uniform(d, (0.5, 0, 0)), b, ModelConfig())


@pytest.mark.parametrize("scheme", list(Scheme))
def test_easy_axis_is_a_fixed_point(small, scheme):
    d, b = small
    s0 = initial_state(uniform(d, (1.0, 0, 0)), b, ModelConfig())
    np.testing.assert_allclose(rhs(s0).coeffs, 0, atol=1e-12)
    s1 = step(s0, StepperConfig(scheme, dt=0.01))
    np.testing.assert_allclose(s1.c, s0.c, atol=1e-12)
    assert s1.time == pytest.approx(0.01)


def test_torque_conserves_l2_without_regularization(small):
    # the projected torque is orthogonal to u, so d/dt |c|^2 = 0 when eps = 0
    d, b = small
    J = SpinCurrent.from_expressions(d, ["cos(pi*x1)", "0.3", "0"])
    for cfg in (ModelConfig(epsilon=0.0, beta=0.8, current=J),
                ModelConfig(epsilon=0.0, flow=FlowKind.HEAT_FLOW_BOUNDED)):
        s = initial_state(smooth_unit_field(d, seed=3), b, cfg)
        r = rhs(s).coeffs
        assert abs(np.sum(r * s.c)) < 1e-10 * np.linalg.norm(r) * np.linalg.norm(s.c)


def test_evolve_to_current_time_records_one_row(small):
    d, b = small
    s = initial_state(smooth_unit_field(d), b, ModelConfig())
    led = EnergyLedger()
    out = evolve(s, IMPLICIT, 0.0, led)
    assert out is s and len(led) == 1
    with pytest.raises(ValueError):
        evolve(s, IMPLICIT, -1.0)


def test_evolve_lands_exactly_on_T(small):
    d, b = small
    s = initial_state(smooth_unit_field(d), b, ModelConfig())
    led = EnergyLedger()
    calls = []
    end = evolve(s, StepperConfig(Scheme.RK4, dt=0.003), 0.01, led, warn=False,
                 callback=lambda i, st: calls.append(i))
    assert end.time == 0.01
    assert calls == [1, 2, 3, 4]
    np.testing.assert_allclose(np.diff(led.column("t")), 0.0025)


@pytest.mark.parametrize("flow", [FlowKind.HEAT_FLOW_BOUNDED, FlowKind.LLG_SPIN_CURRENT])
def test_l2_dissipation_identity_under_implicit_midpoint(small, flow):
    d, b = small
    out = run(smooth_unit_field(d, seed=1), b, ModelConfig(flow=flow, epsilon=0.2), IMPLICIT, 0.1)
    assert l2_dissipation_defect(out.ledger) < 1e-10
    l2 = out.ledger.column("l2_sq")
    assert np.all(np.diff(l2) <= 1e-14)
    assert l2[-1] <= out.initial_l2_sq + 1e-12


def test_rk4_matches_reduced_ode_oracle():
    # one constant mode: u(t) is a point in R^3 driven by the anisotropy alone
    alpha, delta0 = 0.5, 0.25
    d = BoxDomain((2.0,), (4,))
    b = build_basis(d, 1)
    cfg = ModelConfig(alpha=alpha, anisotropy=AnisotropyPotential.uniaxial(delta0))
    scale = 1.0 / math.sqrt(d.volume)  # the constant basis function

    def f(t, g):
        # clip is the identity inside the ball, extension factor written out
        s = g @ g
        z = g / math.sqrt(s)
        tau = min(1.0, max(0.0, (s - 2 * delta0) / (1 - 2 * delta0)))
        zeta = 10 * tau ** 3 - 15 * tau ** 4 + 6 * tau ** 5
        dzeta = 30 * tau ** 2 * (1 - tau) ** 2 / (1 - 2 * delta0)
        phi = z[1] ** 2 + z[2] ** 2
        gp = np.array([0.0, 2 * z[1], 2 * z[2]])
        h = -(2 * dzeta * phi * g + zeta / math.sqrt(s) * (gp - (gp @ z) * z))
        gh = np.cross(g, h)
        return -alpha * np.cross(g, gh) - gh

    g0 = np.array([0.2, 0.5, 0.6])
    ref = solve_ivp(f, (0, 0.5), g0, method="DOP853", rtol=1e-12, atol=1e-13)
    s = GalerkinState(ModeCoefficients(b, (g0 / scale)[None, :]), 0.0, cfg, b)
    end = evolve(s, StepperConfig(Scheme.RK4, dt=0.01), 0.5, warn=False)
    np.testing.assert_allclose(end.c[0] * scale, ref.y[:, -1], atol=1e-8)


def test_implicit_failure_raises_newton_diverged(small):
    d, b = small
    s = initial_state(smooth_unit_field(d, seed=2), b, ModelConfig())
    with pytest.raises(NewtonDiverged):
        step(s, StepperConfig(Scheme.IMPLICIT_MIDPOINT, dt=0.01, newton_tol=1e-16, newton_max_iter=1))


def test_cfl_warning_and_rejected_step(small):
    d, b = small
    s = initial_state(smooth_unit_field(d, seed=2), b, ModelConfig())
    big = StepperConfig(Scheme.RK4, dt=1.0)
    with pytest.warns(RuntimeWarning, match="CFL"):
        check_cfl(s.system, big)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        check_cfl(s.system, StepperConfig(Scheme.RK4, dt=1e-6))
    with pytest.raises(StepRejected):
        with pytest.warns(RuntimeWarning):
            evolve(s, big, 1.0)


def test_cfl_limit_shrinks_with_resolution():
    d = BoxDomain((1.0, 1.0, 1.0), (12, 12, 12))
    cfg = ModelConfig()
    assert Dynamics(build_basis(d, 64), cfg).cfl_limit() < Dynamics(build_basis(d, 8), cfg).cfl_limit()


def test_run_output_interpolation_and_distance(small):
    d, b = small
    out = run(smooth_unit_field(d, seed=4), b, ModelConfig(), IMPLICIT, 0.05)
    for k in (0, 2, len(out.times) - 1):
        np.testing.assert_array_equal(out.coeffs_at(out.times[k]), out.coeffs[k])
    assert spacetime_distance(out, out) == 0.0


def test_continuation_single_entry_and_validation(small):
    d, _ = small
    u0 = smooth_unit_field(d, seed=5)
    rep = continuation(u0, ModelConfig(), [(8, 0.1)], IMPLICIT, 0.02)
    assert rep.cauchy == [] and len(rep.runs) == 1
    # with the identity holding exactly, the defect is what projection discards
    lost = 1.0 - np.sum(rep.runs[0].coeffs[0] ** 2) / d.volume
    assert rep.vol_defects[0] == pytest.approx(lost, abs=1e-10)
    two = continuation(u0, ModelConfig(), [(8, 0.1), (27, 0.05, 0.005)], IMPLICIT, 0.02)
    assert [pair for pair, _ in two.cauchy] == [(0, 1)]
    assert two.runs[1].stepper.dt == 0.005
    for bad in ([], [(27, 0.1), (8, 0.1)], [(8, 0.05), (8, 0.1)], [(8,)]):
        with pytest.raises(ValidationError):
            continuation(u0, ModelConfig(), bad, IMPLICIT, 0.02)


def test_reflection_symmetry_is_preserved():
    # data, current and potential are even under x1 -> 1 - x1
    d = BoxDomain((1.0, 1.0, 1.0), (8, 8, 8))
    x = d.coordinates()
    a = 0.5 * np.cos(2 * np.pi * x[0]) + 0.4 * np.cos(np.pi * x[1])
    b = 0.3 * np.cos(np.pi * x[2])
    from llg_galerkin.config import unit_field_from_angles
    u0 = Field(d, unit_field_from_angles(a, b))
    J = SpinCurrent.from_expressions(d, ["0", "cos(pi*x2)*cos(2*pi*x1)", "0.3"])
    out = run(u0, build_basis(d, 64), ModelConfig(beta=0.5, current=J), StepperConfig(Scheme.RK4, dt=2e-3), 0.02,
              warn=False)
    for k in range(len(out.times)):
        u = out.field_at(k).values
        np.testing.assert_allclose(np.flip(u, axis=1), u, atol=1e-10)


def test_unprojected_torque_is_orthogonal_where_inside_ball(small):
    d, b = small
    s = initial_state(smooth_unit_field(d, seed=9), b, ModelConfig(epsilon=0.0))
    u, _, _, h = s.system.effective(s.c, 0.0)
    n = s.system.nonlinear(u, h)
    inside = np.sum(u * u, axis=0) <= 1.0
    assert np.max(np.abs(np.sum(n * u, axis=0)[inside])) < 1e-12 * (1 + np.abs(h).max())
