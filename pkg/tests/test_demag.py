import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from llg_galerkin.demag import (
    PAIRS, build_kernel, cuboid_point_tensor, demag_field, demag_field_array, direct_field_at, kernel_for,
    load_kernel, operator_norm_probe, save_kernel,
)
from llg_galerkin.errors import DomainMismatch, WrongDimension
from llg_galerkin.grid import BoxDomain, Field


def aharoni_dz(a, b, c):
    """Demagnetizing factor along z of a 2a x 2b x 2c prism (Aharoni's closed form)."""
    r = math.sqrt(a * a + b * b + c * c)
    rab, rbc, rac = math.hypot(a, b), math.hypot(b, c), math.hypot(a, c)
    s = ((b * b - c * c) / (2 * b * c) * math.log((r - a) / (r + a))
         + (a * a - c * c) / (2 * a * c) * math.log((r - b) / (r + b))
         + b / (2 * c) * math.log((rab + a) / (rab - a))
         + a / (2 * c) * math.log((rab + b) / (rab - b))
         + c / (2 * a) * math.log((rbc - b) / (rbc + b))
         + c / (2 * b) * math.log((rac - a) / (rac + a))
         + 2 * math.atan(a * b / (c * r))
         + (a ** 3 + b ** 3 - 2 * c ** 3) / (3 * a * b * c)
         + (a * a + b * b - 2 * c * c) / (3 * a * b * c) * r
         + c / (a * b) * (rac + rbc)
         - (rab ** 3 + rbc ** 3 + rac ** 3) / (3 * a * b * c))
    return s / math.pi


@pytest.fixture(scope="module")
def box():
    return BoxDomain((1.5, 1.0, 0.75), (12, 8, 6))


@pytest.fixture(scope="module")
def box_kernel(box):
    return build_kernel(box)


def test_aharoni_oracle_sane():
    assert aharoni_dz(1, 1, 1) == pytest.approx(1 / 3, rel=1e-12)


def test_requires_three_dimensions():
    with pytest.raises(WrongDimension):
        build_kernel(BoxDomain((1.0, 1.0), (8, 8)))


def test_self_cell_trace(box_kernel):
    assert np.trace(box_kernel.self_term()) == pytest.approx(-1.0, abs=1e-6)


def test_cube_self_term_is_isotropic(cube8):
    S = build_kernel(cube8).self_term()
    np.testing.assert_allclose(S, -np.eye(3) / 3, atol=1e-12)


def test_mirror_symmetry(box_kernel):
    T = box_kernel.tensors
    for k, (i, j) in enumerate(PAIRS):
        for ax in range(3):
            sign = -1.0 if (i == ax) != (j == ax) else 1.0
            np.testing.assert_allclose(np.flip(T[k], axis=ax), sign * T[k], atol=1e-12)


def test_far_field_decay_cubic():
    k = build_kernel(BoxDomain((1.0, 1.0, 1.0), (10, 10, 10)))
    r4 = k.at_offset((4, 0, 0))[0, 0]
    r8 = k.at_offset((8, 0, 0))[0, 0]
    assert r4 / r8 == pytest.approx(8.0, rel=0.2)


def test_far_field_dipole_matches_cell_average():
    # offsets straddling the switch radius agree to O((h/r)^2)
    d = BoxDomain((1.0, 1.0, 1.0), (40, 40, 40))
    exact = build_kernel(d, far_field=None)
    mixed = build_kernel(d, far_field=30.0)
    for off in [(30, 0, 0), (25, 20, 0), (21, 21, 21)]:
        a, b = exact.at_offset(off), mixed.at_offset(off)
        assert np.max(np.abs(a - b)) <= 1e-3 * np.max(np.abs(a))


def test_uniform_box_mean_field_matches_aharoni(box, box_kernel):
    u = np.zeros((3,) + box.resolution)
    u[2] = 1.0
    h = demag_field_array(u, box_kernel)
    a, b, c = (L / 2 for L in box.lengths)
    assert -h[2].mean() == pytest.approx(aharoni_dz(a, b, c), rel=1e-9)
    # trace of the body-averaged tensor is 1
    total = 0.0
    for i in range(3):
        v = np.zeros_like(u)
        v[i] = 1.0
        total -= demag_field_array(v, box_kernel)[i].mean()
    assert total == pytest.approx(1.0, rel=1e-10)


def test_zero_and_linearity(box, box_kernel):
    rng = np.random.default_rng(0)
    assert np.all(demag_field_array(np.zeros((3,) + box.resolution), box_kernel) == 0)
    u, v = rng.normal(size=(2, 3) + box.resolution)
    lhs = demag_field_array(1.5 * u - 2.0 * v, box_kernel)
    rhs = 1.5 * demag_field_array(u, box_kernel) - 2.0 * demag_field_array(v, box_kernel)
    assert np.linalg.norm(lhs - rhs) / np.linalg.norm(u) < 1e-10


def test_self_adjoint(box, box_kernel):
    rng = np.random.default_rng(1)
    u, v = rng.normal(size=(2, 3) + box.resolution)
    a = np.sum(demag_field_array(u, box_kernel) * v)
    b = np.sum(u * demag_field_array(v, box_kernel))
    assert abs(a - b) < 1e-10 * np.linalg.norm(u) * np.linalg.norm(v)


def test_kernel_matches_cell_averaged_direct_quadrature(box, box_kernel):
    # the kernel averages the field over the target cell; average the exact
    # point field over Gauss points of a few target cells to match
    rng = np.random.default_rng(2)
    u = rng.normal(size=(3,) + box.resolution)
    h = demag_field_array(u, box_kernel)
    gx, gw = np.polynomial.legendre.leggauss(8)
    x = box.coordinates()
    for _ in range(3):
        i = tuple(int(rng.integers(0, n)) for n in box.resolution)
        centre = np.array([x[c][i] for c in range(3)])
        offs = np.meshgrid(*[gx * s / 2 for s in box.spacing], indexing="ij")
        pts = centre[:, None] + np.stack([o.ravel() for o in offs])
        w = np.einsum("i,j,k->ijk", gw, gw, gw).ravel() / 8
        avg = direct_field_at(Field(box, u), pts) @ w
        np.testing.assert_allclose(h[(slice(None),) + i], avg, atol=2e-3 * np.abs(avg).max())


def test_point_tensor_at_cube_centre():
    W = cuboid_point_tensor(np.zeros((3, 1)) + 1e-300, np.array([0.5, 0.5, 0.5]))[:, :, 0]
    np.testing.assert_allclose(W, -np.eye(3) / 3, atol=1e-12)


def test_ball_interior_field_32():
    d = BoxDomain((1.0, 1.0, 1.0), (32, 32, 32))
    k = build_kernel(d)
    x = d.coordinates()
    r = np.sqrt(sum((c - 0.5) ** 2 for c in x))
    u = np.zeros((3,) + d.resolution)
    u[2][r < 0.5] = 1.0
    h = demag_field_array(u, k)
    inner = r < 0.25
    assert abs(h[2][inner].mean() + 1 / 3) < 0.05 / 3


def test_operator_norm_probe_bounded(box_kernel):
    p = operator_norm_probe(box_kernel, trials=3, power_iters=40)
    assert p.probe <= p.power + 1e-9
    assert p.power <= 1.05


def test_probe_on_uniform_field_is_mean_demag_factor(box, box_kernel):
    u = np.zeros((3,) + box.resolution)
    u[0] = 1.0
    ratio = np.linalg.norm(demag_field_array(u, box_kernel)) / np.linalg.norm(u)
    mean_factor = -demag_field_array(u, box_kernel)[0].mean()
    assert mean_factor <= ratio <= 1.0
    assert ratio == pytest.approx(mean_factor, rel=0.25)


@pytest.mark.slow
def test_probe_refinement_invariant():
    p32 = operator_norm_probe(build_kernel(BoxDomain((1.0,) * 3, (32,) * 3)), trials=1, power_iters=40)
    p48 = operator_norm_probe(build_kernel(BoxDomain((1.0,) * 3, (48,) * 3)), trials=1, power_iters=40)
    assert p48.power == pytest.approx(p32.power, rel=0.10)


def test_cache_round_trip(tmp_path, box, box_kernel):
    path = tmp_path / "k.dmgk"
    save_kernel(box_kernel, path)
    loaded = load_kernel(path, box)
    np.testing.assert_array_equal(loaded.tensors, box_kernel.tensors)
    assert loaded.far_field == box_kernel.far_field
    with pytest.raises(DomainMismatch):
        load_kernel(path, BoxDomain((1.0, 1.0, 1.0), (12, 8, 6)))
    bad = tmp_path / "bad"
    bad.write_bytes(b"NOPE")
    with pytest.raises(ValueError):
        load_kernel(bad)


def test_field_wrapper_checks_domain(box, cube8):
    k = kernel_for(cube8)
    with pytest.raises(DomainMismatch):
        demag_field(Field(box, np.zeros((3,) + box.resolution)), k)
    with pytest.raises(DomainMismatch):
        demag_field_array(np.zeros((3, 4, 4, 4)), k)


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_self_energy_is_nonnegative(box, box_kernel, seed):
    u = np.random.default_rng(seed).normal(size=(3,) + box.resolution)
    assert -0.5 * np.sum(demag_field_array(u, box_kernel) * u) >= -1e-12 * np.sum(u * u)
