import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from llg_galerkin.errors import BadDomain, DomainMismatch, TruncationTooLarge
from llg_galerkin.grid import (
    Boundary, BoxDomain, Field, ModeCoefficients, analyze, build_basis, directional_derivative,
    gradient, inner, laplacian, norms, synthesize,
)


def unit_interval(n=16):
    return BoxDomain((1.0,), (n,))


# --- domain ---------------------------------------------------------------

@pytest.mark.parametrize("lengths,res", [((1.0,), (3,)), ((0.0,), (8,)), ((1.0, 1.0), (8,)), ((), ())])
def test_bad_domains_rejected(lengths, res):
    with pytest.raises(BadDomain):
        BoxDomain(lengths, res)


def test_domain_geometry():
    d = BoxDomain((2.0, 1.0), (8, 4))
    assert d.volume == 2.0
    assert d.spacing == (0.25, 0.25)
    assert d.n_points == 32
    np.testing.assert_allclose(d.axis_points(0), (np.arange(8) + 0.5) * 0.25)


# --- basis ----------------------------------------------------------------

def test_single_mode_is_constant():
    b = build_basis(unit_interval(), 1)
    assert b.eigenvalues[0] == 1.0
    np.testing.assert_allclose(b.synthesize_array(np.ones((1,))), 1.0)


def test_second_mode_is_cosine():
    d = unit_interval()
    b = build_basis(d, 2)
    assert b.eigenvalues[1] == pytest.approx(1 + math.pi ** 2, rel=1e-14)
    assert 1 + math.pi ** 2 == pytest.approx(10.8696, abs=1e-4)
    x = d.axis_points(0)
    np.testing.assert_allclose(b.synthesize_array(np.array([0.0, 1.0])), math.sqrt(2) * np.cos(math.pi * x), atol=1e-13)


def test_gram_matrix_2d_is_identity():
    d = BoxDomain((1.0, 1.0), (16, 16))
    b = build_basis(d, 16)
    x, y = d.coordinates()
    # oracle: hand-built normalized cosine products at the chosen multi-indices
    modes = []
    for k1, k2 in b.modes:
        c1 = 1.0 if k1 == 0 else math.sqrt(2)
        c2 = 1.0 if k2 == 0 else math.sqrt(2)
        modes.append(c1 * c2 * np.cos(k1 * math.pi * x) * np.cos(k2 * math.pi * y))
    M = np.stack([m.ravel() for m in modes])
    gram = M @ M.T * d.cell_volume
    np.testing.assert_allclose(gram, np.eye(16), atol=1e-10)
    # and the basis synthesizes the same functions
    np.testing.assert_allclose(b.synthesize_array(np.eye(16)).reshape(16, -1), M, atol=1e-12)


def test_eigenvalues_sorted_with_lexicographic_ties():
    b = build_basis(BoxDomain((1.0, 1.0, 1.0), (8, 8, 8)), 27)
    assert np.all(np.diff(b.eigenvalues) >= 0)
    for i in range(len(b.modes) - 1):
        if b.eigenvalues[i] == b.eigenvalues[i + 1]:
            assert tuple(b.modes[i]) < tuple(b.modes[i + 1])
    # (1,0,0), (0,1,0), (0,0,1) share an eigenvalue; lexicographic order puts (0,0,1) first
    assert [tuple(m) for m in b.modes[1:4]] == [(0, 0, 1), (0, 1, 0), (1, 0, 0)]


def test_truncation_limited_by_dealiasing():
    d = unit_interval(9)
    build_basis(d, 6)  # labels 0..5 satisfy 3k < 18
    with pytest.raises(TruncationTooLarge):
        build_basis(d, 7)


def test_periodic_modes_eigenvalues():
    d = BoxDomain((1.0,), (12,), Boundary.PERIODIC)
    b = build_basis(d, 3)
    np.testing.assert_allclose(b.eigenvalues, [1.0, 1 + 4 * math.pi ** 2, 1 + 4 * math.pi ** 2])
    x = d.axis_points(0)
    vals = b.synthesize_array(np.eye(3))
    for v in vals[1:]:
        # each is sqrt(2) cos or sqrt(2) sin of 2 pi x
        c = np.sum(v * np.cos(2 * math.pi * x)) / 6
        s = np.sum(v * np.sin(2 * math.pi * x)) / 6
        assert c ** 2 + s ** 2 == pytest.approx(2.0)


# --- analyze / synthesize ---------------------------------------------------

def test_constant_field_projects_on_constant_mode(cube8):
    b = build_basis(cube8, 27)
    u = Field(cube8, np.stack([np.ones(cube8.resolution), np.zeros(cube8.resolution), np.zeros(cube8.resolution)]))
    c = analyze(u, b).coeffs
    expected = np.zeros((27, 3))
    expected[0, 0] = 1.0
    np.testing.assert_allclose(c, expected, atol=1e-14)


def test_mode_three_component_two(cube8):
    b = build_basis(cube8, 27)
    f3 = b.synthesize_array(np.eye(27)[2])
    u = Field(cube8, np.stack([np.zeros_like(f3), f3, np.zeros_like(f3)]))
    c = analyze(u, b).coeffs
    expected = np.zeros((27, 3))
    expected[2, 1] = 1.0
    np.testing.assert_allclose(c, expected, atol=1e-13)


def test_projection_error_decreases_with_n(cube16):
    x = cube16.coordinates()
    u = np.stack([np.exp(0.3 * x[0]) * np.cos(x[1]), np.sin(x[2] + x[0]), x[0] * x[1]])
    field = Field(cube16, u)
    errs = []
    for n in (8, 27, 64):
        b = build_basis(cube16, n)
        r = u - synthesize(analyze(field, b)).values
        errs.append(np.sqrt(np.sum(r * r) * cube16.cell_volume))
    assert errs[0] > errs[1] > errs[2]


def test_zero_and_unit_constant_synthesis(cube8):
    b = build_basis(cube8, 27)
    assert np.all(synthesize(ModeCoefficients(b, np.zeros((27, 3)))).values == 0)
    c = np.zeros(27)
    c[0] = 1.0
    np.testing.assert_allclose(b.synthesize_array(c), 1.0, atol=1e-14)


@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([1, 8, 27, 64]))
def test_analyze_synthesize_round_trip(seed, n):
    d = BoxDomain((1.0, 2.0, 0.5), (8, 8, 8))
    b = build_basis(d, n)
    c = np.random.default_rng(seed).normal(size=(n, 3))
    np.testing.assert_allclose(b.analyze_array(b.synthesize_array(c)), c, atol=1e-12)


@given(st.integers(0, 2 ** 31 - 1))
def test_parseval(seed):
    d = BoxDomain((1.0, 1.0), (12, 12))
    b = build_basis(d, 30)
    c = np.random.default_rng(seed).normal(size=(30, 3))
    u = b.synthesize_array(c)
    assert inner(u, u, d) == pytest.approx(np.sum(c * c), rel=1e-12)


def test_analyze_rejects_other_domain(cube8):
    other = BoxDomain((2.0, 1.0, 1.0), (8, 8, 8))
    with pytest.raises(DomainMismatch):
        analyze(Field(other, np.zeros((3, 8, 8, 8))), build_basis(cube8, 8))


def test_field_shape_checked(cube8):
    with pytest.raises(DomainMismatch):
        Field(cube8, np.zeros((3, 8, 8)))
    with pytest.raises(ValueError):
        Field(cube8, np.full((3, 8, 8, 8), np.nan))


# --- calculus ---------------------------------------------------------------

def test_laplacian_constant_and_eigenfunction(cube16):
    x = cube16.coordinates()
    assert np.allclose(laplacian(Field(cube16, np.ones((1,) + cube16.resolution))).values, 0, atol=1e-10)
    f = np.cos(math.pi * x[0])
    np.testing.assert_allclose(laplacian(Field(cube16, f[None])).values[0], -math.pi ** 2 * f, atol=1e-10)


def _fd4_neumann_laplacian(u, h):
    """Fourth-order central differences with even reflection across each face."""
    out = np.zeros_like(u)
    for ax in range(u.ndim):
        p = np.concatenate([np.flip(np.take(u, [0, 1], axis=ax), axis=ax), u,
                            np.flip(np.take(u, [-2, -1], axis=ax), axis=ax)], axis=ax)
        n = u.shape[ax]

        def s(k):
            return np.take(p, np.arange(2 + k, 2 + k + n), axis=ax)

        out += (-s(-2) + 16 * s(-1) - 30 * s(0) + 16 * s(1) - s(2)) / (12 * h * h)
    return out


def test_laplacian_matches_fourth_order_differences():
    d = BoxDomain((1.0, 1.0, 1.0), (64, 64, 64))
    x = d.coordinates()
    rng = np.random.default_rng(3)
    u = sum(rng.normal() * np.cos(k1 * math.pi * x[0]) * np.cos(k2 * math.pi * x[1]) * np.cos(k3 * math.pi * x[2])
            for k1 in range(3) for k2 in range(3) for k3 in range(3))
    spectral = laplacian(Field(d, u[None])).values[0]
    fd = _fd4_neumann_laplacian(u, 1 / 64)
    assert np.linalg.norm(spectral - fd) / np.linalg.norm(fd) < 1e-4


def test_gradient_examples(cube16):
    x = cube16.coordinates()
    assert np.allclose(gradient(Field(cube16, np.ones(cube16.resolution))).values, 0, atol=1e-10)
    g = gradient(Field(cube16, np.cos(math.pi * x[0]))).values
    np.testing.assert_allclose(g[0], -math.pi * np.sin(math.pi * x[0]), atol=1e-10)
    np.testing.assert_allclose(g[1:], 0, atol=1e-10)


@given(st.integers(0, 2 ** 31 - 1))
def test_integration_by_parts(seed):
    d = BoxDomain((1.0, 1.5), (12, 12))
    b = build_basis(d, 20)
    rng = np.random.default_rng(seed)
    f = b.synthesize_array(rng.normal(size=20))
    g = b.synthesize_array(rng.normal(size=20))
    lhs = inner(gradient(Field(d, f)).values, gradient(Field(d, g)).values, d)
    rhs = -inner(f, laplacian(Field(d, g)).values, d)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_directional_derivative_examples(cube16):
    x = cube16.coordinates()
    zero = np.zeros(cube16.resolution)
    u = Field(cube16, np.stack([np.cos(math.pi * x[0]), zero, zero]))
    J0 = Field(cube16, np.zeros((3,) + cube16.resolution))
    assert np.all(directional_derivative(J0, u).values == 0)
    J1 = Field(cube16, np.stack([np.ones_like(zero), zero, zero]))
    out = directional_derivative(J1, u).values
    np.testing.assert_allclose(out[0], -math.pi * np.sin(math.pi * x[0]), atol=1e-10)
    np.testing.assert_allclose(out[1:], 0, atol=1e-12)


def test_directional_derivative_vs_finite_differences():
    d = BoxDomain((1.0, 1.0), (48, 48))
    x, y = d.coordinates()
    u = np.stack([np.cos(math.pi * x) * np.cos(2 * math.pi * y), np.cos(math.pi * y), np.cos(math.pi * x) + 0 * y])
    J = Field(d, np.stack([np.sin(y), x * y]))
    spectral = directional_derivative(J, Field(d, u)).values
    h = 1e-6
    # the exact derivatives of the analytic u, evaluated by central differences of the formula
    def ufun(xx, yy):
        return np.stack([np.cos(math.pi * xx) * np.cos(2 * math.pi * yy), np.cos(math.pi * yy), np.cos(math.pi * xx) + 0 * yy])
    dx = (ufun(x + h, y) - ufun(x - h, y)) / (2 * h)
    dy = (ufun(x, y + h) - ufun(x, y - h)) / (2 * h)
    fd = J.values[0] * dx + J.values[1] * dy
    assert np.linalg.norm(spectral - fd) / np.linalg.norm(fd) < 1e-4


def test_directional_derivative_needs_dim_components(cube8):
    with pytest.raises(DomainMismatch):
        directional_derivative(Field(cube8, np.zeros((2, 8, 8, 8))), Field(cube8, np.zeros((3, 8, 8, 8))))


def test_norms_examples(cube16):
    one = np.zeros((3,) + cube16.resolution)
    one[0] = 1.0
    n = norms(Field(cube16, one))
    assert (n.l2, n.h1, n.h2_equiv) == pytest.approx((1.0, 1.0, 1.0), abs=1e-10)
    x = cube16.coordinates()
    u = np.zeros_like(one)
    u[0] = np.cos(math.pi * x[0])
    n = norms(Field(cube16, u))
    assert n.h2_equiv - n.l2 == pytest.approx(math.pi ** 2 * n.l2, rel=1e-10)


def test_norms_vs_quadrature_oracle():
    d = BoxDomain((1.0, 1.0), (32, 32))
    x, y = d.coordinates()
    a, b = 0.7, -1.3
    u = np.stack([a * np.cos(math.pi * x) * np.cos(math.pi * y), b * np.cos(2 * math.pi * y), 0 * x])
    n = norms(Field(d, u))
    # closed forms: ||cos cos||^2 = 1/4, ||cos 2pi y||^2 = 1/2
    l2_sq = a * a / 4 + b * b / 2
    grad_sq = a * a / 4 * 2 * math.pi ** 2 + b * b / 2 * 4 * math.pi ** 2
    lap_sq = a * a / 4 * 4 * math.pi ** 4 + b * b / 2 * 16 * math.pi ** 4
    assert n.l2 == pytest.approx(math.sqrt(l2_sq), rel=1e-8)
    assert n.h1 == pytest.approx(math.sqrt(l2_sq + grad_sq), rel=1e-8)
    assert n.h2_equiv == pytest.approx(math.sqrt(l2_sq) + math.sqrt(lap_sq), rel=1e-8)


@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([8, 27, 64]))
def test_projection_contracts_l2_and_gradient(seed, n):
    # band-limited u on a fine basis, projected to a coarser one
    d = BoxDomain((1.0, 1.0, 1.0), (10, 10, 10))
    fine = build_basis(d, 125)
    u = fine.synthesize_array(np.random.default_rng(seed).normal(size=(125, 3)))
    pu = synthesize(analyze(Field(d, u), build_basis(d, n))).values
    assert inner(pu, pu, d) <= inner(u, u, d) * (1 + 1e-12)
    gu, gpu = gradient(Field(d, u)).values, gradient(Field(d, pu)).values
    assert np.sum(gpu * gpu) <= np.sum(gu * gu) * (1 + 1e-12)
