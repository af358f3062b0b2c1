"""Box domains, the Neumann/periodic eigenbasis of ``Delta - I`` and spectral calculus.

Grids are midpoint-shifted and uniform, ``x_j = (j + 1/2) L / N``.  On such a
grid the sampled cosine (or real Fourier) modes are exactly orthonormal under
uniform-weight quadrature, so projection, Parseval and integration by parts
hold to roundoff for band-limited fields.

Every transform is a tensor product of small dense 1-D matrices, applied one
axis at a time.  Fields are stored component-first: ``values.shape ==
leading_shape + resolution``.
"""

from dataclasses import dataclass, field as dc_field
from enum import Enum
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import BadDomain, DomainMismatch, TruncationTooLarge


class Boundary(str, Enum):
    NEUMANN = "neumann"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class BoxDomain:
    lengths: tuple
    resolution: tuple
    boundary: Boundary = Boundary.NEUMANN

    def __post_init__(self):
        try:
            lengths = tuple(float(v) for v in self.lengths)
            resolution = tuple(int(v) for v in self.resolution)
            boundary = Boundary(self.boundary)
        except (TypeError, ValueError) as exc:
            raise BadDomain(str(exc)) from exc
        if len(lengths) == 0 or len(lengths) != len(resolution):
            raise BadDomain("lengths and resolution must be non-empty and of equal length")
        if not all(np.isfinite(v) and v > 0 for v in lengths):
            raise BadDomain(f"lengths must be positive and finite, got {lengths}")
        if any(n < 4 for n in resolution):
            raise BadDomain(f"every axis needs at least 4 grid points, got {resolution}")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "resolution", resolution)
        object.__setattr__(self, "boundary", boundary)

    @property
    def dim(self):
        return len(self.lengths)

    @property
    def volume(self):
        return float(np.prod(self.lengths))

    @property
    def spacing(self):
        return tuple(L / n for L, n in zip(self.lengths, self.resolution))

    @property
    def n_points(self):
        return int(np.prod(self.resolution))

    @property
    def cell_volume(self):
        return self.volume / self.n_points

    def axis_points(self, axis):
        L, n = self.lengths[axis], self.resolution[axis]
        return (np.arange(n) + 0.5) * (L / n)

    def coordinates(self):
        """Tuple of ``dim`` coordinate arrays, each of shape ``resolution``."""
        return tuple(np.meshgrid(*(self.axis_points(i) for i in range(self.dim)), indexing="ij"))


# --------------------------------------------------------------------------
# 1-D mode families
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class _AxisModes:
    labels: np.ndarray      # signed mode labels; periodic k < 0 means sine
    wavenumber: np.ndarray  # -f'' = w^2 f
    values: np.ndarray      # (N, M) samples of the normalized modes
    deriv: np.ndarray       # (N, M) samples of their first derivatives


def _full_labels(n, boundary):
    if boundary is Boundary.NEUMANN:
        return np.arange(n)
    labels = [0]
    for k in range(1, (n - 1) // 2 + 1):
        labels += [k, -k]
    if n % 2 == 0:
        labels.append(-(n // 2))
    return np.array(labels)


def _dealiased(labels, n, boundary):
    """Labels whose quadratic products are resolved exactly by the 3/2 rule."""
    if boundary is Boundary.NEUMANN:
        return 3 * labels < 2 * n
    return 3 * np.abs(labels) < n


def _axis_modes(L, n, boundary, labels):
    labels = np.asarray(labels, dtype=int)
    x = (np.arange(n) + 0.5) * (L / n)
    values = np.empty((n, labels.size))
    deriv = np.empty((n, labels.size))
    if boundary is Boundary.NEUMANN:
        w = labels * np.pi / L
        norm = np.where(labels == 0, np.sqrt(1.0 / L), np.sqrt(2.0 / L))
        values[:] = norm * np.cos(np.outer(x, w))
        deriv[:] = -norm * w * np.sin(np.outer(x, w))
    else:
        k = np.abs(labels)
        w = 2.0 * np.pi * k / L
        nyquist = 2 * k == n
        norm = np.where((labels == 0) | nyquist, np.sqrt(1.0 / L), np.sqrt(2.0 / L))
        arg = np.outer(x, w)
        is_sin = labels < 0
        values[:] = np.where(is_sin, np.sin(arg), np.cos(arg)) * norm
        deriv[:] = np.where(is_sin, np.cos(arg), -np.sin(arg)) * (norm * w)
    return _AxisModes(labels, w, values, deriv)


def _contract(arr, mats):
    """Apply ``mats[i]`` along the spatial axis ``i`` of ``arr`` (trailing axes)."""
    lead = arr.ndim - len(mats)
    for i, mat in enumerate(mats):
        ax = lead + i
        arr = np.moveaxis(np.tensordot(mat, arr, axes=(1, ax)), 0, ax)
    return arr


class _Transform:
    """Tensor-product analysis/synthesis for a fixed set of 1-D modes per axis."""

    def __init__(self, domain, labels_per_axis):
        self.domain = domain
        self.axes = [
            _axis_modes(L, n, domain.boundary, labels)
            for L, n, labels in zip(domain.lengths, domain.resolution, labels_per_axis)
        ]
        weights = domain.spacing
        self._fwd = [ax.values.T * h for ax, h in zip(self.axes, weights)]
        self._inv = [ax.values for ax in self.axes]
        self.block_shape = tuple(ax.labels.size for ax in self.axes)
        w2 = np.zeros(self.block_shape)
        for i, ax in enumerate(self.axes):
            shape = [1] * domain.dim
            shape[i] = -1
            w2 = w2 + (ax.wavenumber ** 2).reshape(shape)
        self.laplace_symbol = -w2

    def forward(self, values):
        return _contract(values, self._fwd)

    def inverse(self, block):
        return _contract(block, self._inv)

    def derivative(self, block, axis):
        mats = list(self._inv)
        mats[axis] = self.axes[axis].deriv
        return _contract(block, mats)

    def second_derivative(self, block, i, j):
        mats = list(self._inv)
        if i == j:
            ax = self.axes[i]
            mats[i] = -ax.values * ax.wavenumber ** 2
        else:
            mats[i] = self.axes[i].deriv
            mats[j] = self.axes[j].deriv
        return _contract(block, mats)


@lru_cache(maxsize=32)
def full_transform(domain):
    """Transform over every mode the grid carries (used for generic fields)."""
    return _Transform(domain, [_full_labels(n, domain.boundary) for n in domain.resolution])


# --------------------------------------------------------------------------
# Fields and bases
# --------------------------------------------------------------------------

@dataclass
class Field:
    """Samples of a scalar, vector or tensor field on the grid of ``domain``.

    ``values`` has shape ``leading + domain.resolution``; a scalar field uses a
    single leading component, a magnetization three.
    """

    domain: BoxDomain
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        res = self.domain.resolution
        if self.values.ndim < len(res) or self.values.shape[self.values.ndim - len(res):] != res:
            raise DomainMismatch(
                f"sample shape {self.values.shape} does not end with resolution {res}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field samples must be finite")

    @property
    def ncomp(self):
        return self.values.shape[: self.values.ndim - self.domain.dim]


ScalarField = Field
VectorField = Field


def _require_same_domain(*doms):
    first = doms[0]
    for d in doms[1:]:
        if d != first:
            raise DomainMismatch(f"domains differ: {first} vs {d}")


class SpectralBasis:
    """The ``n`` lowest eigenpairs of ``Delta - I`` on a box.

    ``modes[i]`` is the multi-index of mode ``i`` and ``eigenvalues[i]`` its
    ``lambda_i`` with ``(Delta - I) f_i = -lambda_i f_i``.  Modes are sorted by
    eigenvalue, ties broken lexicographically by multi-index.
    """

    def __init__(self, domain, n):
        self.domain = domain
        self.truncation = int(n)
        if self.truncation < 1:
            raise TruncationTooLarge("truncation n must be at least 1")
        allowed = []
        for L, npts in zip(domain.lengths, domain.resolution):
            labels = _full_labels(npts, domain.boundary)
            allowed.append(labels[_dealiased(labels, npts, domain.boundary)])
        grids = np.meshgrid(*allowed, indexing="ij")
        multi = np.stack([g.ravel() for g in grids], axis=1)
        if self.truncation > multi.shape[0]:
            raise TruncationTooLarge(
                f"n={self.truncation} exceeds the {multi.shape[0]} modes representable "
                f"on resolution {domain.resolution} under the 3/2 dealiasing rule"
            )
        probe = _Transform(domain, allowed)
        lam = 1.0 - probe.laplace_symbol.ravel()
        order = np.lexsort(tuple(multi[:, j] for j in range(domain.dim - 1, -1, -1)) + (lam,))
        chosen = order[: self.truncation]
        self.modes = multi[chosen]
        self.eigenvalues = lam[chosen]

        used = [np.unique(self.modes[:, j]) for j in range(domain.dim)]
        self._transform = _Transform(domain, used)
        pos = [np.searchsorted(u, self.modes[:, j]) for j, u in enumerate(used)]
        self._flat = np.ravel_multi_index(tuple(pos), self._transform.block_shape)
        self._block_size = int(np.prod(self._transform.block_shape))

    def __repr__(self):
        return f"SpectralBasis(n={self.truncation}, domain={self.domain})"

    @property
    def n(self):
        return self.truncation

    @property
    def laplace_eigenvalues(self):
        """Eigenvalues of ``-Delta``: ``lambda_i - 1``."""
        return self.eigenvalues - 1.0

    # array-level kernels used by the solver ---------------------------------

    def _scatter(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        lead = coeffs.shape[1:]
        block = np.zeros(lead + (self._block_size,))
        block[..., self._flat] = np.moveaxis(coeffs, 0, -1)
        return block.reshape(lead + self._transform.block_shape)

    def synthesize_array(self, coeffs):
        """``(n, *c)`` coefficients -> ``(*c, *resolution)`` samples."""
        return self._transform.inverse(self._scatter(coeffs))

    def analyze_array(self, values):
        """``(*c, *resolution)`` samples -> ``(n, *c)`` projection coefficients."""
        block = self._transform.forward(np.asarray(values, dtype=float))
        lead = block.shape[: block.ndim - self.domain.dim]
        flat = block.reshape(lead + (self._block_size,))[..., self._flat]
        return np.moveaxis(flat, -1, 0)

    def gradient_array(self, coeffs):
        """``(n, *c)`` -> ``(dim, *c, *resolution)`` exact derivatives of the sum."""
        block = self._scatter(coeffs)
        return np.stack([self._transform.derivative(block, i) for i in range(self.domain.dim)])

    def laplacian_coeffs(self, coeffs):
        return -self.laplace_eigenvalues.reshape((-1,) + (1,) * (np.ndim(coeffs) - 1)) * coeffs


@dataclass
class ModeCoefficients:
    basis: SpectralBasis
    coeffs: np.ndarray = dc_field(default=None)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape[0] != self.basis.n:
            raise ValueError(f"expected {self.basis.n} rows, got {self.coeffs.shape}")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("coefficients must be finite")


# --------------------------------------------------------------------------
# Public operations
# --------------------------------------------------------------------------

def build_basis(domain, n):
    """Return the ``n`` lowest eigenpairs of ``Delta - I`` on ``domain``."""
    if not isinstance(domain, BoxDomain):
        raise BadDomain(f"expected BoxDomain, got {type(domain).__name__}")
    return SpectralBasis(domain, n)


def analyze(field, basis):
    """L2 projection coefficients ``<field, f_i>`` for every basis mode."""
    _require_same_domain(field.domain, basis.domain)
    return ModeCoefficients(basis, basis.analyze_array(field.values))


def synthesize(coeffs):
    basis = coeffs.basis
    return Field(basis.domain, basis.synthesize_array(coeffs.coeffs))


def laplacian(field):
    t = full_transform(field.domain)
    return Field(field.domain, t.inverse(t.laplace_symbol * t.forward(field.values)))


def gradient(field):
    """Spectral gradient; the new axis (length ``dim``) is prepended."""
    t = full_transform(field.domain)
    block = t.forward(field.values)
    return Field(field.domain, np.stack([t.derivative(block, i) for i in range(field.domain.dim)]))


def directional_derivative(J, u):
    """``(J . grad) u`` pointwise, ``J`` having ``dim`` components."""
    _require_same_domain(J.domain, u.domain)
    if J.values.shape[0] != u.domain.dim:
        raise DomainMismatch(f"J needs {u.domain.dim} components, got {J.values.shape[0]}")
    grad = gradient(u).values
    return Field(u.domain, np.einsum("i...,i...->...", J.values[:, None], grad))


def inner(a, b, domain):
    """Uniform-weight quadrature of the pointwise dot product over components."""
    return float(np.sum(a * b) * domain.cell_volume)


class Norms(NamedTuple):
    l2: float
    h1: float
    h2_equiv: float
    h2: float


def norms(field):
    """L2, H1, the ``|u| + |Delta u|`` H2 norm and the full Sobolev H2 norm."""
    d = field.domain
    t = full_transform(d)
    block = t.forward(field.values)
    vol = d.cell_volume
    l2_sq = float(np.sum(field.values ** 2) * vol)
    grads = [t.derivative(block, i) for i in range(d.dim)]
    grad_sq = sum(float(np.sum(g ** 2) * vol) for g in grads)
    lap = t.inverse(t.laplace_symbol * block)
    lap_l2 = float(np.sqrt(np.sum(lap ** 2) * vol))
    hess_sq = sum(
        float(np.sum(t.second_derivative(block, i, j) ** 2) * vol)
        for i in range(d.dim)
        for j in range(d.dim)
    )
    l2 = np.sqrt(l2_sq)
    return Norms(
        l2=float(l2),
        h1=float(np.sqrt(l2_sq + grad_sq)),
        h2_equiv=float(l2 + lap_l2),
        h2=float(np.sqrt(l2_sq + grad_sq + hess_sq)),
    )
