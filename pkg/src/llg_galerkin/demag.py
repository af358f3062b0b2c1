"""Stray field of a magnetized box by open-boundary convolution.

The kernel holds cell-averaged second derivatives of the Newtonian potential
(Newell's f/g antiderivatives) for every cell offset.  Far away from the
source the exact cell-averaged values lose all their digits to cancellation,
so beyond ``far_field`` cell widths the point-dipole tensor is used instead,
which agrees with the cell average to ``O((h/r)^2)``.

Convolution zero-pads every axis to twice its length, so the result is the
field of ``u`` restricted to the box, with nothing outside.
"""

import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import DomainMismatch, WrongDimension
from .grid import BoxDomain, Field

# component order of the symmetric tensor
PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
_INDEX = {p: k for k, p in enumerate(PAIRS)}
_INDEX.update({(j, i): k for (i, j), k in list(_INDEX.items())})

MAGIC = b"DMGK"
VERSION = 1


@dataclass(frozen=True, eq=False)
class DemagKernel:
    """Field weights ``K_ij`` (``h = K * u``) on offsets ``-(n-1)..n-1`` per axis.

    ``tensors`` has shape ``(6, 2n1-1, 2n2-1, 2n3-1)`` in :data:`PAIRS` order;
    offset ``(0, 0, 0)`` sits at index ``(n1-1, n2-1, n3-1)``.
    """

    domain: BoxDomain
    tensors: np.ndarray
    far_field: float = 30.0

    @property
    def build_resolution(self):
        return self.domain.resolution

    def self_term(self):
        c = tuple(n - 1 for n in self.domain.resolution)
        return np.array([[self.tensors[_INDEX[(i, j)]][c] for j in range(3)] for i in range(3)])

    def at_offset(self, offset):
        idx = tuple(o + n - 1 for o, n in zip(offset, self.domain.resolution))
        return np.array([[self.tensors[_INDEX[(i, j)]][idx] for j in range(3)] for i in range(3)])

    @property
    def spectra(self):
        spectra = self.__dict__.get("_spectra")
        if spectra is None:
            spectra = _kernel_spectra(self.tensors, self.domain.resolution)
            object.__setattr__(self, "_spectra", spectra)
        return spectra


def _offset_axes(domain, scale, pad):
    return [np.arange(-(n - 1) - pad, n + pad) * (h / scale)
            for n, h in zip(domain.resolution, domain.spacing)]


def _second_difference(arr, axis):
    """``2 F[i] - F[i-1] - F[i+1]``; shortens ``axis`` by two."""
    n = arr.shape[axis]
    mid = np.take(arr, np.arange(1, n - 1), axis=axis)
    lo = np.take(arr, np.arange(0, n - 2), axis=axis)
    hi = np.take(arr, np.arange(2, n), axis=axis)
    return 2.0 * mid - lo - hi


def _newell(domain, scale):
    """Cell-averaged demag tensor ``N`` (``h = -N u``) on all offsets."""
    axes = _offset_axes(domain, scale, pad=1)
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    shape = X.shape
    hx, hy, hz = (h / scale for h in domain.spacing)
    vol = hx * hy * hz
    args = {
        (0, 0): ("f", X, Y, Z),
        (1, 1): ("f", Y, Z, X),
        (2, 2): ("f", Z, X, Y),
        (0, 1): ("g", X, Y, Z),
        (0, 2): ("g", X, Z, Y),
        (1, 2): ("g", Y, Z, X),
    }
    out = []
    for pair in PAIRS:
        kind, a, b, c = args[pair]
        fn = _kernels.newell_f if kind == "f" else _kernels.newell_g
        F = fn(a, b, c).reshape(shape)
        for ax in range(3):
            F = _second_difference(F, ax)
        out.append(F / (4.0 * np.pi * vol))
    return np.stack(out), vol


def _dipole(domain, scale, vol):
    axes = _offset_axes(domain, scale, pad=0)
    R = np.stack(np.meshgrid(*axes, indexing="ij"))
    r2 = np.sum(R * R, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv3 = np.where(r2 > 0, r2 ** -1.5, 0.0)
        inv5 = np.where(r2 > 0, r2 ** -2.5, 0.0)
    out = []
    for i, j in PAIRS:
        delta = 1.0 if i == j else 0.0
        out.append(vol / (4.0 * np.pi) * (delta * inv3 - 3.0 * R[i] * R[j] * inv5))
    return np.stack(out), np.sqrt(r2)


def build_kernel(domain, far_field=30.0):
    """Precompute the demag field weights for a 3-D box."""
    if not isinstance(domain, BoxDomain) or domain.dim != 3:
        raise WrongDimension("the demagnetizing field is defined on 3-D boxes only")
    scale = max(domain.spacing)
    N, vol = _newell(domain, scale)
    if far_field is not None and far_field > 0:
        dip, dist = _dipole(domain, scale, vol)
        far = dist >= far_field
        N[:, far] = dip[:, far]
    return DemagKernel(domain, -N, float(far_field or 0.0))


@lru_cache(maxsize=4)
def kernel_for(domain):
    """Cached :func:`build_kernel` for repeated field evaluations."""
    return build_kernel(domain)


def _kernel_spectra(tensors, res):
    padded = tuple(2 * n for n in res)
    spectra = []
    for comp in tensors:
        buf = np.zeros(padded)
        # place offset o at index o mod 2n
        idx = [np.arange(-(n - 1), n) % (2 * n) for n in res]
        buf[np.ix_(*idx)] = comp
        spectra.append(np.fft.rfftn(buf))
    return np.stack(spectra)


def demag_field_array(u, kernel):
    """``(3, n1, n2, n3)`` magnetization samples -> stray field samples."""
    res = kernel.domain.resolution
    u = np.asarray(u, dtype=float)
    if u.shape != (3,) + res:
        raise DomainMismatch(f"expected samples of shape {(3,) + res}, got {u.shape}")
    padded = tuple(2 * n for n in res)
    U = np.fft.rfftn(u, s=padded, axes=(1, 2, 3))
    spectra = kernel.spectra
    out = np.empty_like(u)
    for i in range(3):
        H = sum(spectra[_INDEX[(i, j)]] * U[j] for j in range(3))
        out[i] = np.fft.irfftn(H, s=padded, axes=(0, 1, 2))[: res[0], : res[1], : res[2]]
    return out


def demag_field(u, kernel):
    if u.domain != kernel.domain:
        raise DomainMismatch("field and kernel live on different domains")
    return Field(u.domain, demag_field_array(u.values, kernel))


class NormProbe(NamedTuple):
    probe: float
    power: float


def operator_norm_probe(kernel, trials=8, seed=0, power_iters=60):
    """Largest observed ``||h_d(u)|| / ||u||`` over random fields, and a power
    iteration estimate of the discrete operator norm (the operator is
    symmetric, so this converges to its spectral radius)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    shape = (3,) + kernel.domain.resolution
    best = 0.0
    for _ in range(trials):
        u = rng.normal(size=shape)
        best = max(best, float(np.linalg.norm(demag_field_array(u, kernel)) / np.linalg.norm(u)))
    v = rng.normal(size=shape)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(power_iters):
        w = demag_field_array(v, kernel)
        est = float(np.linalg.norm(w))
        if est == 0.0:
            break
        v = w / est
    return NormProbe(best, est)


# --------------------------------------------------------------------------
# direct cell-to-point quadrature (independent of the Newell kernel)
# --------------------------------------------------------------------------

def cuboid_point_tensor(R, half):
    """Field weights at displacement ``R`` (shape ``(3, P)``) from the centre of
    a uniformly magnetized cuboid with half sizes ``half``.

    Uses the closed-form arctan/log integrals of the dipole kernel over the
    cuboid.  Returns ``(3, 3, P)`` with ``h = W m``.  Points on a face plane
    of the cuboid are not supported.
    """
    R = np.asarray(R, dtype=float)
    W = np.zeros((3, 3) + R.shape[1:])
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            for sz in (-1.0, 1.0):
                x = R[0] + sx * half[0]
                y = R[1] + sy * half[1]
                z = R[2] + sz * half[2]
                r = np.sqrt(x * x + y * y + z * z)
                sgn = sx * sy * sz / (4.0 * np.pi)
                W[0, 0] += sgn * np.arctan(y * z / (x * r))
                W[1, 1] += sgn * np.arctan(x * z / (y * r))
                W[2, 2] += sgn * np.arctan(x * y / (z * r))
                W[0, 1] -= sgn * np.log(np.abs(z + r))
                W[0, 2] -= sgn * np.log(np.abs(y + r))
                W[1, 2] -= sgn * np.log(np.abs(x + r))
    # orientation fixed so that the centre of a cube sees -1/3 on the diagonal
    W = -W
    W[1, 0], W[2, 0], W[2, 1] = W[0, 1], W[0, 2], W[1, 2]
    return W


def direct_field_at(u, points):
    """Stray field of the sampled magnetization at arbitrary points by direct
    summation of exact per-cell integrals; ``points`` has shape ``(3, P)``."""
    dom = u.domain
    coords = np.stack([c.ravel() for c in dom.coordinates()])
    m = u.values.reshape(3, -1)
    active = np.any(m != 0.0, axis=0)
    coords, m = coords[:, active], m[:, active]
    half = np.array(dom.spacing) / 2.0
    points = np.asarray(points, dtype=float)
    out = np.zeros(points.shape)
    for p in range(points.shape[1]):
        W = cuboid_point_tensor(points[:, p: p + 1] - coords, half)
        out[:, p] = np.einsum("ijk,jk->i", W, m)
    return out


# --------------------------------------------------------------------------
# cache file
# --------------------------------------------------------------------------

def save_kernel(kernel, path):
    dom = kernel.domain
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<q", dom.dim))
        fh.write(struct.pack("<3d", *dom.lengths))
        fh.write(struct.pack("<3q", *dom.resolution))
        fh.write(struct.pack("<d", kernel.far_field))
        fh.write(np.ascontiguousarray(kernel.tensors, dtype="<f8").tobytes())


def load_kernel(path, domain=None):
    """Read a kernel cache; if ``domain`` is given it must match the file."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a demag kernel cache")
    (version,) = struct.unpack_from("<B", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    off = 5
    (dim,) = struct.unpack_from("<q", data, off)
    off += 8
    if dim != 3:
        raise WrongDimension(f"{path}: cache for dim={dim}")
    lengths = struct.unpack_from("<3d", data, off)
    off += 24
    res = struct.unpack_from("<3q", data, off)
    off += 24
    (far,) = struct.unpack_from("<d", data, off)
    off += 8
    cached = BoxDomain(lengths, res)
    if domain is not None and (cached.lengths, cached.resolution) != (domain.lengths, domain.resolution):
        raise DomainMismatch(f"{path}: cache built for {cached}, wanted {domain}")
    shape = (6,) + tuple(2 * n - 1 for n in res)
    tensors = np.frombuffer(data, dtype="<f8", offset=off).reshape(shape).astype(float)
    return DemagKernel(domain or cached, tensors, far)
