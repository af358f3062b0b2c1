"""Pointwise hot kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time from the ``LLG_GALERKIN_KERNELS``
environment variable (``numba`` or ``numpy``).  Without the variable numba is
used when it imports cleanly.  Both paths are always importable through
:data:`NUMPY` and :data:`NUMBA` so that tests and the benchmark can compare
them directly.

Vector arrays are component-first, shape ``(3, P)``, C-contiguous float64.
"""

import math
import os
from types import SimpleNamespace

import numpy as np

ENV_FLAG = "LLG_GALERKIN_KERNELS"


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------

_SHRINK = 1.0 - 2.0 ** -52


def _clip_np(u):
    mod = np.sqrt(np.einsum("ip,ip->p", u, u))
    out = u / np.maximum(1.0, mod)
    # rounding can leave |out| one ulp above 1; pull those back inside
    over = np.sqrt(np.einsum("ip,ip->p", out, out)) > 1.0
    while np.any(over):
        out[:, over] *= _SHRINK
        over = np.sqrt(np.einsum("ip,ip->p", out, out)) > 1.0
    return out


def _cross_np(a, b):
    return np.stack(
        (
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        )
    )


def _torque_np(u, h, alpha, gyro):
    c = _clip_np(u)
    ch = _cross_np(c, h)
    return alpha * _cross_np(c, ch) + gyro * ch


def _q_sum_np(u):
    mod = np.sqrt(np.einsum("ip,ip->p", u, u))
    out = mod > 1.0
    m = mod[out]
    return float(np.sum(m * m * (1.0 - 1.0 / m)))


def _max_modulus_np(u):
    return float(np.sqrt(np.max(np.einsum("ip,ip->p", u, u))))


def _newell_f_np(x, y, z):
    x, y, z = np.abs(x), np.abs(y), np.abs(z)
    x2, y2, z2 = x * x, y * y, z * z
    r = np.sqrt(x2 + y2 + z2)
    with np.errstate(divide="ignore", invalid="ignore"):
        rxz = np.sqrt(x2 + z2)
        rxy = np.sqrt(x2 + y2)
        t1 = np.where(rxz > 0, 0.5 * y * (z2 - x2) * np.arcsinh(y / rxz), 0.0)
        t2 = np.where(rxy > 0, 0.5 * z * (y2 - x2) * np.arcsinh(z / rxy), 0.0)
        t3 = np.where(x * r > 0, x * y * z * np.arctan(y * z / (x * r)), 0.0)
    return t1 + t2 - t3 + (2.0 * x2 - y2 - z2) * r / 6.0


def _newell_g_np(x, y, z):
    z = np.abs(z)
    x2, y2, z2 = x * x, y * y, z * z
    r = np.sqrt(x2 + y2 + z2)
    with np.errstate(divide="ignore", invalid="ignore"):
        rxy = np.sqrt(x2 + y2)
        ryz = np.sqrt(y2 + z2)
        rxz = np.sqrt(x2 + z2)
        t1 = np.where(rxy > 0, x * y * z * np.arcsinh(z / rxy), 0.0)
        t2 = np.where(ryz > 0, y / 6.0 * (3.0 * z2 - y2) * np.arcsinh(x / ryz), 0.0)
        t3 = np.where(rxz > 0, x / 6.0 * (3.0 * z2 - x2) * np.arcsinh(y / rxz), 0.0)
        t4 = np.where(z * r > 0, z2 * z / 6.0 * np.arctan(x * y / (z * r)), 0.0)
        t5 = np.where(y * r != 0, z * y2 / 2.0 * np.arctan(x * z / (y * r)), 0.0)
        t6 = np.where(x * r != 0, z * x2 / 2.0 * np.arctan(y * z / (x * r)), 0.0)
    return t1 + t2 + t3 - t4 - t5 - t6 - x * y * r / 3.0


NUMPY = SimpleNamespace(
    name="numpy",
    clip=_clip_np,
    torque=_torque_np,
    q_sum=_q_sum_np,
    max_modulus=_max_modulus_np,
    newell_f=_newell_f_np,
    newell_g=_newell_g_np,
)


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

def _build_numba():
    from numba import njit

    @njit(cache=True)
    def clip(u):
        out = np.empty_like(u)
        for p in range(u.shape[1]):
            m = math.sqrt(u[0, p] ** 2 + u[1, p] ** 2 + u[2, p] ** 2)
            if m > 1.0:
                c0, c1, c2 = u[0, p] / m, u[1, p] / m, u[2, p] / m
                while math.sqrt(c0 ** 2 + c1 ** 2 + c2 ** 2) > 1.0:
                    c0, c1, c2 = c0 * _SHRINK, c1 * _SHRINK, c2 * _SHRINK
            else:
                c0, c1, c2 = u[0, p], u[1, p], u[2, p]
            out[0, p] = c0
            out[1, p] = c1
            out[2, p] = c2
        return out

    @njit(cache=True)
    def torque(u, h, alpha, gyro):
        out = np.empty_like(u)
        for p in range(u.shape[1]):
            m = math.sqrt(u[0, p] ** 2 + u[1, p] ** 2 + u[2, p] ** 2)
            s = 1.0 / m if m > 1.0 else 1.0
            c0, c1, c2 = u[0, p] * s, u[1, p] * s, u[2, p] * s
            h0, h1, h2 = h[0, p], h[1, p], h[2, p]
            x0 = c1 * h2 - c2 * h1
            x1 = c2 * h0 - c0 * h2
            x2 = c0 * h1 - c1 * h0
            out[0, p] = alpha * (c1 * x2 - c2 * x1) + gyro * x0
            out[1, p] = alpha * (c2 * x0 - c0 * x2) + gyro * x1
            out[2, p] = alpha * (c0 * x1 - c1 * x0) + gyro * x2
        return out

    @njit(cache=True)
    def q_sum(u):
        acc = 0.0
        for p in range(u.shape[1]):
            m = math.sqrt(u[0, p] ** 2 + u[1, p] ** 2 + u[2, p] ** 2)
            if m > 1.0:
                acc += m * m * (1.0 - 1.0 / m)
        return acc

    @njit(cache=True)
    def max_modulus(u):
        best = 0.0
        for p in range(u.shape[1]):
            m2 = u[0, p] ** 2 + u[1, p] ** 2 + u[2, p] ** 2
            if m2 > best:
                best = m2
        return math.sqrt(best)

    @njit(cache=True)
    def _f(x, y, z):
        x, y, z = abs(x), abs(y), abs(z)
        x2, y2, z2 = x * x, y * y, z * z
        r = math.sqrt(x2 + y2 + z2)
        acc = (2.0 * x2 - y2 - z2) * r / 6.0
        if x2 + z2 > 0.0:
            acc += 0.5 * y * (z2 - x2) * math.asinh(y / math.sqrt(x2 + z2))
        if x2 + y2 > 0.0:
            acc += 0.5 * z * (y2 - x2) * math.asinh(z / math.sqrt(x2 + y2))
        if x * r > 0.0:
            acc -= x * y * z * math.atan(y * z / (x * r))
        return acc

    @njit(cache=True)
    def _g(x, y, z):
        z = abs(z)
        x2, y2, z2 = x * x, y * y, z * z
        r = math.sqrt(x2 + y2 + z2)
        acc = -x * y * r / 3.0
        if x2 + y2 > 0.0:
            acc += x * y * z * math.asinh(z / math.sqrt(x2 + y2))
        if y2 + z2 > 0.0:
            acc += y / 6.0 * (3.0 * z2 - y2) * math.asinh(x / math.sqrt(y2 + z2))
        if x2 + z2 > 0.0:
            acc += x / 6.0 * (3.0 * z2 - x2) * math.asinh(y / math.sqrt(x2 + z2))
        if z * r > 0.0:
            acc -= z2 * z / 6.0 * math.atan(x * y / (z * r))
        if y * r != 0.0:
            acc -= z * y2 / 2.0 * math.atan(x * z / (y * r))
        if x * r != 0.0:
            acc -= z * x2 / 2.0 * math.atan(y * z / (x * r))
        return acc

    @njit(cache=True)
    def newell_f(x, y, z):
        out = np.empty(x.shape[0])
        for i in range(x.shape[0]):
            out[i] = _f(x[i], y[i], z[i])
        return out

    @njit(cache=True)
    def newell_g(x, y, z):
        out = np.empty(x.shape[0])
        for i in range(x.shape[0]):
            out[i] = _g(x[i], y[i], z[i])
        return out

    return SimpleNamespace(
        name="numba",
        clip=clip,
        torque=torque,
        q_sum=q_sum,
        max_modulus=max_modulus,
        newell_f=newell_f,
        newell_g=newell_g,
    )


try:
    NUMBA = _build_numba()
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA = None


def _select():
    wanted = os.environ.get(ENV_FLAG, "").strip().lower()
    if wanted not in ("", "numba", "numpy"):
        raise ValueError(f"{ENV_FLAG} must be 'numba' or 'numpy', got {wanted!r}")
    if wanted == "numpy" or NUMBA is None:
        return NUMPY
    return NUMBA


ACTIVE = _select()


def _flat3(u):
    return np.ascontiguousarray(np.asarray(u, dtype=float).reshape(3, -1))


def clip(u):
    """Radial clipping ``u / max(1, |u|)`` on a ``(3, ...)`` array."""
    u = np.asarray(u, dtype=float)
    return ACTIVE.clip(_flat3(u)).reshape(u.shape)


def torque(u, h, alpha, gyro):
    """``alpha c x (c x h) + gyro c x h`` with ``c`` the clipped ``u``."""
    u = np.asarray(u, dtype=float)
    return ACTIVE.torque(_flat3(u), _flat3(h), float(alpha), float(gyro)).reshape(u.shape)


def q_sum(u):
    return ACTIVE.q_sum(_flat3(u))


def max_modulus(u):
    return ACTIVE.max_modulus(_flat3(u))


def newell_f(x, y, z):
    x, y, z = (np.ascontiguousarray(np.ravel(a), dtype=float) for a in (x, y, z))
    return ACTIVE.newell_f(x, y, z)


def newell_g(x, y, z):
    x, y, z = (np.ascontiguousarray(np.ravel(a), dtype=float) for a in (x, y, z))
    return ACTIVE.newell_g(x, y, z)
