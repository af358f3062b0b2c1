"""Snapshot files (binary ``LLGF`` and legacy VTK) for magnetization samples.

``LLGF`` layout, all little-endian::

    b"LLGF"  u8 version  i64 dim  i64 resolution[dim]  f64 time
    f64 samples[resolution..., 3]      (row-major, components interleaved)
"""

import struct

import numpy as np

MAGIC = b"LLGF"
VERSION = 1


def write_snapshot(path, values, time):
    """Write ``(3, *resolution)`` samples taken at ``time``."""
    values = np.asarray(values, dtype=float)
    res = values.shape[1:]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<q", len(res)))
        fh.write(struct.pack(f"<{len(res)}q", *res))
        fh.write(struct.pack("<d", float(time)))
        fh.write(np.ascontiguousarray(np.moveaxis(values, 0, -1), dtype="<f8").tobytes())


def read_snapshot(path):
    """Return ``(values, time)`` with ``values`` of shape ``(3, *resolution)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not an LLGF snapshot")
    (version,) = struct.unpack_from("<B", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    (dim,) = struct.unpack_from("<q", data, 5)
    res = struct.unpack_from(f"<{dim}q", data, 13)
    off = 13 + 8 * dim
    (time,) = struct.unpack_from("<d", data, off)
    off += 8
    expected = int(np.prod(res)) * 3
    flat = np.frombuffer(data, dtype="<f8", offset=off)
    if flat.size != expected:
        raise ValueError(f"{path}: expected {expected} samples, found {flat.size}")
    values = np.moveaxis(flat.reshape(tuple(res) + (3,)), -1, 0).astype(float)
    return values, time


def write_vtk(path, values, domain, time=0.0, name="u"):
    """Legacy ASCII ``STRUCTURED_POINTS`` file; missing axes are padded to 1."""
    values = np.asarray(values, dtype=float)
    res = list(domain.resolution) + [1] * (3 - domain.dim)
    spacing = list(domain.spacing) + [1.0] * (3 - domain.dim)
    origin = [h / 2 for h in spacing[: domain.dim]] + [0.0] * (3 - domain.dim)
    # VTK wants x varying fastest
    pts = np.moveaxis(values.reshape((3,) + tuple(res)), 0, -1).transpose(2, 1, 0, 3).reshape(-1, 3)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"magnetization t={time:.17g}\n")
        fh.write("ASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write("DIMENSIONS {} {} {}\n".format(*res))
        fh.write("ORIGIN {:.17g} {:.17g} {:.17g}\n".format(*origin))
        fh.write("SPACING {:.17g} {:.17g} {:.17g}\n".format(*spacing))
        fh.write(f"POINT_DATA {len(pts)}\n")
        fh.write(f"VECTORS {name} double\n")
        np.savetxt(fh, pts, fmt="%.17g")
