import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from llg_galerkin.grid import BoxDomain
from llg_galerkin.io import read_snapshot, write_snapshot, write_vtk


@given(values=arrays(np.float64, st.tuples(st.just(3), st.integers(1, 5), st.integers(1, 4)),
                     elements=st.floats(allow_nan=False, allow_infinity=False)),
       time=st.floats(0, 1e6))
def test_snapshot_round_trip_is_exact(tmp_path_factory, values, time):
    path = tmp_path_factory.mktemp("snap") / "u.llgf"
    write_snapshot(path, values, time)
    back, t = read_snapshot(path)
    np.testing.assert_array_equal(back, values)
    assert t == time


def test_snapshot_layout(tmp_path):
    v = np.arange(3 * 2 * 2, dtype=float).reshape(3, 2, 2)
    write_snapshot(tmp_path / "u.llgf", v, 0.5)
    raw = (tmp_path / "u.llgf").read_bytes()
    assert raw[:5] == b"LLGF\x01"
    assert len(raw) == 4 + 1 + 8 + 16 + 8 + 12 * 8
    # components are interleaved per sample
    first = np.frombuffer(raw[-96:-72], dtype="<f8")
    np.testing.assert_array_equal(first, v[:, 0, 0])


def test_snapshot_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad"
    bad.write_bytes(b"XXXX")
    with pytest.raises(ValueError, match="not an LLGF"):
        read_snapshot(bad)
    write_snapshot(tmp_path / "u.llgf", np.zeros((3, 4)), 0.0)
    truncated = tmp_path / "short.llgf"
    truncated.write_bytes((tmp_path / "u.llgf").read_bytes()[:-8])
    with pytest.raises(ValueError, match="expected 12 samples"):
        read_snapshot(truncated)


def test_vtk_header_and_ordering(tmp_path):
    d = BoxDomain((2.0, 2.0), (4, 4))
    v = np.zeros((3, 4, 4))
    v[0] = np.arange(4)[:, None]
    v[1] = np.arange(4)[None, :]
    write_vtk(tmp_path / "u.vtk", v, d, time=0.25)
    lines = (tmp_path / "u.vtk").read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert "DIMENSIONS 4 4 1" in lines
    assert "SPACING 0.5 0.5 1" in lines
    assert "ORIGIN 0.25 0.25 0" in lines
    assert "POINT_DATA 16" in lines
    data = np.loadtxt(lines[lines.index("VECTORS u double") + 1:])
    # x varies fastest
    np.testing.assert_array_equal(data[:4, 0], [0, 1, 2, 3])
    np.testing.assert_array_equal(data[:4, 1], 0)
    np.testing.assert_array_equal(data[4:8, 1], 1)
