import numpy as np
import pytest

from convexcip import io
from convexcip.model import CauchyData, Grid3D, MeasurementSet


@pytest.fixture
def meas():
    rng = np.random.default_rng(3)
    x = np.linspace(-1, 1, 5)
    y = np.linspace(-0.5, 0.5, 3)
    s = rng.standard_normal((2, 5, 3)) + 1j * rng.standard_normal((2, 5, 3))
    return MeasurementSet(-14.0, x, y, np.array([0.2, 0.4]), s)


def test_measurement_roundtrip_is_exact(meas, tmp_path):
    io.save_measurements(meas, tmp_path / "m.csv")
    back = io.load_measurements(tmp_path / "m.csv")
    np.testing.assert_array_equal(back.samples, meas.samples)
    np.testing.assert_array_equal(back.x, meas.x)
    np.testing.assert_array_equal(back.alphas, meas.alphas)


def test_row_order_is_immaterial(meas, tmp_path):
    io.save_measurements(meas, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    (tmp_path / "r.csv").write_text("\n".join([lines[0]] + lines[1:][::-1]) + "\n")
    np.testing.assert_array_equal(io.load_measurements(tmp_path / "r.csv").samples, meas.samples)


def test_duplicate_and_missing_samples(meas, tmp_path):
    io.save_measurements(meas, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    (tmp_path / "d.csv").write_text("\n".join(lines + [lines[3]]) + "\n")
    with pytest.raises(io.ParseError, match="d.csv:32: duplicate"):
        io.load_measurements(tmp_path / "d.csv")
    (tmp_path / "g.csv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(io.ParseError, match="missing"):
        io.load_measurements(tmp_path / "g.csv")


@pytest.mark.parametrize("bad, msg", [("0.2,0,0,nan,0", "non-finite"), ("0.2,0,0,1", "expected 5 columns"), ("0.2,a,0,1,1", "non-numeric")])
def test_malformed_rows_name_the_line(meas, tmp_path, bad, msg):
    io.save_measurements(meas, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    lines[4] = bad
    (tmp_path / "b.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(io.ParseError, match=f":5: {msg}"):
        io.load_measurements(tmp_path / "b.csv")


def test_wrong_header(tmp_path):
    (tmp_path / "h.csv").write_text("a,b,c\n1,2,3\n")
    with pytest.raises(io.ParseError, match=":1: expected header"):
        io.load_measurements(tmp_path / "h.csv")


def test_cauchy_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    x = np.linspace(-1, 1, 4)
    p0, p1 = (rng.standard_normal((3, 4, 4)) + 1j * rng.standard_normal((3, 4, 4)) for _ in range(2))
    io.save_cauchy(CauchyData(x, x, p0, p1), tmp_path / "c.csv")
    back = io.load_cauchy(tmp_path / "c.csv")
    np.testing.assert_array_equal(back.psi0, p0)
    np.testing.assert_array_equal(back.psi1, p1)


def test_near_field_roundtrip(meas, tmp_path):
    dU = 2 * meas.samples[:, ::-1]
    io.save_near_field(meas.alphas, meas.x, meas.y, meas.samples, dU, tmp_path / "n.csv")
    a, x, y, U, dU2 = io.load_near_field(tmp_path / "n.csv")
    np.testing.assert_array_equal(U, meas.samples)
    np.testing.assert_array_equal(dU2, dU)
    np.testing.assert_array_equal(a, meas.alphas)


def test_vtk_roundtrip_and_isovalue(tmp_path):
    g = Grid3D(4, 4, 5, (-1.0, -1.0, -2.0), (0.5, 0.5, 1.0))
    X, Y, Z = g.mesh()
    f = 1 + X**2 + 2 * Y + 0.1 * Z
    meta = io.export_scalar_field(f, g, tmp_path / "f.vtk", extra={"mask": f > 2})
    assert meta["isovalue"] == pytest.approx(0.1 * f.max())
    g2, blocks = io.read_scalar_field(tmp_path / "f.vtk")
    assert g2.shape == g.shape and g2.origin == g.origin and g2.step == g.step
    np.testing.assert_array_equal(blocks["c_comp"], f)
    np.testing.assert_array_equal(blocks["mask"], (f > 2).astype(float))
    # x varies fastest in the file
    first = (tmp_path / "f.vtk").read_text().split("LOOKUP_TABLE default\n")[1].split("\n")[:2]
    assert [float(v) for v in first] == [f[0, 0, 0], f[1, 0, 0]]


def test_vtk_rejects_nonfinite(tmp_path):
    g = Grid3D(3, 3, 3, (0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    with pytest.raises(ValueError, match="non-finite"):
        io.export_scalar_field(np.full(g.shape, np.nan), g, tmp_path / "x.vtk")
