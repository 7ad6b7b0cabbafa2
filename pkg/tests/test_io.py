import json

import numpy as np
import pytest

from conftest import band_limited
from vesicle_pf.io import (
    IoError,
    read_checkpoint,
    read_raw,
    read_vti,
    write_checkpoint,
    write_raw,
    write_snapshot,
    write_vti,
)
from vesicle_pf.spectral import GridSpec, ScalarField3D


@pytest.fixture
def field(rng):
    g = GridSpec(8, 6, 4, 1.0, 0.75, 0.5)
    return ScalarField3D(g, band_limited(g, rng))


class TestRaw:
    def test_size_64(self, tmp_path):
        g = GridSpec.cube(64)
        path = write_raw(tmp_path / "phi.raw", ScalarField3D.constant(g, 0.5))
        assert path.stat().st_size == 64**3 * 8 == 2_097_152

    def test_bit_exact_round_trip(self, tmp_path, field):
        write_raw(tmp_path / "phi.raw", field, step=12, time=6e-6)
        back, meta = read_raw(tmp_path / "phi.raw")
        assert back.grid == field.grid
        np.testing.assert_array_equal(back.values, field.values)
        assert meta["step"] == 12 and meta["time"] == 6e-6
        assert meta["dims"] == [8, 6, 4] and meta["lengths"] == [1.0, 0.75, 0.5]

    def test_layout_little_endian_x_fastest(self, tmp_path, field):
        write_raw(tmp_path / "phi.raw", field)
        raw = np.frombuffer((tmp_path / "phi.raw").read_bytes(), dtype="<f8")
        assert raw[1] == field.values[1, 0, 0]
        assert raw[8] == field.values[0, 1, 0]
        assert raw[48] == field.values[0, 0, 1]

    def test_sidecar_is_json(self, tmp_path, field):
        write_raw(tmp_path / "phi.raw", field)
        meta = json.loads((tmp_path / "phi.raw.json").read_text())
        assert meta["format_version"] == 1

    def test_non_finite_refused(self, tmp_path):
        g = GridSpec.cube(4)
        f = ScalarField3D.__new__(ScalarField3D)
        object.__setattr__(f, "grid", g)
        object.__setattr__(f, "values", np.full(g.shape, np.nan))
        with pytest.raises(IoError):
            write_raw(tmp_path / "bad.raw", f)

    def test_missing_and_truncated(self, tmp_path, field):
        with pytest.raises(IoError):
            read_raw(tmp_path / "nothing.raw")
        write_raw(tmp_path / "phi.raw", field)
        (tmp_path / "phi.raw").write_bytes(b"\0" * 16)
        with pytest.raises(IoError):
            read_raw(tmp_path / "phi.raw")


class TestVti:
    def test_round_trip(self, tmp_path, field):
        write_vti(tmp_path / "phi.vti", field, step=3, time=1.5e-6)
        back, meta = read_vti(tmp_path / "phi.vti")
        np.testing.assert_array_equal(back.values, field.values)
        assert back.grid.shape == field.grid.shape
        np.testing.assert_allclose(back.grid.lengths, field.grid.lengths)
        assert meta["step"] == 3 and meta["TIME"] == 1.5e-6
        assert meta["range"] == (field.values.min(), field.values.max())

    def test_header_declares_image_data(self, tmp_path, field):
        write_vti(tmp_path / "phi.vti", field)
        head = (tmp_path / "phi.vti").read_text()[:300]
        assert 'type="ImageData"' in head and 'header_type="UInt64"' in head


class TestSnapshotsAndCheckpoints:
    def test_formats(self, tmp_path, field):
        paths = write_snapshot(tmp_path, field, 100, 5e-5, ("raw", "vti"))
        assert sorted(p.name for p in paths) == ["phi_00000100.raw", "phi_00000100.vti"]
        with pytest.raises(IoError):
            write_snapshot(tmp_path, field, 1, 0.0, ("hdf5",))

    def test_checkpoint(self, tmp_path, field):
        write_checkpoint(tmp_path / "ck", field, 40, 2e-5, {"a": 1})
        back, meta = read_checkpoint(tmp_path / "ck")
        np.testing.assert_array_equal(back.values, field.values)
        assert meta["config"] == {"a": 1} and meta["step"] == 40
