"""NIfTI-1 I/O tests.

The reference fixtures here are built with ``struct.pack`` at the field
offsets of the published NIfTI-1 layout, independently of the library's own
numpy-dtype parser, and the reference parser below re-reads written files
the same way.  When nibabel happens to be importable it is used as an
additional external check; this sandbox has no NIfTI package on its mirror.
"""

import gzip
import os
import struct
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blockreg.errors import ParseError
from blockreg.geometry import Grid, Mask, Volume
from blockreg.nifti import (
    read_field,
    read_mask,
    read_volume,
    write_field,
    write_mask,
    write_multichannel,
    write_volume,
)
from blockreg.warp import DisplacementField

try:
    import nibabel
except ImportError:
    nibabel = None


def reference_header(dims, pixdim=(1.0, 1.0, 1.0), datatype=16, bitpix=32,
                     scl=(0.0, 0.0), srow=None, qform=None, endian="<",
                     magic=b"n+1\x00", vox_offset=352.0, ndim=3, dim_rest=()):
    """Independent header builder from the standard's field offsets."""
    hdr = bytearray(348)
    struct.pack_into(endian + "i", hdr, 0, 348)
    dim = [ndim, *dims, *dim_rest]
    dim += [1] * (8 - len(dim))
    struct.pack_into(endian + "8h", hdr, 40, *dim)
    struct.pack_into(endian + "h", hdr, 70, datatype)
    struct.pack_into(endian + "h", hdr, 72, bitpix)
    struct.pack_into(endian + "8f", hdr, 76, 1.0, *pixdim, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into(endian + "f", hdr, 108, vox_offset)
    struct.pack_into(endian + "2f", hdr, 112, *scl)
    if srow is not None:
        struct.pack_into(endian + "h", hdr, 254, 1)  # sform_code
        struct.pack_into(endian + "4f", hdr, 280, *srow[0])
        struct.pack_into(endian + "4f", hdr, 296, *srow[1])
        struct.pack_into(endian + "4f", hdr, 312, *srow[2])
    if qform is not None:
        quatern, qoffset = qform
        struct.pack_into(endian + "h", hdr, 252, 1)  # qform_code
        struct.pack_into(endian + "3f", hdr, 256, *quatern)
        struct.pack_into(endian + "3f", hdr, 268, *qoffset)
    struct.pack_into("4s", hdr, 344, magic)
    return bytes(hdr)


def reference_file(path, data_f_order_bytes, **kwargs):
    blob = reference_header(**kwargs) + b"\x00" * 4 + data_f_order_bytes
    with open(path, "wb") as fh:
        fh.write(blob)


def reference_parse(path):
    """Independent reader: struct-unpacked geometry plus raw data."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    endian = "<" if struct.unpack_from("<i", blob, 0)[0] == 348 else ">"
    assert struct.unpack_from(endian + "i", blob, 0)[0] == 348
    dim = struct.unpack_from(endian + "8h", blob, 40)
    datatype = struct.unpack_from(endian + "h", blob, 70)[0]
    vox_offset = int(struct.unpack_from(endian + "f", blob, 108)[0])
    sform_code = struct.unpack_from(endian + "h", blob, 254)[0]
    srow = np.array(
        [struct.unpack_from(endian + "4f", blob, off) for off in (280, 296, 312)]
    )
    magic = struct.unpack_from("4s", blob, 344)[0]
    count = 1
    for axis in range(1, dim[0] + 1):
        count *= dim[axis]
    scalar = {2: "u1", 4: "i2", 8: "i4", 16: "f4", 64: "f8"}[datatype]
    data = np.frombuffer(
        blob, dtype=endian + scalar, count=count, offset=vox_offset
    )
    return {
        "dim": dim,
        "datatype": datatype,
        "sform_code": sform_code,
        "srow": srow,
        "magic": magic,
        "data": data,
    }


class TestReadVolume:
    def test_reference_fixture_values(self, tmp_path):
        path = tmp_path / "ref.nii"
        values = np.arange(64, dtype="<f4")  # F-order linearization
        srow = np.hstack([np.eye(3), np.zeros((3, 1))])
        reference_file(path, values.tobytes(), dims=(4, 4, 4), srow=srow)
        volume = read_volume(path)
        assert volume.grid.dims == (4, 4, 4)
        expected = values.astype(np.float64).reshape((4, 4, 4), order="F")
        assert np.array_equal(volume.data, expected)
        assert np.allclose(volume.grid.voxel_to_world, np.eye(4))

    def test_scl_slope_inter(self, tmp_path):
        path = tmp_path / "scl.nii"
        values = np.full(8, 3.0, dtype="<f4")
        srow = np.hstack([np.eye(3), np.zeros((3, 1))])
        reference_file(path, values.tobytes(), dims=(2, 2, 2), srow=srow,
                       scl=(2.0, 1.0))
        volume = read_volume(path)
        assert np.all(volume.data == 7.0)  # 2 * 3 + 1

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.nii"
        values = np.zeros(8, dtype="<f4")
        srow = np.hstack([np.eye(3), np.zeros((3, 1))])
        reference_file(path, values.tobytes(), dims=(2, 2, 2), srow=srow,
                       magic=b"abcd")
        with pytest.raises(ParseError, match="magic"):
            read_volume(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "short.nii"
        path.write_bytes(b"\x00" * 100)
        with pytest.raises(ParseError, match="sizeof_hdr|truncated"):
            read_volume(path)

    def test_truncated_data(self, tmp_path):
        path = tmp_path / "cut.nii"
        values = np.zeros(8, dtype="<f4")
        srow = np.hstack([np.eye(3), np.zeros((3, 1))])
        reference_file(path, values.tobytes()[:-8], dims=(2, 2, 2), srow=srow)
        with pytest.raises(ParseError, match="truncated"):
            read_volume(path)

    def test_unsupported_datatype(self, tmp_path):
        path = tmp_path / "rgb.nii"
        srow = np.hstack([np.eye(3), np.zeros((3, 1))])
        reference_file(path, b"\x00" * 24, dims=(2, 2, 2), srow=srow,
                       datatype=128, bitpix=24)
        with pytest.raises(ParseError, match="datatype"):
            read_volume(path)

    def test_big_endian(self, tmp_path):
        path = tmp_path / "be.nii"
        values = np.arange(8, dtype=">f4")
        srow = np.hstack([np.eye(3) * 2.0, np.zeros((3, 1))])
        reference_file(path, values.tobytes(), dims=(2, 2, 2), srow=srow,
                       pixdim=(2.0, 2.0, 2.0), endian=">")
        volume = read_volume(path)
        assert np.array_equal(
            volume.data, np.arange(8, dtype=np.float64).reshape((2, 2, 2), order="F")
        )
        assert volume.grid.spacing == (2.0, 2.0, 2.0)

    def test_qform_quaternion(self, tmp_path):
        # 90 degrees about z: quaternion (a, b, c, d) = (cos45, 0, 0, sin45)
        path = tmp_path / "q.nii"
        half = np.sqrt(0.5)
        values = np.zeros(8, dtype="<f4")
        reference_file(path, values.tobytes(), dims=(2, 2, 2),
                       qform=((0.0, 0.0, half), (5.0, 6.0, 7.0)))
        volume = read_volume(path)
        expected = np.array([
            [0.0, -1.0, 0.0, 5.0],
            [1.0, 0.0, 0.0, 6.0],
            [0.0, 0.0, 1.0, 7.0],
            [0.0, 0.0, 0.0, 1.0],
        ])
        assert np.allclose(volume.grid.voxel_to_world, expected, atol=1e-6)

    def test_pixdim_fallback_warns(self, tmp_path):
        path = tmp_path / "plain.nii"
        values = np.zeros(8, dtype="<f4")
        reference_file(path, values.tobytes(), dims=(2, 2, 2),
                       pixdim=(0.5, 0.5, 0.5))
        with pytest.warns(UserWarning, match="pixdim"):
            volume = read_volume(path)
        assert volume.grid.spacing == (0.5, 0.5, 0.5)

    def test_header_pair(self, tmp_path):
        hdr_path = tmp_path / "pair.hdr"
        img_path = tmp_path / "pair.img"
        values = np.arange(8, dtype="<f4")
        srow = np.hstack([np.eye(3), np.zeros((3, 1))])
        hdr = reference_header(dims=(2, 2, 2), srow=srow, magic=b"ni1\x00",
                               vox_offset=0.0)
        hdr_path.write_bytes(hdr)
        img_path.write_bytes(values.tobytes())
        volume = read_volume(hdr_path)
        assert np.array_equal(
            volume.data, np.arange(8, dtype=np.float64).reshape((2, 2, 2), order="F")
        )

    def test_vector_file_rejected_as_volume(self, tmp_path):
        path = tmp_path / "vec.nii"
        grid = Grid.isotropic((3, 3, 3), 1.0)
        write_field(DisplacementField.zero(grid), path)
        with pytest.raises(ParseError, match="dim"):
            read_volume(path)

    def test_non_finite_rejected(self, tmp_path):
        path = tmp_path / "nan.nii"
        values = np.full(8, np.nan, dtype="<f4")
        srow = np.hstack([np.eye(3), np.zeros((3, 1))])
        reference_file(path, values.tobytes(), dims=(2, 2, 2), srow=srow)
        with pytest.raises(ParseError, match="non-finite"):
            read_volume(path)


class TestWriteVolume:
    def _random_volume(self, seed, dims=(8, 8, 8), spacing=(1.0, 1.0, 1.0),
                       origin=(0.0, 0.0, 0.0)):
        rng = np.random.default_rng(seed)
        matrix = np.diag([*spacing, 1.0])
        matrix[:3, 3] = origin
        grid = Grid(dims, spacing, matrix)
        return Volume(grid, rng.normal(size=dims))

    @pytest.mark.parametrize("suffix", [".nii", ".nii.gz"])
    def test_round_trip(self, tmp_path, suffix):
        volume = self._random_volume(0)
        path = tmp_path / f"v{suffix}"
        write_volume(volume, path)
        back = read_volume(path)
        assert back.grid.dims == volume.grid.dims
        assert np.allclose(back.grid.voxel_to_world, volume.grid.voxel_to_world,
                           atol=1e-5)
        assert np.abs(back.data - volume.data).max() <= np.abs(
            volume.data
        ).max() * np.finfo(np.float32).eps * 4

    def test_round_trip_anisotropic(self, tmp_path):
        volume = self._random_volume(1, spacing=(0.5, 1.0, 2.0), origin=(-4, 3, 9))
        path = tmp_path / "aniso.nii.gz"
        write_volume(volume, path)
        back = read_volume(path)
        assert np.allclose(back.grid.spacing, (0.5, 1.0, 2.0), atol=1e-6)
        assert np.allclose(back.grid.voxel_to_world, volume.grid.voxel_to_world,
                           atol=1e-5)

    def test_written_file_parses_in_reference_reader(self, tmp_path):
        volume = self._random_volume(2, spacing=(0.5, 1.0, 2.0), origin=(1, -2, 3))
        path = tmp_path / "ext.nii"
        write_volume(volume, path)
        parsed = reference_parse(path)
        assert parsed["magic"].startswith(b"n+1")
        assert tuple(parsed["dim"][1:4]) == volume.grid.dims
        assert parsed["sform_code"] > 0
        assert np.allclose(parsed["srow"], volume.grid.voxel_to_world[:3], atol=1e-5)
        expected = volume.data.astype(np.float32).ravel(order="F")
        assert np.array_equal(parsed["data"], expected)

    @pytest.mark.skipif(nibabel is None, reason="nibabel not installed")
    def test_written_file_parses_in_nibabel(self, tmp_path):
        volume = self._random_volume(3, spacing=(0.5, 1.0, 2.0))
        path = tmp_path / "nib.nii"
        write_volume(volume, path)
        img = nibabel.load(str(path))
        assert np.allclose(img.affine, volume.grid.voxel_to_world, atol=1e-5)
        assert np.allclose(img.get_fdata(), volume.data, atol=1e-5)

    def test_write_is_deterministic(self, tmp_path):
        volume = self._random_volume(4)
        a = tmp_path / "a.nii.gz"
        b = tmp_path / "b.nii.gz"
        write_volume(volume, a)
        write_volume(volume, b)
        assert a.read_bytes() == b.read_bytes()

    def test_unwritable_path(self, tmp_path):
        volume = self._random_volume(5)
        with pytest.raises(OSError):
            write_volume(volume, tmp_path / "missing_dir" / "v.nii")


class TestFieldsAndMasks:
    def test_field_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(6)
        grid = Grid.isotropic((5, 6, 7), 1.5, origin=(2.0, -1.0, 0.5))
        field = DisplacementField(grid, rng.normal(size=(5, 6, 7, 3)))
        path = tmp_path / "field.nii.gz"
        write_field(field, path)
        back = read_field(path)
        assert back.grid.dims == grid.dims
        assert np.allclose(back.grid.voxel_to_world, grid.voxel_to_world, atol=1e-5)
        assert np.array_equal(back.vectors, field.vectors)  # float64 storage

    def test_mask_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        grid = Grid.isotropic((6, 6, 6), 1.0)
        mask = Mask(grid, rng.random((6, 6, 6)) > 0.5)
        path = tmp_path / "mask.nii.gz"
        write_mask(mask, path)
        back = read_mask(path)
        assert np.array_equal(back.data, mask.data)

    def test_multichannel_export(self, tmp_path):
        grid = Grid.isotropic((4, 4, 4), 1.0)
        channels = np.random.default_rng(8).random((12, 4, 4, 4))
        path = tmp_path / "desc.nii"
        write_multichannel(grid, channels, path)
        parsed = reference_parse(path)
        assert parsed["dim"][0] == 5 and parsed["dim"][5] == 12


class TestFuzzing:
    @settings(max_examples=120, deadline=None)
    @given(blob=st.binary(min_size=0, max_size=500))
    def test_arbitrary_bytes_give_structured_errors(self, blob):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "fuzz.nii")
            with open(path, "wb") as fh:
                fh.write(blob)
            try:
                read_volume(path)
            except ParseError:
                pass

    @settings(max_examples=60, deadline=None)
    @given(offset=st.integers(0, 407), value=st.integers(0, 255))
    def test_corrupted_valid_file(self, offset, value):
        values = np.arange(8, dtype="<f4")
        srow = np.hstack([np.eye(3), np.zeros((3, 1))])
        blob = bytearray(
            reference_header(dims=(2, 2, 2), srow=srow) + b"\x00" * 4 + values.tobytes()
        )
        blob[offset] = value
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "corrupt.nii")
            with open(path, "wb") as fh:
                fh.write(bytes(blob))
            try:
                read_volume(path)
            except ParseError:
                pass
