"""NIfTI-1 reading and writing for volumes, masks and displacement fields.

Supports single-file ``.nii`` / ``.nii.gz`` and ``.hdr``/``.img`` pairs,
little- or big-endian (detected via ``sizeof_hdr``), scalar datatypes uint8,
int16, int32, float32 and float64.  Geometry comes from the sform when its
code is positive, else from the qform quaternion, else from a diagonal
pixdim fallback (with a warning).  Displacement fields use the 5-D vector
convention: ``dim[0]=5, dim[4]=1, dim[5]=3``, components in world mm.

All intensities are returned as float64; ``scl_slope``/``scl_inter`` are
applied when the slope is finite and nonzero.  Non-finite values after load
are a hard error rather than being silently zeroed.

Written files never embed timestamps (gzip mtime is pinned to 0), so
identical inputs produce byte-identical outputs.
"""

from __future__ import annotations

import gzip
import io
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, ParseError
from .geometry import Grid, Mask, Volume
from .warp import DisplacementField

__all__ = [
    "NiftiHeader",
    "read_volume",
    "write_volume",
    "read_mask",
    "write_mask",
    "read_field",
    "write_field",
    "write_multichannel",
]

HEADER_SIZE = 348

_HEADER_DESCR = [
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
]

_DTYPE_LE = np.dtype([(f[0], "<" + f[1], *f[2:]) for f in _HEADER_DESCR])
_DTYPE_BE = np.dtype([(f[0], ">" + f[1], *f[2:]) for f in _HEADER_DESCR])
assert _DTYPE_LE.itemsize == HEADER_SIZE

# NIfTI-1 datatype code -> numpy scalar type
_DATATYPES = {2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32, 64: np.float64}
_DATATYPE_CODES = {np.dtype(v): k for k, v in _DATATYPES.items()}

INTENT_VECTOR = 1007

_MAX_VOXELS = 2**31  # sanity cap against corrupt dim fields


@dataclass(frozen=True)
class NiftiHeader:
    """Geometry-bearing subset of the 348-byte NIfTI-1 header."""

    dim: tuple
    pixdim: tuple
    datatype: int
    bitpix: int
    vox_offset: int
    scl_slope: float
    scl_inter: float
    qform_code: int
    sform_code: int
    quatern: tuple
    qoffset: tuple
    srow: np.ndarray
    intent_code: int
    magic: bytes
    byteorder: str

    def validate(self):
        if self.magic not in (b"n+1", b"ni1"):
            raise ParseError(f"bad magic {self.magic!r}, expected 'n+1' or 'ni1'")
        if self.datatype not in _DATATYPES:
            raise ParseError(f"unsupported datatype code {self.datatype}")
        nd = self.dim[0]
        if not 1 <= nd <= 7:
            raise ParseError(f"bad dim[0]={nd}, expected 1..7")
        for axis in range(1, nd + 1):
            if self.dim[axis] < 1:
                raise ParseError(f"bad dim[{axis}]={self.dim[axis]}")
        count = 1
        for axis in range(1, nd + 1):
            count *= int(self.dim[axis])
        if count > _MAX_VOXELS:
            raise ParseError(f"dim describes {count} voxels, over the supported limit")

    def spatial_dims(self):
        nd = self.dim[0]
        dims = [int(self.dim[axis]) if axis <= nd else 1 for axis in (1, 2, 3)]
        return tuple(dims)

    def element_count(self):
        nd = self.dim[0]
        count = 1
        for axis in range(1, nd + 1):
            count *= int(self.dim[axis])
        return count


def _parse_header(raw):
    if len(raw) < HEADER_SIZE:
        raise ParseError(f"truncated header: {len(raw)} bytes, need {HEADER_SIZE}")
    sizeof_le = int(np.frombuffer(raw, "<i4", count=1)[0])
    sizeof_be = int(np.frombuffer(raw, ">i4", count=1)[0])
    if sizeof_le == HEADER_SIZE:
        dtype, order = _DTYPE_LE, "<"
    elif sizeof_be == HEADER_SIZE:
        dtype, order = _DTYPE_BE, ">"
    else:
        raise ParseError(
            f"bad sizeof_hdr {sizeof_le} (byte-swapped {sizeof_be}), expected {HEADER_SIZE}"
        )
    rec = np.frombuffer(raw[:HEADER_SIZE], dtype=dtype)[0]
    vox_offset_f = float(rec["vox_offset"])
    if not np.isfinite(vox_offset_f) or vox_offset_f < 0:
        raise ParseError(f"bad vox_offset {vox_offset_f}")
    header = NiftiHeader(
        dim=tuple(int(v) for v in rec["dim"]),
        pixdim=tuple(float(v) for v in rec["pixdim"]),
        datatype=int(rec["datatype"]),
        bitpix=int(rec["bitpix"]),
        vox_offset=int(vox_offset_f),
        scl_slope=float(rec["scl_slope"]),
        scl_inter=float(rec["scl_inter"]),
        qform_code=int(rec["qform_code"]),
        sform_code=int(rec["sform_code"]),
        quatern=(float(rec["quatern_b"]), float(rec["quatern_c"]), float(rec["quatern_d"])),
        qoffset=(float(rec["qoffset_x"]), float(rec["qoffset_y"]), float(rec["qoffset_z"])),
        srow=np.array([rec["srow_x"], rec["srow_y"], rec["srow_z"]], dtype=np.float64),
        intent_code=int(rec["intent_code"]),
        magic=bytes(rec["magic"]),
        byteorder=order,
    )
    header.validate()
    return header


def _quaternion_matrix(header):
    b, c, d = header.quatern
    qsq = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(qsq) if qsq > 0 else 0.0
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )
    spacing = np.asarray(header.pixdim[1:4], dtype=np.float64)
    if np.any(spacing <= 0) or not np.all(np.isfinite(spacing)):
        raise ParseError(f"bad pixdim {header.pixdim[1:4]} for qform geometry")
    qfac = -1.0 if header.pixdim[0] == -1.0 else 1.0
    scale = np.diag([spacing[0], spacing[1], qfac * spacing[2]])
    matrix = np.eye(4)
    matrix[:3, :3] = rot @ scale
    matrix[:3, 3] = header.qoffset
    return matrix


def _geometry(header):
    if header.sform_code > 0:
        matrix = np.eye(4)
        matrix[:3, :] = header.srow
        source = "sform"
    elif header.qform_code > 0:
        matrix = _quaternion_matrix(header)
        source = "qform"
    else:
        spacing = np.asarray(header.pixdim[1:4], dtype=np.float64)
        if np.any(spacing <= 0) or not np.all(np.isfinite(spacing)):
            raise ParseError(f"bad pixdim {header.pixdim[1:4]} with no sform/qform")
        warnings.warn(
            "no sform or qform present; assuming axis-aligned pixdim geometry",
            stacklevel=3,
        )
        matrix = np.diag([spacing[0], spacing[1], spacing[2], 1.0])
        source = "pixdim"
    try:
        return Grid.from_matrix(header.spatial_dims(), matrix)
    except GeometryError as exc:
        raise ParseError(f"singular or invalid {source} geometry: {exc}") from exc


def _read_bytes(path):
    path = str(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            try:
                with gzip.GzipFile(fileobj=fh) as gz:
                    return gz.read()
            except (OSError, EOFError) as exc:
                raise ParseError(f"corrupt gzip stream in {path}: {exc}") from exc
        return fh.read()


def _companion_image_path(path):
    path = str(path)
    for suffix, repl in ((".hdr.gz", ".img.gz"), (".hdr", ".img")):
        if path.endswith(suffix):
            return path[: -len(suffix)] + repl
    raise ParseError(f"header-pair magic 'ni1' but {path!r} has no .hdr suffix")


def _read_raw(path):
    """Return (header, data bytes beyond vox_offset)."""
    raw = _read_bytes(path)
    header = _parse_header(raw)
    if header.magic == b"n+1":
        if header.vox_offset < HEADER_SIZE:
            raise ParseError(f"vox_offset {header.vox_offset} overlaps the header")
        payload = raw[header.vox_offset:]
    else:
        img = _read_bytes(_companion_image_path(path))
        payload = img[header.vox_offset:]
    return header, payload


def _decode_data(header, payload, path):
    count = header.element_count()
    scalar = np.dtype(_DATATYPES[header.datatype]).newbyteorder(header.byteorder)
    need = count * scalar.itemsize
    if len(payload) < need:
        raise ParseError(
            f"truncated data section in {path}: {len(payload)} bytes, need {need}"
        )
    data = np.frombuffer(payload[:need], dtype=scalar).astype(np.float64)
    slope, inter = header.scl_slope, header.scl_inter
    if np.isfinite(slope) and slope != 0.0 and (slope != 1.0 or inter != 0.0):
        if not np.isfinite(inter):
            raise ParseError(f"non-finite scl_inter {inter}")
        data = data * slope + inter
    if not np.all(np.isfinite(data)):
        raise ParseError(f"non-finite intensities after load in {path}")
    return data


def read_volume(path):
    """Load a scalar volume; see the module docstring for conventions."""
    header, payload = _read_raw(path)
    nd = header.dim[0]
    for axis in range(4, nd + 1):
        if header.dim[axis] != 1:
            raise ParseError(
                f"not a scalar volume: dim[{axis}]={header.dim[axis]} (vector/time data)"
            )
    grid = _geometry(header)
    data = _decode_data(header, payload, path).reshape(grid.dims, order="F")
    return Volume(grid, data)


def read_mask(path, threshold=0.5):
    """Load a volume and binarize it at ``threshold``."""
    vol = read_volume(path)
    return Mask(vol.grid, vol.data > threshold)


def read_field(path):
    """Load a displacement field stored with the 5-D vector convention."""
    header, payload = _read_raw(path)
    if header.dim[0] != 5:
        raise ParseError(f"expected 5-D vector file, got dim[0]={header.dim[0]}")
    if header.dim[4] != 1 or header.dim[5] != 3:
        raise ParseError(
            f"expected dim[4]=1 and dim[5]=3 for a displacement field, "
            f"got {header.dim[4]} and {header.dim[5]}"
        )
    grid = _geometry(header)
    data = _decode_data(header, payload, path)
    vectors = data.reshape(grid.dims + (1, 3), order="F")[:, :, :, 0, :]
    return DisplacementField(grid, np.ascontiguousarray(vectors))


def _build_header(grid, datatype_code, extra=None):
    rec = np.zeros((), dtype=_DTYPE_LE)
    rec["sizeof_hdr"] = HEADER_SIZE
    rec["regular"] = b"r"
    rec["dim"] = (3, *grid.dims, 1, 1, 1, 1)
    rec["datatype"] = datatype_code
    rec["bitpix"] = np.dtype(_DATATYPES[datatype_code]).itemsize * 8
    rec["pixdim"] = (1.0, *grid.spacing, 1.0, 1.0, 1.0, 1.0)
    rec["vox_offset"] = HEADER_SIZE + 4
    rec["scl_slope"] = 1.0
    rec["scl_inter"] = 0.0
    rec["xyzt_units"] = 2  # NIFTI_UNITS_MM
    rec["descrip"] = b"blockreg"
    rec["qform_code"] = 0
    rec["sform_code"] = 2  # aligned
    matrix = grid.voxel_to_world
    rec["srow_x"] = matrix[0]
    rec["srow_y"] = matrix[1]
    rec["srow_z"] = matrix[2]
    rec["magic"] = b"n+1"
    if extra:
        for key, value in extra.items():
            rec[key] = value
    return rec


def _write_bytes(path, blob):
    path = str(path)
    try:
        if path.endswith(".gz"):
            buf = io.BytesIO()
            # mtime pinned so identical inputs give byte-identical files
            with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0) as gz:
                gz.write(blob)
            payload = buf.getvalue()
        else:
            payload = blob
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_volume(volume, path, datatype=np.float32):
    """Write a scalar volume as single-file NIfTI-1 (gzipped iff path ends .gz)."""
    code = _DATATYPE_CODES[np.dtype(datatype)]
    rec = _build_header(volume.grid, code)
    raw = volume.data.astype(_DATATYPES[code]).ravel(order="F").tobytes()
    _write_bytes(path, rec.tobytes() + b"\x00\x00\x00\x00" + raw)


def write_mask(mask, path):
    rec = _build_header(mask.grid, 2)
    raw = mask.data.astype(np.uint8).ravel(order="F").tobytes()
    _write_bytes(path, rec.tobytes() + b"\x00\x00\x00\x00" + raw)


def write_field(field, path):
    """Write a displacement field (world-mm vectors, 5-D NIfTI, float64)."""
    rec = _build_header(
        field.grid,
        64,
        extra={
            "dim": (5, *field.grid.dims, 1, 3, 1, 1),
            "intent_code": INTENT_VECTOR,
            "intent_name": b"vector",
        },
    )
    raw = (
        field.vectors.reshape(field.grid.dims + (1, 3))
        .astype(np.float64)
        .ravel(order="F")
        .tobytes()
    )
    _write_bytes(path, rec.tobytes() + b"\x00\x00\x00\x00" + raw)


def write_multichannel(grid, channels, path, datatype=np.float32):
    """Write per-voxel channel data (shape (C, nx, ny, nz)) as 5-D NIfTI.

    Debugging aid, e.g. for exporting descriptor channels.
    """
    channels = np.asarray(channels)
    n_chan = channels.shape[0]
    code = _DATATYPE_CODES[np.dtype(datatype)]
    rec = _build_header(
        grid,
        code,
        extra={"dim": (5, *grid.dims, 1, n_chan, 1, 1), "intent_code": INTENT_VECTOR},
    )
    stacked = np.moveaxis(channels, 0, -1).reshape(grid.dims + (1, n_chan))
    raw = stacked.astype(_DATATYPES[code]).ravel(order="F").tobytes()
    _write_bytes(path, rec.tobytes() + b"\x00\x00\x00\x00" + raw)
