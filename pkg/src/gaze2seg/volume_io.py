"""Volume and mask I/O: the native .mvol container plus an uncompressed NIfTI-1 subset.

Voxels are stored x-fastest / z-slowest, which maps onto a C-ordered numpy
array of shape (nz, ny, nx): flat index = x + nx*(y + ny*z).
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Optional, Tuple, Union

import numpy as np

MVOL_MAGIC = b"MVOL1\n"

# JSON dtype tag <-> numpy dtype for the supported scalar types.
_DTYPE_TO_TAG = {np.dtype(np.uint8): "u8", np.dtype(np.int16): "i16", np.dtype(np.float32): "f32"}
_TAG_TO_DTYPE = {v: k for k, v in _DTYPE_TO_TAG.items()}

_NIFTI_DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32}


class FormatError(Exception):
    """Base class for volume file format errors."""


class BadMagicError(FormatError):
    pass


class SizeMismatchError(FormatError):
    pass


class UnsupportedDtypeError(FormatError):
    pass


class InvalidMaskValueError(FormatError):
    pass


class InvalidDimsError(FormatError):
    pass


class UnsupportedCompressedError(FormatError):
    pass


class UnsupportedDatatypeError(FormatError):
    pass


class UnsupportedDimsError(FormatError):
    pass


@dataclass(frozen=True)
class Volume:
    """A 3D scalar grid with voxel spacing metadata.

    ``voxels`` has shape (nz, ny, nx); ``spacing_mm`` is (sx, sy, sz).
    Instances are immutable after construction and safe to share across threads.
    """

    voxels: np.ndarray
    spacing_mm: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        if self.voxels.ndim != 3:
            raise InvalidDimsError(f"expected 3D voxel array, got ndim={self.voxels.ndim}")
        self.voxels.setflags(write=False)

    @property
    def dims(self) -> Tuple[int, int, int]:
        """(nx, ny, nz) voxel counts."""
        nz, ny, nx = self.voxels.shape
        return (nx, ny, nz)

    @property
    def nz(self) -> int:
        return self.voxels.shape[0]

    def slice(self, z: int) -> np.ndarray:
        """Return the (ny, nx) plane at index z; pixel (x, y) is ``slice(z)[y, x]``."""
        return self.voxels[z]


@dataclass(frozen=True)
class MaskVolume(Volume):
    """Binary occupancy grid; voxel values are strictly {0, 1}."""

    label_name: str = ""

    def foreground_extent_z(self) -> Optional[Tuple[int, int]]:
        """[z_lo, z_hi] range of slices containing any foreground, or None if empty."""
        hits = np.flatnonzero(self.voxels.any(axis=(1, 2)))
        if hits.size == 0:
            return None
        return (int(hits[0]), int(hits[-1]))


def _validate(v: Volume) -> None:
    nx, ny, nz = v.dims
    if min(nx, ny, nz) < 1:
        raise InvalidDimsError(f"dims must all be >= 1, got {(nx, ny, nz)}")
    if any(s <= 0 for s in v.spacing_mm):
        raise InvalidDimsError(f"spacing_mm must be positive, got {v.spacing_mm}")
    if v.voxels.dtype not in _DTYPE_TO_TAG:
        raise UnsupportedDtypeError(f"unsupported dtype {v.voxels.dtype}")
    if isinstance(v, MaskVolume):
        vals = np.unique(v.voxels)
        if not np.isin(vals, (0, 1)).all():
            raise InvalidMaskValueError(f"mask values outside {{0,1}}: {vals[:8]}")


def save_mvol(v: Union[Volume, MaskVolume], path: Union[str, Path, BinaryIO]) -> None:
    """Write a volume in the mvol container; round-trips bit-exactly through load_mvol."""
    _validate(v)
    nx, ny, nz = v.dims
    header = {
        "dims": [nx, ny, nz],
        "spacing_mm": list(map(float, v.spacing_mm)),
        "dtype": _DTYPE_TO_TAG[v.voxels.dtype],
        "kind": "mask" if isinstance(v, MaskVolume) else "image",
    }
    if isinstance(v, MaskVolume) and v.label_name:
        header["label"] = v.label_name
    blob = json.dumps(header).encode("utf-8")
    payload = np.ascontiguousarray(v.voxels).astype(v.voxels.dtype.newbyteorder("<")).tobytes()

    def _write(f: BinaryIO) -> None:
        f.write(MVOL_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(payload)

    if hasattr(path, "write"):
        _write(path)  # type: ignore[arg-type]
    else:
        with open(path, "wb") as f:
            _write(f)


def mvol_bytes(v: Union[Volume, MaskVolume]) -> bytes:
    buf = io.BytesIO()
    save_mvol(v, buf)
    return buf.getvalue()


def load_mvol(path: Union[str, Path, bytes, BinaryIO]) -> Union[Volume, MaskVolume]:
    """Load a volume or mask from the mvol container.

    Raises BadMagicError, SizeMismatchError, UnsupportedDtypeError,
    InvalidDimsError or InvalidMaskValueError on malformed input.
    """
    if isinstance(path, bytes):
        data = path
    elif hasattr(path, "read"):
        data = path.read()  # type: ignore[union-attr]
    else:
        data = Path(path).read_bytes()

    if data[: len(MVOL_MAGIC)] != MVOL_MAGIC:
        raise BadMagicError("not an mvol file (bad magic)")
    off = len(MVOL_MAGIC)
    if len(data) < off + 4:
        raise SizeMismatchError("truncated header length field")
    (hlen,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) < off + hlen:
        raise SizeMismatchError("header length exceeds file size")
    try:
        header = json.loads(data[off : off + hlen].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise SizeMismatchError(f"unreadable JSON header: {exc}") from exc
    off += hlen

    dims = header.get("dims")
    if not (isinstance(dims, list) and len(dims) == 3 and all(isinstance(d, int) for d in dims)):
        raise InvalidDimsError(f"bad dims in header: {dims}")
    nx, ny, nz = dims
    if min(nx, ny, nz) < 1:
        raise InvalidDimsError(f"dims must all be >= 1, got {dims}")
    tag = header.get("dtype")
    if tag not in _TAG_TO_DTYPE:
        raise UnsupportedDtypeError(f"unsupported dtype tag {tag!r}")
    dtype = _TAG_TO_DTYPE[tag]
    spacing = tuple(float(s) for s in header.get("spacing_mm", [1.0, 1.0, 1.0]))
    if len(spacing) != 3 or any(s <= 0 for s in spacing):
        raise InvalidDimsError(f"bad spacing_mm in header: {spacing}")

    expected = nx * ny * nz * dtype.itemsize
    payload = data[off:]
    if len(payload) != expected:
        raise SizeMismatchError(f"payload is {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(nz, ny, nx)

    if header.get("kind") == "mask":
        if not np.isin(arr, (0, 1)).all():
            raise InvalidMaskValueError("mask payload contains values outside {0,1}")
        return MaskVolume(arr, spacing, label_name=header.get("label", ""))
    return Volume(arr, spacing)


def load_nifti(
    path: Union[str, Path, bytes],
    label: Optional[int] = None,
    as_mask: bool = False,
) -> Union[Volume, MaskVolume]:
    """Load an uncompressed single-file NIfTI-1 volume (uint8/int16/float32, <=3D).

    ``label`` extracts one integer label as a binary mask; ``as_mask`` binarizes
    any nonzero voxel. Endianness is detected from the sizeof_hdr field and the
    payload is byte-swapped accordingly. Orientation/affine fields are ignored;
    slices are indexed by raw z.
    """
    data = path if isinstance(path, bytes) else Path(path).read_bytes()
    if data[:2] == b"\x1f\x8b":
        raise UnsupportedCompressedError("gzip-compressed NIfTI is not supported; gunzip first")
    if len(data) < 352:
        raise SizeMismatchError(f"file too short for a NIfTI-1 header: {len(data)} bytes")

    (sizeof_hdr_le,) = struct.unpack_from("<i", data, 0)
    if sizeof_hdr_le == 348:
        bo = "<"
    else:
        (sizeof_hdr_be,) = struct.unpack_from(">i", data, 0)
        if sizeof_hdr_be != 348:
            raise BadMagicError("sizeof_hdr is not 348 in either byte order")
        bo = ">"

    magic = data[344:348]
    if magic != b"n+1\x00":
        raise BadMagicError(f"unsupported NIfTI magic {magic!r} (need single-file 'n+1')")

    dim = struct.unpack_from(bo + "8h", data, 40)
    (datatype,) = struct.unpack_from(bo + "h", data, 70)
    pixdim = struct.unpack_from(bo + "8f", data, 76)
    (vox_offset,) = struct.unpack_from(bo + "f", data, 108)

    ndim = dim[0]
    if ndim < 1 or ndim > 7:
        raise UnsupportedDimsError(f"dim[0]={ndim} out of range")
    shape = [max(1, dim[i]) for i in range(1, ndim + 1)]
    if any(s > 1 for s in shape[3:]):
        raise UnsupportedDimsError(f"volume is effectively {len(shape)}D; only 3D supported")
    shape = (shape + [1, 1, 1])[:3]
    nx, ny, nz = shape

    if datatype not in _NIFTI_DTYPES:
        raise UnsupportedDatatypeError(f"NIfTI datatype code {datatype} not in supported subset")
    dtype = np.dtype(_NIFTI_DTYPES[datatype])

    spacing = tuple(float(pixdim[i]) if pixdim[i] > 0 else 1.0 for i in (1, 2, 3))
    offset = int(vox_offset) if vox_offset >= 348 else 352
    expected = nx * ny * nz * dtype.itemsize
    payload = data[offset : offset + expected]
    if len(payload) != expected:
        raise SizeMismatchError(f"voxel payload is {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=dtype.newbyteorder(bo)).astype(dtype).reshape(nz, ny, nx)

    if label is not None:
        return MaskVolume((arr == label).astype(np.uint8), spacing, label_name=str(label))
    if as_mask:
        return MaskVolume((arr != 0).astype(np.uint8), spacing)
    return Volume(arr, spacing)


def empty_mask_like(v: Volume, label_name: str = "") -> MaskVolume:
    return MaskVolume(np.zeros_like(v.voxels, dtype=np.uint8), v.spacing_mm, label_name=label_name)
