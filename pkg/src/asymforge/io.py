"""File formats: a small NIfTI-1 reader/writer and the raw ``.mmv`` format.

Only the subset of NIfTI-1 that co-registered BraTS-style scans need is
supported: little-endian single-file ``.nii`` (optionally gzipped), 3-D,
datatypes uint8 / int16 / float32. Anything else raises
:class:`~asymforge.errors.MalformedHeader`.

The internal ``.mmv`` format is a 24-byte header followed by a little-endian
C-order payload (x fastest, then y, then z, then channel):

    bytes 0-3    magic ``MMV1``
    bytes 4-15   u32 depth, height, width
    bytes 16-19  u32 channel count
    bytes 20-23  u32 dtype code (2 = uint8, 4 = int16, 16 = float32)

The header carries no voxel spacing; spacing is informational metadata and
defaults to 1 mm when a volume comes back from ``.mmv``.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import MalformedHeader

NIFTI_HEADER_SIZE = 348

# NIfTI datatype codes, reused verbatim for .mmv.
DTYPE_CODES = {2: np.dtype("<u1"), 4: np.dtype("<i2"), 16: np.dtype("<f4")}
CODE_FOR_DTYPE = {np.dtype("uint8"): 2, np.dtype("int16"): 4, np.dtype("float32"): 16}

MMV_MAGIC = b"MMV1"
MMV_HEADER = struct.Struct("<4s5I")


def _read_bytes(path: str | Path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def read_nifti(path: str | Path) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Read a NIfTI-1 volume as a (depth, height, width) array plus spacing.

    Returns the raw on-disk values (no dtype conversion beyond endianness)
    and spacing as (dz, dy, dx) in millimeters.
    """
    blob = _read_bytes(path)
    if len(blob) < NIFTI_HEADER_SIZE:
        raise MalformedHeader(f"{path}: file shorter than a NIfTI-1 header")
    sizeof_hdr = struct.unpack_from("<i", blob, 0)[0]
    if sizeof_hdr != NIFTI_HEADER_SIZE:
        raise MalformedHeader(
            f"{path}: sizeof_hdr={sizeof_hdr}, expected 348 (little-endian NIfTI-1)"
        )
    magic = blob[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise MalformedHeader(f"{path}: bad magic {magic!r}")
    if magic == b"ni1\x00":
        raise MalformedHeader(f"{path}: two-file NIfTI (.hdr/.img) is not supported")

    dim = struct.unpack_from("<8h", blob, 40)
    ndim = dim[0]
    if ndim < 3:
        raise MalformedHeader(f"{path}: expected a 3-D volume, got dim[0]={ndim}")
    # Trailing dims beyond the third must be singleton.
    if any(d > 1 for d in dim[4 : ndim + 1]):
        raise MalformedHeader(f"{path}: multi-channel NIfTI is not supported")
    nx, ny, nz = dim[1], dim[2], dim[3]
    if nx < 1 or ny < 1 or nz < 1:
        raise MalformedHeader(f"{path}: non-positive dims {(nx, ny, nz)}")

    datatype = struct.unpack_from("<h", blob, 70)[0]
    if datatype not in DTYPE_CODES:
        raise MalformedHeader(f"{path}: unsupported datatype code {datatype}")
    dtype = DTYPE_CODES[datatype]

    pixdim = struct.unpack_from("<8f", blob, 76)
    spacing = (float(pixdim[3]) or 1.0, float(pixdim[2]) or 1.0, float(pixdim[1]) or 1.0)

    vox_offset = int(struct.unpack_from("<f", blob, 108)[0])
    if vox_offset < NIFTI_HEADER_SIZE:
        raise MalformedHeader(f"{path}: vox_offset {vox_offset} inside the header")
    count = nx * ny * nz
    end = vox_offset + count * dtype.itemsize
    if len(blob) < end:
        raise MalformedHeader(f"{path}: payload truncated ({len(blob)} < {end} bytes)")

    flat = np.frombuffer(blob, dtype=dtype, count=count, offset=vox_offset)
    # NIfTI stores x fastest; reshaping C-order to (z, y, x) preserves that.
    return flat.reshape(nz, ny, nx).copy(), spacing


def write_nifti(
    path: str | Path,
    data: np.ndarray,
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> None:
    """Write a (depth, height, width) array as single-file NIfTI-1."""
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError(f"expected a 3-D array, got shape {data.shape}")
    dtype = np.dtype(data.dtype)
    code = CODE_FOR_DTYPE.get(dtype)
    if code is None:
        raise ValueError(f"unsupported dtype {dtype} (use uint8, int16 or float32)")
    nz, ny, nx = data.shape

    hdr = bytearray(352)  # 348-byte header + 4 bytes padding, vox_offset 352
    struct.pack_into("<i", hdr, 0, NIFTI_HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, dtype.itemsize * 8)
    dz, dy, dx = spacing
    struct.pack_into("<8f", hdr, 76, 1.0, dx, dy, dz, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<f", hdr, 112, 1.0)  # scl_slope
    hdr[344:348] = b"n+1\x00"

    payload = np.ascontiguousarray(data, dtype=dtype.newbyteorder("<")).tobytes()
    out = bytes(hdr) + payload
    path = Path(path)
    if path.suffix == ".gz":
        # mtime pinned so identical volumes produce identical bytes
        path.write_bytes(gzip.compress(out, mtime=0))
    else:
        path.write_bytes(out)


def read_mmv(path: str | Path) -> np.ndarray:
    """Read an ``.mmv`` file as a (channels, depth, height, width) array."""
    blob = _read_bytes(path)
    if len(blob) < MMV_HEADER.size:
        raise MalformedHeader(f"{path}: file shorter than an MMV header")
    magic, depth, height, width, channels, code = MMV_HEADER.unpack_from(blob, 0)
    if magic != MMV_MAGIC:
        raise MalformedHeader(f"{path}: bad magic {magic!r}")
    if code not in DTYPE_CODES:
        raise MalformedHeader(f"{path}: unsupported dtype code {code}")
    if min(depth, height, width, channels) < 1:
        raise MalformedHeader(f"{path}: non-positive dims in header")
    dtype = DTYPE_CODES[code]
    count = channels * depth * height * width
    if len(blob) != MMV_HEADER.size + count * dtype.itemsize:
        raise MalformedHeader(f"{path}: payload size does not match header")
    flat = np.frombuffer(blob, dtype=dtype, offset=MMV_HEADER.size)
    return flat.reshape(channels, depth, height, width).copy()


def write_mmv(path: str | Path, data: np.ndarray) -> None:
    """Write a (D,H,W) or (C,D,H,W) array as ``.mmv``. Bools are stored as uint8."""
    data = np.asarray(data)
    if data.dtype == np.bool_:
        data = data.astype(np.uint8)
    if data.ndim == 3:
        data = data[None]
    if data.ndim != 4:
        raise ValueError(f"expected 3-D or 4-D data, got shape {data.shape}")
    code = CODE_FOR_DTYPE.get(np.dtype(data.dtype))
    if code is None:
        raise ValueError(f"unsupported dtype {data.dtype} (use uint8, int16 or float32)")
    channels, depth, height, width = data.shape
    header = MMV_HEADER.pack(MMV_MAGIC, depth, height, width, channels, code)
    payload = np.ascontiguousarray(data, dtype=data.dtype.newbyteorder("<")).tobytes()
    Path(path).write_bytes(header + payload)


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write a 2-D array as binary PGM (P5), rescaled to the 0..255 range."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D slice, got shape {image.shape}")
    lo, hi = float(image.min()), float(image.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    pixels = ((image - lo) * scale).round().astype(np.uint8)
    h, w = pixels.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes())
