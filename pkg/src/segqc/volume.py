"""Volumetric data model: 3D scalar/label volumes, slice access, and file I/O.

Conventions
-----------
Volumes have dims (nx, ny, nz) and are held as numpy arrays indexed
``[x, y, z]``.  Flat payloads (SQV files, ``*_from_flat`` constructors) are
x-fastest: element (x, y, z) sits at flat index ``x + nx*y + nx*ny*z``.
Slices have dims (w, h), are indexed ``[u, v]``, and flatten u-fastest.

Label codes: 0 = background, 1 = GM, 2 = WM, 3 = CSF.
"""

import json
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

LABEL_BACKGROUND = 0
LABEL_GM = 1
LABEL_WM = 2
LABEL_CSF = 3
VALID_LABELS = (LABEL_BACKGROUND, LABEL_GM, LABEL_WM, LABEL_CSF)


class DataFormatError(Exception):
    """A file or payload violates its declared format."""


class ViewAxis(Enum):
    """Anatomical slicing direction.

    Axial slices are x-y planes stacked along z, coronal are x-z planes
    stacked along y, sagittal are y-z planes stacked along x.
    """

    AXIAL = "axial"
    CORONAL = "coronal"
    SAGITTAL = "sagittal"

    @property
    def stack_axis(self) -> int:
        """Array axis the slices are stacked along."""
        return {ViewAxis.AXIAL: 2, ViewAxis.CORONAL: 1, ViewAxis.SAGITTAL: 0}[self]


def _check_3d(data: np.ndarray, what: str) -> None:
    if data.ndim != 3:
        raise ValueError(f"{what} requires a 3D array, got shape {data.shape}")
    if any(n <= 0 for n in data.shape):
        raise ValueError(f"{what} dims must be positive, got {data.shape}")


@dataclass
class Volume3D:
    """Scalar 3D grid with informational voxel spacing (mm)."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        _check_3d(self.data, "Volume3D")
        if self.data.dtype != np.float32:
            self.data = self.data.astype(np.float32)
        if not np.isfinite(self.data).all():
            raise ValueError("Volume3D data contains non-finite values")

    @property
    def dims(self) -> tuple:
        return tuple(int(n) for n in self.data.shape)


@dataclass
class LabelVolume:
    """3D tissue-label grid; one code from VALID_LABELS per voxel."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        _check_3d(self.data, "LabelVolume")
        if self.data.dtype != np.uint8:
            self.data = self.data.astype(np.uint8)
        if self.data.max(initial=0) > LABEL_CSF:
            bad = sorted(int(v) for v in np.unique(self.data) if v > LABEL_CSF)
            raise ValueError(f"LabelVolume contains invalid codes {bad}; valid: {VALID_LABELS}")

    @property
    def dims(self) -> tuple:
        return tuple(int(n) for n in self.data.shape)


@dataclass
class Slice2D:
    """2D plane with dims (w, h), indexed [u, v]."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValueError(f"Slice2D requires a 2D array, got shape {self.data.shape}")

    @property
    def dims(self) -> tuple:
        return tuple(int(n) for n in self.data.shape)

    def flat(self) -> np.ndarray:
        """u-fastest flat copy."""
        return self.data.ravel(order="F").copy()

    @staticmethod
    def from_flat(flat, dims) -> "Slice2D":
        w, h = dims
        arr = np.asarray(flat)
        if arr.size != w * h:
            raise ValueError(f"flat length {arr.size} != w*h = {w * h}")
        return Slice2D(arr.reshape((w, h), order="F"))


def volume_from_flat(flat, dims, spacing=(1.0, 1.0, 1.0)) -> Volume3D:
    """Build a Volume3D from an x-fastest flat payload."""
    nx, ny, nz = dims
    arr = np.asarray(flat, dtype=np.float32)
    if arr.size != nx * ny * nz:
        raise ValueError(f"flat length {arr.size} != nx*ny*nz = {nx * ny * nz}")
    return Volume3D(arr.reshape((nx, ny, nz), order="F"), spacing=spacing)


def labels_from_flat(flat, dims, spacing=(1.0, 1.0, 1.0)) -> LabelVolume:
    nx, ny, nz = dims
    arr = np.asarray(flat, dtype=np.uint8)
    if arr.size != nx * ny * nz:
        raise ValueError(f"flat length {arr.size} != nx*ny*nz = {nx * ny * nz}")
    return LabelVolume(arr.reshape((nx, ny, nz), order="F"), spacing=spacing)


def extract_slice(vol, axis: ViewAxis, index: int) -> Slice2D:
    """Plane of ``vol`` at ``index`` along the view's stacking axis.

    Axial k -> data[:, :, k] with (w, h) = (nx, ny); coronal k -> data[:, k, :]
    with (nx, nz); sagittal k -> data[k, :, :] with (ny, nz).
    """
    data = vol.data
    ax = axis.stack_axis
    extent = data.shape[ax]
    if not 0 <= index < extent:
        raise IndexError(f"{axis.value} index {index} out of range for extent {extent}")
    plane = np.take(data, index, axis=ax)
    return Slice2D(plane.copy())


def insert_slice(vol, axis: ViewAxis, index: int, sl: Slice2D):
    """Copy of ``vol`` with the plane at ``index`` along ``axis`` replaced."""
    data = vol.data
    ax = axis.stack_axis
    extent = data.shape[ax]
    if not 0 <= index < extent:
        raise IndexError(f"{axis.value} index {index} out of range for extent {extent}")
    expected = tuple(n for i, n in enumerate(data.shape) if i != ax)
    if sl.dims != expected:
        raise ValueError(f"slice dims {sl.dims} do not match plane dims {expected}")
    out = data.copy()
    idx = [slice(None)] * 3
    idx[ax] = index
    out[tuple(idx)] = sl.data
    if isinstance(vol, LabelVolume):
        return LabelVolume(out, spacing=vol.spacing)
    return Volume3D(out, spacing=vol.spacing, meta=dict(vol.meta))


def normalize_slice(s: Slice2D) -> Slice2D:
    """Robust min-max: clamp to the [p1, p99] percentile band, map to [0, 1].

    Percentiles use linear interpolation on sorted values.  A degenerate band
    (p99 == p1, e.g. a constant slice) maps to all zeros.
    """
    if s.data.size == 0:
        raise ValueError("normalize_slice: empty slice")
    vals = s.data.astype(np.float64, copy=False)
    p1, p99 = np.percentile(vals, [1.0, 99.0])
    if not (p99 > p1):
        return Slice2D(np.zeros(s.dims, dtype=np.float32))
    out = (np.clip(vals, p1, p99) - p1) / (p99 - p1)
    return Slice2D(out.astype(np.float32))


def downsample_half(vol: Volume3D) -> Volume3D:
    """2x2x2 mean pooling to half resolution.

    Odd extents are padded by replicating the last plane before pooling; the
    decision is recorded in the output's ``meta["padded_axes"]``.  Each output
    voxel is the mean of its 8 sources, accumulated at 64-bit in a fixed
    lexicographic offset order.
    """
    data = vol.data.astype(np.float64)
    padded_axes = [ax for ax in range(3) if data.shape[ax] % 2 == 1]
    if padded_axes:
        pad = [(0, data.shape[ax] % 2) for ax in range(3)]
        data = np.pad(data, pad, mode="edge")
    acc = np.zeros(tuple(n // 2 for n in data.shape), dtype=np.float64)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                acc = acc + data[dx::2, dy::2, dz::2]
    out = (acc / 8.0).astype(np.float32)
    meta = dict(vol.meta)
    if padded_axes:
        meta["padded_axes"] = padded_axes
    spacing = tuple(2.0 * s for s in vol.spacing)
    return Volume3D(out, spacing=spacing, meta=meta)


def _reflect_indices(n: int, radius: int) -> np.ndarray:
    """Source indices for positions -radius .. n-1+radius under mirror
    reflection about the first/last samples (no edge duplication)."""
    pos = np.arange(-radius, n + radius)
    if n == 1:
        return np.zeros_like(pos)
    period = 2 * n - 2
    pos = np.mod(pos, period)
    return np.where(pos < n, pos, period - pos)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian taps with radius ceil(3*sigma), float64."""
    radius = math.ceil(3.0 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _correlate1d_reflect(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = (len(kernel) - 1) // 2
    idx = _reflect_indices(arr.shape[axis], radius)
    padded = np.take(arr, idx, axis=axis)
    win = np.lib.stride_tricks.sliding_window_view(padded, len(kernel), axis=axis)
    return np.tensordot(win, kernel, axes=([win.ndim - 1], [0]))


def gaussian_smooth(vol: Volume3D, sigma: float) -> Volume3D:
    """Separable 3D Gaussian blur with reflect padding.

    Kernel radius is ceil(3*sigma) and the taps are normalized to sum 1;
    sigma == 0 returns the input unchanged.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return Volume3D(vol.data.copy(), spacing=vol.spacing, meta=dict(vol.meta))
    kernel = gaussian_kernel(sigma)
    out = vol.data.astype(np.float64)
    for axis in range(3):
        out = _correlate1d_reflect(out, kernel, axis)
    return Volume3D(out.astype(np.float32), spacing=vol.spacing, meta=dict(vol.meta))


# ---------------------------------------------------------------------------
# SQV container: magic "SQV1", u32le nx, ny, nz, dtype code (0=f32, 1=u8),
# then the raw voxel payload x-fastest, little-endian.
# ---------------------------------------------------------------------------

_SQV_MAGIC = b"SQV1"
_SQV_F32 = 0
_SQV_U8 = 1


def save_sqv(vol, path) -> None:
    path = Path(path)
    if isinstance(vol, LabelVolume):
        code, payload = _SQV_U8, vol.data.ravel(order="F").tobytes()
    elif isinstance(vol, Volume3D):
        code = _SQV_F32
        payload = vol.data.astype("<f4", copy=False).ravel(order="F").tobytes()
    else:
        raise TypeError(f"save_sqv expects Volume3D or LabelVolume, got {type(vol).__name__}")
    nx, ny, nz = vol.dims
    with open(path, "wb") as fh:
        fh.write(_SQV_MAGIC)
        fh.write(struct.pack("<4I", nx, ny, nz, code))
        fh.write(payload)


def _read_sqv_header(fh, path):
    head = fh.read(20)
    if len(head) < 20:
        raise DataFormatError(f"{path}: truncated SQV header ({len(head)} bytes)")
    if head[:4] != _SQV_MAGIC:
        raise DataFormatError(f"{path}: bad SQV magic {head[:4]!r}")
    nx, ny, nz, code = struct.unpack("<4I", head[4:])
    if code not in (_SQV_F32, _SQV_U8):
        raise DataFormatError(f"{path}: unknown SQV dtype code {code}")
    if min(nx, ny, nz) <= 0:
        raise DataFormatError(f"{path}: non-positive SQV dims ({nx}, {ny}, {nz})")
    return (nx, ny, nz), code


def sqv_dims(path) -> tuple:
    """Dims of an SQV file without reading the payload."""
    with open(path, "rb") as fh:
        dims, _ = _read_sqv_header(fh, path)
    return dims


def load_sqv(path):
    """Load an SQV file as Volume3D (f32) or LabelVolume (u8) per its code."""
    path = Path(path)
    with open(path, "rb") as fh:
        (nx, ny, nz), code = _read_sqv_header(fh, path)
        dtype = np.dtype("<f4") if code == _SQV_F32 else np.dtype("u1")
        n = nx * ny * nz
        payload = fh.read(n * dtype.itemsize)
    if len(payload) != n * dtype.itemsize:
        raise DataFormatError(
            f"{path}: truncated SQV payload ({len(payload)} of {n * dtype.itemsize} bytes)"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape((nx, ny, nz), order="F")
    if code == _SQV_F32:
        return Volume3D(arr.astype(np.float32))
    return LabelVolume(arr.copy())


# ---------------------------------------------------------------------------
# Minimal NIfTI-1 reader: single-file uncompressed .nii, dim[0]==3,
# datatypes uint8 (2), int16 (4), float32 (16).
# ---------------------------------------------------------------------------

_NIFTI_DTYPES = {2: "u1", 4: "i2", 16: "f4"}


def load_nifti(path, kind: str = "auto"):
    """Read a .nii file into a Volume3D or LabelVolume.

    ``kind`` is "auto", "volume", or "labels".  Auto loads uint8 data whose
    values all lie in {0..3} as labels and everything else as a scalar volume.
    Raw voxel values are used (scl_slope/scl_inter ignored); both endiannesses
    are accepted.
    """
    if kind not in ("auto", "volume", "labels"):
        raise ValueError(f"kind must be auto|volume|labels, got {kind!r}")
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.read(348)
        if len(header) < 348:
            raise DataFormatError(f"{path}: truncated NIfTI header ({len(header)} bytes)")
        magic = header[344:348]
        if magic != b"n+1\x00":
            raise DataFormatError(f"{path}: bad NIfTI magic {magic!r}")
        for bo in ("<", ">"):
            sizeof_hdr = struct.unpack_from(bo + "i", header, 0)[0]
            if sizeof_hdr == 348:
                break
        else:
            raise DataFormatError(f"{path}: sizeof_hdr != 348 in either byte order")
        dim = struct.unpack_from(bo + "8h", header, 40)
        if dim[0] != 3:
            raise DataFormatError(f"{path}: expected dim[0]==3, got {dim[0]}")
        nx, ny, nz = dim[1], dim[2], dim[3]
        if min(nx, ny, nz) <= 0:
            raise DataFormatError(f"{path}: non-positive dims ({nx}, {ny}, {nz})")
        datatype = struct.unpack_from(bo + "h", header, 70)[0]
        if datatype not in _NIFTI_DTYPES:
            raise DataFormatError(f"{path}: unsupported NIfTI datatype {datatype}")
        pixdim = struct.unpack_from(bo + "8f", header, 76)
        vox_offset = int(struct.unpack_from(bo + "f", header, 108)[0])
        if vox_offset < 348:
            raise DataFormatError(f"{path}: vox_offset {vox_offset} < 348")
        fh.seek(vox_offset)
        dtype = np.dtype(bo + _NIFTI_DTYPES[datatype])
        n = nx * ny * nz
        payload = fh.read(n * dtype.itemsize)
    if len(payload) != n * dtype.itemsize:
        raise DataFormatError(
            f"{path}: truncated NIfTI payload ({len(payload)} of {n * dtype.itemsize} bytes)"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape((nx, ny, nz), order="F")
    spacing = tuple(float(abs(p)) or 1.0 for p in pixdim[1:4])
    as_labels = kind == "labels" or (
        kind == "auto" and datatype == 2 and arr.max(initial=0) <= LABEL_CSF
    )
    if as_labels:
        if datatype != 2 or arr.max(initial=0) > LABEL_CSF:
            raise DataFormatError(f"{path}: voxel data is not a valid label volume")
        return LabelVolume(arr.copy(), spacing=spacing)
    return Volume3D(arr.astype(np.float32), spacing=spacing)


def write_pgm(sl: Slice2D, path) -> None:
    """8-bit binary PGM of a [0,1] slice (value x 255, rows along v)."""
    w, h = sl.dims
    vals = np.clip(sl.data.astype(np.float64), 0.0, 1.0)
    raster = np.rint(vals * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(raster.ravel(order="F").tobytes())


def save_json(obj, path) -> None:
    """Deterministic JSON writer (sorted keys, newline-terminated)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from exc
