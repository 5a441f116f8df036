"""Core data model: spectral volumes, label volumes, and their file containers.

A spectral volume is a 3-D voxel grid where every voxel carries a vector of
linear attenuation coefficients (1/cm), one per energy channel.  The energy
axis is stored explicitly as bin centers in keV; nothing in this package ever
derives a center from a bin index.

Array layout convention
-----------------------
``SpectralVolume.data`` has shape ``(ne, nz, ny, nx)`` in C order, so a flat
view enumerates x fastest, then y, then z, with energy slowest.  That flat
order is also the payload order of the ``.msv`` container and the voxel scan
order used for label canonicalization.  ``LabelVolume.labels`` has shape
``(nz, ny, nx)``.

File containers (all little-endian)
-----------------------------------
``.msv``  magic ``MSV1`` | u32 nx, ny, nz, ne | f32 sx, sy, sz (mm)
          | ne * f32 bin centers (keV) | nx*ny*nz*ne * f32 payload
``.msl``  magic ``MSL1`` | u32 nx, ny, nz | nx*ny*nz * u32 payload

Composites are emitted as binary PPM (P6).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FormatError",
    "TruncationError",
    "EnergyAxis",
    "SpectralVolume",
    "LabelVolume",
    "Segmentation",
    "load_volume",
    "save_volume",
    "load_labels",
    "save_labels",
    "volume_digest",
    "canonicalize_labels",
    "rgb_composite",
    "write_ppm",
]

MSV_MAGIC = b"MSV1"
MSL_MAGIC = b"MSL1"


class FormatError(Exception):
    """A container file does not follow its documented byte layout."""


class TruncationError(FormatError):
    """A container header promises more payload than the file holds."""


@dataclass(frozen=True)
class EnergyAxis:
    """Energy bin centers in keV, strictly increasing."""

    centers: np.ndarray  # float64, shape (ne,)

    def __post_init__(self) -> None:
        c = np.asarray(self.centers, dtype=np.float64)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("energy axis needs at least one bin center")
        if not np.all(np.isfinite(c)):
            raise ValueError("energy axis contains non-finite centers")
        if c.size > 1 and not np.all(np.diff(c) > 0):
            raise ValueError("energy bin centers must be strictly increasing")
        object.__setattr__(self, "centers", c)

    def __len__(self) -> int:
        return int(self.centers.size)


@dataclass
class SpectralVolume:
    """Voxel grid of per-channel linear attenuation coefficients (1/cm)."""

    data: np.ndarray  # float32, shape (ne, nz, ny, nx)
    energy: EnergyAxis
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)  # mm

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 4:
            raise ValueError("volume data must have shape (ne, nz, ny, nx)")
        if self.data.shape[0] != len(self.energy):
            raise ValueError("channel count does not match the energy axis")
        if min(self.data.shape) < 1:
            raise ValueError("volume dimensions must all be positive")
        finite = np.isfinite(self.data)
        if not finite.all():
            first = int(np.flatnonzero(~finite.ravel())[0])
            raise ValueError(
                f"volume payload contains a non-finite value at flat index {first}"
            )
        sx, sy, sz = (float(s) for s in self.voxel_size)
        if min(sx, sy, sz) <= 0:
            raise ValueError("voxel size must be positive")
        self.voxel_size = (sx, sy, sz)

    @property
    def dims(self) -> tuple[int, int, int]:
        """(nx, ny, nz)."""
        ne, nz, ny, nx = self.data.shape
        return nx, ny, nz

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    def signatures(self) -> np.ndarray:
        """Per-voxel spectral vectors, shape (nx*ny*nz, ne), scan order."""
        return self.data.reshape(self.n_channels, -1).T


@dataclass
class LabelVolume:
    """Integer segment labels on a voxel grid; 0 is background."""

    labels: np.ndarray  # uint32, shape (nz, ny, nx)

    def __post_init__(self) -> None:
        arr = np.asarray(self.labels)
        if arr.ndim != 3:
            raise ValueError("labels must have shape (nz, ny, nx)")
        if min(arr.shape) < 1:
            raise ValueError("label dimensions must all be positive")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError("labels must be integers")
        if arr.dtype != np.uint32:
            if arr.min() < 0 or arr.max() > np.iinfo(np.uint32).max:
                raise ValueError("labels out of u32 range")
            arr = arr.astype(np.uint32)
        self.labels = np.ascontiguousarray(arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        """(nx, ny, nz)."""
        nz, ny, nx = self.labels.shape
        return nx, ny, nz

    def segment_ids(self) -> np.ndarray:
        """Sorted nonzero labels present in the volume."""
        ids = np.unique(self.labels)
        return ids[ids != 0]


@dataclass
class Segmentation:
    """A labeling plus the provenance needed to reproduce it."""

    labels: LabelVolume
    algorithm: str  # "graphcut" | "fams"
    params: dict = field(default_factory=dict)
    source_digest: str = ""


# ---------------------------------------------------------------------------
# container I/O


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncationError(f"unexpected end of file while reading {what}")
    return buf


def _pack_volume(v: SpectralVolume) -> bytes:
    nx, ny, nz = v.dims
    ne = v.n_channels
    head = MSV_MAGIC + struct.pack("<4I", nx, ny, nz, ne)
    head += struct.pack("<3f", *v.voxel_size)
    head += v.energy.centers.astype("<f4").tobytes()
    return head + v.data.astype("<f4").tobytes()


def save_volume(path, v: SpectralVolume) -> None:
    with open(path, "wb") as fh:
        fh.write(_pack_volume(v))


def load_volume(path) -> SpectralVolume:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MSV_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MSV_MAGIC!r}")
        nx, ny, nz, ne = struct.unpack("<4I", _read_exact(fh, 16, "dims"))
        if min(nx, ny, nz, ne) < 1:
            raise FormatError("volume dimensions must all be positive")
        sx, sy, sz = struct.unpack("<3f", _read_exact(fh, 12, "voxel size"))
        centers = np.frombuffer(
            _read_exact(fh, 4 * ne, "energy axis"), dtype="<f4"
        ).astype(np.float64)
        count = nx * ny * nz * ne
        payload = np.frombuffer(
            _read_exact(fh, 4 * count, "payload"), dtype="<f4"
        )
        if fh.read(1):
            raise FormatError("trailing bytes after payload")
    try:
        return SpectralVolume(
            data=payload.reshape(ne, nz, ny, nx).copy(),
            energy=EnergyAxis(centers),
            voxel_size=(sx, sy, sz),
        )
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc


def volume_digest(v: SpectralVolume) -> str:
    """Content hash (sha256 of the serialized container bytes)."""
    return hashlib.sha256(_pack_volume(v)).hexdigest()


def save_labels(path, lv: LabelVolume) -> None:
    nx, ny, nz = lv.dims
    with open(path, "wb") as fh:
        fh.write(MSL_MAGIC + struct.pack("<3I", nx, ny, nz))
        fh.write(lv.labels.astype("<u4").tobytes())


def load_labels(path) -> LabelVolume:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MSL_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MSL_MAGIC!r}")
        nx, ny, nz = struct.unpack("<3I", _read_exact(fh, 12, "dims"))
        if min(nx, ny, nz) < 1:
            raise FormatError("label dimensions must all be positive")
        count = nx * ny * nz
        payload = np.frombuffer(_read_exact(fh, 4 * count, "payload"), dtype="<u4")
        if fh.read(1):
            raise FormatError("trailing bytes after payload")
    return LabelVolume(labels=payload.reshape(nz, ny, nx).copy())


# ---------------------------------------------------------------------------
# label utilities


def canonicalize_labels(lv: LabelVolume) -> LabelVolume:
    """Renumber nonzero labels to 1..n by first occurrence in scan order.

    Scan order is x fastest, then y, then z.  Background stays 0.  The
    operation preserves the partition and is idempotent.
    """
    flat = lv.labels.ravel()
    uniq, inverse = np.unique(flat, return_inverse=True)
    first = np.full(uniq.size, flat.size, dtype=np.int64)
    np.minimum.at(first, inverse, np.arange(flat.size, dtype=np.int64))
    remap = np.zeros(uniq.size, dtype=np.uint32)
    nonzero = np.flatnonzero(uniq != 0)
    order = np.argsort(first[nonzero], kind="stable")
    remap[nonzero[order]] = np.arange(1, nonzero.size + 1, dtype=np.uint32)
    return LabelVolume(labels=remap[inverse].reshape(lv.labels.shape))


# ---------------------------------------------------------------------------
# composites


def rgb_composite(v: SpectralVolume, channels: tuple[int, int, int]) -> np.ndarray:
    """Map three energy channels to an 8-bit RGB stack, shape (nz, ny, nx, 3).

    Each channel is min-max normalized per z-slice; a constant slice maps
    to 0.
    """
    ne, nz, ny, nx = v.data.shape
    for c in channels:
        if not 0 <= c < ne:
            raise ValueError(f"channel index {c} out of range for {ne} channels")
    out = np.zeros((nz, ny, nx, 3), dtype=np.uint8)
    for rgb, c in enumerate(channels):
        plane = v.data[c].astype(np.float64)
        lo = plane.min(axis=(1, 2), keepdims=True)
        hi = plane.max(axis=(1, 2), keepdims=True)
        span = hi - lo
        scaled = np.where(span > 0, (plane - lo) / np.where(span > 0, span, 1.0), 0.0)
        out[..., rgb] = np.rint(scaled * 255.0).astype(np.uint8)
    return out


def write_ppm(path, image: np.ndarray) -> None:
    """Write one RGB slice, shape (ny, nx, 3) uint8, as binary PPM (P6)."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError("PPM image must be (ny, nx, 3) uint8")
    ny, nx = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{nx} {ny}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())
