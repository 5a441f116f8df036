"""Writers and check-readers for the MSV/MSL/MSS container formats.

All three are little-endian with a 4-byte magic and u32 header fields:

    MSV1 | u32 nx ny nz ne | f32 sx sy sz | ne * f32 centers | f32 payload
    MSL1 | u32 nx ny nz    | u32 payload
    MSS1 | u32 n_angles n_detectors ne | ne * f32 centers | f32 payload

Volume payloads are C-order over (ne, nz, ny, nx) — x fastest, energy
slowest; label payloads over (nz, ny, nx); sinogram payloads over
(ne, n_angles, n_detectors) with the detector index fastest.

The readers here exist so the converter can verify its own output without
depending on any downstream consumer; they parse strictly and raise
``ValueError`` on any deviation from the layout above.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = [
    "write_msv",
    "write_msl",
    "write_mss",
    "read_msv",
    "read_msl",
    "read_mss",
]

MSV_MAGIC = b"MSV1"
MSL_MAGIC = b"MSL1"
MSS_MAGIC = b"MSS1"


def _check_energy(centers: np.ndarray, ne: int) -> np.ndarray:
    c = np.asarray(centers, dtype=np.float64)
    if c.shape != (ne,):
        raise ValueError(f"need {ne} energy centers, got shape {c.shape}")
    if not np.all(np.isfinite(c)) or (ne > 1 and not np.all(np.diff(c) > 0)):
        raise ValueError("energy centers must be finite and strictly increasing")
    return c


def write_msv(
    path,
    data: np.ndarray,
    centers: np.ndarray,
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> None:
    """Write a spectral volume; ``data`` must be float32 (ne, nz, ny, nx)."""
    arr = np.ascontiguousarray(data)
    if arr.ndim != 4 or min(arr.shape) < 1:
        raise ValueError(f"volume must be 4-D (ne, nz, ny, nx), got {arr.shape}")
    if arr.dtype != np.float32:
        raise ValueError(f"volume payload must be float32, got {arr.dtype}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("volume payload contains non-finite values")
    ne, nz, ny, nx = arr.shape
    c = _check_energy(centers, ne)
    with open(path, "wb") as fh:
        fh.write(MSV_MAGIC + struct.pack("<4I", nx, ny, nz, ne))
        fh.write(struct.pack("<3f", *voxel_size))
        fh.write(c.astype("<f4").tobytes())
        fh.write(arr.astype("<f4", copy=False).tobytes())


def write_msl(path, labels: np.ndarray) -> None:
    """Write a label volume; ``labels`` must be uint32 (nz, ny, nx)."""
    arr = np.ascontiguousarray(labels)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ValueError(f"labels must be 3-D (nz, ny, nx), got {arr.shape}")
    if arr.dtype != np.uint32:
        raise ValueError(f"label payload must be uint32, got {arr.dtype}")
    nz, ny, nx = arr.shape
    with open(path, "wb") as fh:
        fh.write(MSL_MAGIC + struct.pack("<3I", nx, ny, nz))
        fh.write(arr.astype("<u4", copy=False).tobytes())


def write_mss(path, data: np.ndarray, centers: np.ndarray) -> None:
    """Write a sinogram; ``data`` must be float32 (ne, n_angles, n_detectors)."""
    arr = np.ascontiguousarray(data)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ValueError(f"sinogram must be 3-D (ne, n_angles, n_det), got {arr.shape}")
    if arr.dtype != np.float32:
        raise ValueError(f"sinogram payload must be float32, got {arr.dtype}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("sinogram payload contains non-finite values")
    ne, n_angles, n_det = arr.shape
    c = _check_energy(centers, ne)
    with open(path, "wb") as fh:
        fh.write(MSS_MAGIC + struct.pack("<3I", n_angles, n_det, ne))
        fh.write(c.astype("<f4").tobytes())
        fh.write(arr.astype("<f4", copy=False).tobytes())


def _read_exact(fh, count: int, what: str) -> bytes:
    raw = fh.read(count)
    if len(raw) != count:
        raise ValueError(f"truncated container: {what}")
    return raw


def read_msv(path) -> tuple[np.ndarray, np.ndarray, tuple[float, float, float]]:
    """Parse an MSV file into (data, centers, voxel_size)."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MSV_MAGIC:
            raise ValueError("bad MSV magic")
        nx, ny, nz, ne = struct.unpack("<4I", _read_exact(fh, 16, "dims"))
        if min(nx, ny, nz, ne) < 1:
            raise ValueError("MSV dimensions must all be positive")
        sx, sy, sz = struct.unpack("<3f", _read_exact(fh, 12, "voxel size"))
        centers = np.frombuffer(
            _read_exact(fh, 4 * ne, "energy axis"), dtype="<f4"
        ).astype(np.float64)
        payload = np.frombuffer(
            _read_exact(fh, 4 * nx * ny * nz * ne, "payload"), dtype="<f4"
        )
        if fh.read(1):
            raise ValueError("trailing bytes after MSV payload")
    return payload.reshape(ne, nz, ny, nx).copy(), centers, (sx, sy, sz)


def read_msl(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MSL_MAGIC:
            raise ValueError("bad MSL magic")
        nx, ny, nz = struct.unpack("<3I", _read_exact(fh, 12, "dims"))
        if min(nx, ny, nz) < 1:
            raise ValueError("MSL dimensions must all be positive")
        payload = np.frombuffer(
            _read_exact(fh, 4 * nx * ny * nz, "payload"), dtype="<u4"
        )
        if fh.read(1):
            raise ValueError("trailing bytes after MSL payload")
    return payload.reshape(nz, ny, nx).copy()


def read_mss(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MSS_MAGIC:
            raise ValueError("bad MSS magic")
        n_angles, n_det, ne = struct.unpack("<3I", _read_exact(fh, 12, "dims"))
        if min(n_angles, n_det, ne) < 1:
            raise ValueError("MSS dimensions must all be positive")
        centers = np.frombuffer(
            _read_exact(fh, 4 * ne, "energy axis"), dtype="<f4"
        ).astype(np.float64)
        payload = np.frombuffer(
            _read_exact(fh, 4 * ne * n_angles * n_det, "payload"), dtype="<f4"
        )
        if fh.read(1):
            raise ValueError("trailing bytes after MSS payload")
    return payload.reshape(ne, n_angles, n_det).copy(), centers
