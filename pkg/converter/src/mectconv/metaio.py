"""Minimal MetaIO (.mhd + .raw) reader.

Covers the uncompressed subset the published volumes use: a text header of
``Key = Value`` lines next to a raw binary file.  ``DimSize`` lists
dimensions fastest-first (x y z [e]), so the returned numpy array has the
reversed shape — for 4-D sources that is (ne, nz, ny, nx) with x fastest
in memory, matching the MSV payload order directly.

Unsupported features (compressed payloads, embedded LOCAL data, file
lists) raise :class:`MetaIOError` so callers can record the skip.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["MetaIOError", "MetaImage", "read_metaio"]


class MetaIOError(Exception):
    """Header or payload does not follow the supported MetaIO subset."""


_ELEMENT_TYPES = {
    "MET_CHAR": np.int8,
    "MET_UCHAR": np.uint8,
    "MET_SHORT": np.int16,
    "MET_USHORT": np.uint16,
    "MET_INT": np.int32,
    "MET_UINT": np.uint32,
    "MET_LONG": np.int64,
    "MET_ULONG": np.uint64,
    "MET_FLOAT": np.float32,
    "MET_DOUBLE": np.float64,
}


@dataclass
class MetaImage:
    data: np.ndarray  # reversed DimSize order (slowest axis first)
    spacing: tuple[float, ...]  # per DimSize order (x first)
    energy_centers: np.ndarray | None = None
    header: dict[str, str] = field(default_factory=dict)


def _parse_header(path: Path) -> dict[str, str]:
    header: dict[str, str] = {}
    try:
        text = path.read_text()
    except UnicodeDecodeError as exc:
        raise MetaIOError(f"header is not text: {exc}") from exc
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise MetaIOError(f"malformed header line {line!r}")
        header[key.strip()] = value.strip()
    return header


def _as_bool(value: str) -> bool:
    return value.strip().lower() in ("true", "1", "yes")


def read_metaio(path) -> MetaImage:
    """Read an .mhd header and its raw payload."""
    mhd = Path(path)
    header = _parse_header(mhd)

    for key in ("NDims", "DimSize", "ElementType", "ElementDataFile"):
        if key not in header:
            raise MetaIOError(f"missing required header key {key}")
    if _as_bool(header.get("CompressedData", "False")):
        raise MetaIOError("compressed payloads are not supported")

    ndims = int(header["NDims"])
    dims = [int(d) for d in header["DimSize"].split()]
    if ndims < 2 or ndims > 4 or len(dims) != ndims or min(dims) < 1:
        raise MetaIOError(f"unsupported NDims={ndims} DimSize={dims}")

    type_name = header["ElementType"]
    if type_name not in _ELEMENT_TYPES:
        raise MetaIOError(f"unsupported ElementType {type_name}")
    dtype = np.dtype(_ELEMENT_TYPES[type_name])
    if int(header.get("ElementNumberOfChannels", "1")) != 1:
        raise MetaIOError("multi-channel elements are not supported")

    data_file = header["ElementDataFile"]
    if data_file.upper() in ("LOCAL", "LIST"):
        raise MetaIOError(f"ElementDataFile {data_file} is not supported")
    raw_path = mhd.parent / data_file
    if not raw_path.exists():
        raise MetaIOError(f"payload file {data_file} not found")

    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    raw = raw_path.read_bytes()
    if len(raw) != expected:
        raise MetaIOError(
            f"payload is {len(raw)} bytes, header promises {expected}"
        )

    big_endian = _as_bool(
        header.get("BinaryDataByteOrderMSB", header.get("ElementByteOrderMSB", "False"))
    )
    order = ">" if big_endian else "<"
    arr = np.frombuffer(raw, dtype=dtype.newbyteorder(order))
    data = arr.astype(dtype, copy=True).reshape(tuple(reversed(dims)))

    spacing = tuple(
        float(s) for s in header.get("ElementSpacing", "1 " * ndims).split()
    )
    if len(spacing) != ndims:
        raise MetaIOError("ElementSpacing length does not match NDims")

    centers = None
    if "EnergyCenters" in header:
        centers = np.array([float(c) for c in header["EnergyCenters"].split()])

    return MetaImage(data=data, spacing=spacing, energy_centers=centers, header=header)
