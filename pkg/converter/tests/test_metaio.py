from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from mectconv.metaio import MetaIOError, read_metaio


def write_pair(
    tmp_path: Path,
    name: str,
    payload: np.ndarray | bytes,
    shape: tuple[int, ...],
    element_type: str,
    extra: list[str] | None = None,
) -> Path:
    """Write a .mhd/.raw pair; DimSize is fastest-axis-first per the format."""
    raw_name = f"{name}.raw"
    blob = payload if isinstance(payload, bytes) else payload.tobytes()
    (tmp_path / raw_name).write_bytes(blob)
    lines = [
        "ObjectType = Image",
        f"NDims = {len(shape)}",
        f"DimSize = {' '.join(str(n) for n in reversed(shape))}",
        f"ElementType = {element_type}",
        *(extra or []),
        f"ElementDataFile = {raw_name}",
    ]
    header = tmp_path / f"{name}.mhd"
    header.write_text("\n".join(lines) + "\n")
    return header


def test_reads_float_volume_with_reversed_dims(tmp_path: Path) -> None:
    arr = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    header = write_pair(
        tmp_path, "vol", arr, arr.shape, "MET_FLOAT",
        extra=["ElementSpacing = 0.5 0.25 2.0"],
    )
    image = read_metaio(header)
    assert image.data.shape == (2, 3, 4)  # numpy order, z slowest
    np.testing.assert_array_equal(image.data, arr)
    assert image.spacing == pytest.approx((0.5, 0.25, 2.0))


def test_spacing_defaults_to_ones(tmp_path: Path) -> None:
    arr = np.zeros((3, 5), dtype=np.float32)
    image = read_metaio(write_pair(tmp_path, "flat", arr, arr.shape, "MET_FLOAT"))
    assert image.spacing == pytest.approx((1.0, 1.0))


def test_double_payload_keeps_double_precision(tmp_path: Path) -> None:
    arr = np.linspace(0.0, 1.0, 12).reshape(3, 4) + 1e-12
    image = read_metaio(write_pair(tmp_path, "d", arr, arr.shape, "MET_DOUBLE"))
    assert image.data.dtype == np.float64
    np.testing.assert_array_equal(image.data, arr)


def test_big_endian_payload_is_byteswapped(tmp_path: Path) -> None:
    arr = np.array([[1.5, -2.25], [3.0, 4096.5]], dtype=np.float32)
    header = write_pair(
        tmp_path, "be", arr.astype(">f4").tobytes(), arr.shape, "MET_FLOAT",
        extra=["BinaryDataByteOrderMSB = True"],
    )
    image = read_metaio(header)
    assert image.data.dtype.isnative
    np.testing.assert_array_equal(image.data, arr)


def test_energy_centers_header_key(tmp_path: Path) -> None:
    arr = np.zeros((2, 2, 2), dtype=np.float32)
    header = write_pair(
        tmp_path, "spec", arr, arr.shape, "MET_FLOAT",
        extra=["EnergyCenters = 40 70"],
    )
    image = read_metaio(header)
    np.testing.assert_array_equal(image.energy_centers, [40.0, 70.0])


def test_comments_and_blank_lines_are_ignored(tmp_path: Path) -> None:
    arr = np.ones((2, 2), dtype=np.uint16)
    raw = tmp_path / "c.raw"
    raw.write_bytes(arr.tobytes())
    header = tmp_path / "c.mhd"
    header.write_text(
        "# exported scan\n\nObjectType = Image\nNDims = 2\nDimSize = 2 2\n"
        "ElementType = MET_USHORT\nElementDataFile = c.raw\n"
    )
    np.testing.assert_array_equal(read_metaio(header).data, arr)


def test_missing_raw_file_raises(tmp_path: Path) -> None:
    header = write_pair(
        tmp_path, "gone", np.zeros((2, 2), dtype=np.float32), (2, 2), "MET_FLOAT"
    )
    (tmp_path / "gone.raw").unlink()
    with pytest.raises(MetaIOError, match="not found"):
        read_metaio(header)


def test_payload_size_mismatch_raises(tmp_path: Path) -> None:
    header = write_pair(
        tmp_path, "short", b"\x00" * 10, (2, 2), "MET_FLOAT"
    )
    with pytest.raises(MetaIOError, match="payload"):
        read_metaio(header)


def test_unsupported_features_raise(tmp_path: Path) -> None:
    arr = np.zeros((2, 2), dtype=np.float32)
    compressed = write_pair(
        tmp_path, "z", arr, arr.shape, "MET_FLOAT",
        extra=["CompressedData = True"],
    )
    with pytest.raises(MetaIOError, match="compressed"):
        read_metaio(compressed)
    rgb = write_pair(
        tmp_path, "rgb", arr, arr.shape, "MET_FLOAT",
        extra=["ElementNumberOfChannels = 3"],
    )
    with pytest.raises(MetaIOError, match="multi-channel"):
        read_metaio(rgb)
    local = tmp_path / "local.mhd"
    local.write_text(
        "NDims = 2\nDimSize = 2 2\nElementType = MET_FLOAT\n"
        "ElementDataFile = LOCAL\n"
    )
    with pytest.raises(MetaIOError, match="LOCAL"):
        read_metaio(local)


def test_malformed_header_line_raises(tmp_path: Path) -> None:
    header = tmp_path / "junk.mhd"
    header.write_text("NDims = 2\nthis line has no equals sign\n")
    with pytest.raises(MetaIOError, match="malformed"):
        read_metaio(header)
