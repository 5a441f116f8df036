from __future__ import annotations

import hashlib
import json
from pathlib import Path

import h5py
import numpy as np
import pytest

from mectconv.cli import main
from mectconv.containers import read_msl, read_mss, read_msv


def manifest_of(dst: Path) -> dict:
    return json.loads((dst / "manifest.json").read_text())


def make_volume_h5(path: Path, data: np.ndarray, energies: np.ndarray) -> None:
    with h5py.File(path, "w") as h5:
        h5.create_dataset("recon", data=data)
        h5.create_dataset("energies", data=energies)


def test_hdf5_volume_converts_bit_exact(tmp_path: Path) -> None:
    rng = np.random.default_rng(11)
    data = rng.random((3, 2, 4, 5), dtype=np.float32)
    energies = np.array([40.0, 70.0, 100.0])
    src = tmp_path / "scan.h5"
    make_volume_h5(src, data, energies)
    dst = tmp_path / "out"

    assert main(["convert", str(src), str(dst)]) == 0

    manifest = manifest_of(dst)
    assert manifest["errors"] == []
    (entry,) = manifest["entries"]
    assert entry["kind"] == "volume"
    assert entry["dims"] == [5, 4, 2]
    assert entry["channels"] == 3
    assert entry["dataset"] == "/recon"
    assert entry["energy_source"] == "dataset"

    back, centers, _ = read_msv(dst / entry["output"])
    assert back.tobytes() == data.tobytes()
    np.testing.assert_array_equal(centers, energies)


def test_hdf5_energy_last_axis_is_normalized(tmp_path: Path) -> None:
    rng = np.random.default_rng(12)
    data = rng.random((2, 4, 5, 3), dtype=np.float32)  # energy on the last axis
    energies = np.array([30.0, 60.0, 90.0])
    src = tmp_path / "scan.h5"
    make_volume_h5(src, data, energies)
    dst = tmp_path / "out"

    assert main(["convert", str(src), str(dst)]) == 0

    (entry,) = manifest_of(dst)["entries"]
    back, _, _ = read_msv(dst / entry["output"])
    expected = np.ascontiguousarray(np.moveaxis(data, 3, 0))
    assert back.tobytes() == expected.tobytes()
    assert entry["dims"] == [5, 4, 2]


def test_hdf5_integer_grid_becomes_labels(tmp_path: Path) -> None:
    labels = np.arange(24, dtype=np.uint16).reshape(2, 3, 4)
    labels[-1, -1, -1] = 65535
    src = tmp_path / "seg.h5"
    with h5py.File(src, "w") as h5:
        h5.create_dataset("truth", data=labels)
    dst = tmp_path / "out"

    assert main(["convert", str(src), str(dst)]) == 0

    (entry,) = manifest_of(dst)["entries"]
    assert entry["kind"] == "labels"
    assert entry["channels"] == 0
    back = read_msl(dst / entry["output"])
    assert back.dtype == np.uint32
    np.testing.assert_array_equal(back, labels.astype(np.uint32))


def test_hdf5_sinogram_dataset(tmp_path: Path) -> None:
    rng = np.random.default_rng(13)
    sino = rng.random((3, 8, 10), dtype=np.float32)
    energies = np.array([40.0, 70.0, 100.0])
    src = tmp_path / "acq.h5"
    with h5py.File(src, "w") as h5:
        h5.create_dataset("sinogram", data=sino)
        h5.create_dataset("energies", data=energies)
    dst = tmp_path / "out"

    assert main(["convert", str(src), str(dst)]) == 0

    (entry,) = manifest_of(dst)["entries"]
    assert entry["kind"] == "sinogram"
    assert entry["dims"] == [10, 8]
    back, centers = read_mss(dst / entry["output"])
    assert back.tobytes() == sino.tobytes()
    np.testing.assert_array_equal(centers, energies)


def test_hdf5_energy_attribute_fallback(tmp_path: Path) -> None:
    rng = np.random.default_rng(14)
    data = rng.random((2, 1, 3, 3), dtype=np.float32)
    src = tmp_path / "attr.h5"
    with h5py.File(src, "w") as h5:
        ds = h5.create_dataset("mu", data=data)
        ds.attrs["energies"] = np.array([50.0, 80.0])
    dst = tmp_path / "out"

    assert main(["convert", str(src), str(dst)]) == 0

    (entry,) = manifest_of(dst)["entries"]
    assert entry["energy_source"] == "attribute"
    _, centers, _ = read_msv(dst / entry["output"])
    np.testing.assert_array_equal(centers, [50.0, 80.0])


def test_hdf5_unrecognized_dataset_is_skipped(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    src = tmp_path / "mixed.h5"
    with h5py.File(src, "w") as h5:
        h5.create_dataset("recon", data=np.ones((2, 1, 2, 2), dtype=np.float32))
        h5.create_dataset("energies", data=np.array([40.0, 80.0]))
        h5.create_dataset("weird", data=np.zeros((2, 2, 2, 2, 2)))
    dst = tmp_path / "out"

    assert main(["convert", str(src), str(dst)]) == 1

    manifest = manifest_of(dst)
    assert len(manifest["entries"]) == 1  # the good volume still converts
    (error,) = manifest["errors"]
    assert error["source"].endswith(":/weird")
    assert "unrecognized" in error["message"]
    assert "warning:" in capsys.readouterr().err


def test_corrupt_hdf5_reports_error(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    src = tmp_path / "broken.h5"
    src.write_bytes(b"this is not an hdf5 file at all")
    dst = tmp_path / "out"

    assert main(["convert", str(src), str(dst)]) == 1

    manifest = manifest_of(dst)
    assert manifest["entries"] == []
    (error,) = manifest["errors"]
    assert error["source"] == str(src)
    assert "warning:" in capsys.readouterr().err


def write_mhd(
    tmp_path: Path,
    name: str,
    arr: np.ndarray,
    element_type: str,
    extra: list[str] | None = None,
) -> Path:
    (tmp_path / f"{name}.raw").write_bytes(arr.tobytes())
    lines = [
        "ObjectType = Image",
        f"NDims = {arr.ndim}",
        f"DimSize = {' '.join(str(n) for n in reversed(arr.shape))}",
        f"ElementType = {element_type}",
        *(extra or []),
        f"ElementDataFile = {name}.raw",
    ]
    header = tmp_path / f"{name}.mhd"
    header.write_text("\n".join(lines) + "\n")
    return header


def test_metaio_spectral_volume_round_trip(tmp_path: Path) -> None:
    rng = np.random.default_rng(15)
    data = rng.random((3, 2, 4, 5), dtype=np.float32)  # (ne, nz, ny, nx)
    src = write_mhd(
        tmp_path, "vol", data, "MET_FLOAT",
        extra=[
            "ElementSpacing = 0.5 0.5 2.0 1.0",
            "EnergyCenters = 40 70 100",
        ],
    )
    dst = tmp_path / "out"

    assert main(["convert", str(src), str(dst)]) == 0

    (entry,) = manifest_of(dst)["entries"]
    assert entry["energy_source"] == "header"
    back, centers, voxel = read_msv(dst / entry["output"])
    assert back.tobytes() == data.tobytes()
    np.testing.assert_array_equal(centers, [40.0, 70.0, 100.0])
    assert voxel == pytest.approx((0.5, 0.5, 2.0))


def test_metaio_ushort_becomes_labels(tmp_path: Path) -> None:
    labels = np.array([[0, 1], [2, 3]], dtype=np.uint16)
    src = write_mhd(tmp_path, "seg", labels, "MET_USHORT")
    dst = tmp_path / "out"

    assert main(["convert", str(src), str(dst)]) == 0

    (entry,) = manifest_of(dst)["entries"]
    assert entry["kind"] == "labels"
    back = read_msl(dst / entry["output"])
    np.testing.assert_array_equal(back, labels.astype(np.uint32)[None])


def test_metaio_double_is_narrowed_to_float32(tmp_path: Path) -> None:
    data = np.linspace(0.0, 0.37, 8, dtype=np.float64).reshape(2, 2, 2) + 1e-9
    src = write_mhd(tmp_path, "dbl", data, "MET_DOUBLE")
    dst = tmp_path / "out"

    assert main(["convert", str(src), str(dst)]) == 0

    (entry,) = manifest_of(dst)["entries"]
    back, _, _ = read_msv(dst / entry["output"])
    np.testing.assert_array_equal(back[0], data.astype(np.float32))


def test_metaio_3d_with_energy_centers_is_spectral(tmp_path: Path) -> None:
    data = np.arange(2 * 3 * 4, dtype=np.float32).reshape(2, 3, 4)
    src = write_mhd(
        tmp_path, "stack", data, "MET_FLOAT", extra=["EnergyCenters = 45 95"]
    )
    dst = tmp_path / "out"

    assert main(["convert", str(src), str(dst)]) == 0

    (entry,) = manifest_of(dst)["entries"]
    assert entry["channels"] == 2
    assert entry["dims"] == [4, 3, 1]
    back, centers, _ = read_msv(dst / entry["output"])
    np.testing.assert_array_equal(back[:, 0], data)
    np.testing.assert_array_equal(centers, [45.0, 95.0])


def test_metaio_sinogram_by_file_name(tmp_path: Path) -> None:
    sino = np.arange(2 * 5 * 7, dtype=np.float32).reshape(2, 5, 7)
    src = write_mhd(tmp_path, "sino_a", sino, "MET_FLOAT")
    dst = tmp_path / "out"

    assert main(["convert", str(src), str(dst)]) == 0

    (entry,) = manifest_of(dst)["entries"]
    assert entry["kind"] == "sinogram"
    back, _ = read_mss(dst / entry["output"])
    assert back.tobytes() == sino.tobytes()


def test_metaio_missing_raw_reports_error(tmp_path: Path) -> None:
    src = write_mhd(
        tmp_path, "gone", np.zeros((2, 2), dtype=np.float32), "MET_FLOAT"
    )
    (tmp_path / "gone.raw").unlink()
    dst = tmp_path / "out"

    assert main(["convert", str(src), str(dst)]) == 1

    (error,) = manifest_of(dst)["errors"]
    assert "not found" in error["message"]


def test_pattern_filters_directory_sources(tmp_path: Path) -> None:
    src = tmp_path / "tree"
    src.mkdir()
    make_volume_h5(
        src / "keep_a.h5",
        np.ones((1, 1, 2, 2), dtype=np.float32),
        np.array([60.0]),
    )
    make_volume_h5(
        src / "drop_b.h5",
        np.ones((1, 1, 2, 2), dtype=np.float32),
        np.array([60.0]),
    )
    dst = tmp_path / "out"

    assert main(["convert", str(src), str(dst), "--pattern", "keep*"]) == 0

    manifest = manifest_of(dst)
    assert len(manifest["entries"]) == 1
    assert manifest["entries"][0]["source"].endswith("keep_a.h5")


def test_colliding_output_names_get_suffixes(tmp_path: Path) -> None:
    src = tmp_path / "tree"
    for sub in ("a", "b"):
        (src / sub).mkdir(parents=True)
        make_volume_h5(
            src / sub / "scan.h5",
            np.full((1, 1, 2, 2), 0.5, dtype=np.float32),
            np.array([60.0]),
        )
    dst = tmp_path / "out"

    assert main(["convert", str(src), str(dst)]) == 0

    names = sorted(e["output"] for e in manifest_of(dst)["entries"])
    assert names == ["scan__recon.msv", "scan__recon_2.msv"]
    for name in names:
        assert (dst / name).exists()


def test_rerun_produces_identical_bytes(tmp_path: Path) -> None:
    src = tmp_path / "tree"
    src.mkdir()
    rng = np.random.default_rng(16)
    make_volume_h5(
        src / "scan.h5",
        rng.random((2, 1, 3, 3), dtype=np.float32),
        np.array([40.0, 90.0]),
    )
    write_mhd(
        src, "seg", np.ones((2, 2), dtype=np.uint8), "MET_UCHAR"
    )
    first, second = tmp_path / "out1", tmp_path / "out2"

    assert main(["convert", str(src), str(first)]) == 0
    assert main(["convert", str(src), str(second)]) == 0

    names = sorted(p.name for p in first.iterdir())
    assert names == sorted(p.name for p in second.iterdir())
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_manifest_checksums_match_outputs(tmp_path: Path) -> None:
    src = tmp_path / "scan.h5"
    make_volume_h5(
        src, np.ones((1, 2, 2, 2), dtype=np.float32), np.array([75.0])
    )
    dst = tmp_path / "out"

    assert main(["convert", str(src), str(dst)]) == 0

    for entry in manifest_of(dst)["entries"]:
        blob = (dst / entry["output"]).read_bytes()
        assert entry["checksum"] == f"sha256:{hashlib.sha256(blob).hexdigest()}"


def test_unsupported_extension_reports_error(tmp_path: Path) -> None:
    src = tmp_path / "notes.txt"
    src.write_text("not image data")
    dst = tmp_path / "out"

    assert main(["convert", str(src), str(dst)]) == 1

    (error,) = manifest_of(dst)["errors"]
    assert "unsupported source type" in error["message"]


def test_cli_usage_errors(tmp_path: Path) -> None:
    assert main(["convert", str(tmp_path / "missing"), str(tmp_path / "o")]) == 2
    with pytest.raises(SystemExit) as excinfo:
        main(["--version"])
    assert excinfo.value.code == 0
    with pytest.raises(SystemExit) as excinfo:
        main([])
    assert excinfo.value.code == 2
