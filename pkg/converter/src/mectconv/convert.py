"""Batch conversion of HDF5 / MetaIO sources into MSV, MSL and MSS files.

Each source file may yield several outputs (an HDF5 archive can hold a
reconstruction, a label map and a sinogram side by side).  Every output is
listed in ``manifest.json`` together with its SHA-256 checksum; checksums
are recomputed from the written file, so a manifest entry doubles as a
write-verification record.  Failures never abort the batch -- they are
collected as error entries and reported through the exit code.

32-bit float sources survive bit-exactly: axis reordering changes the byte
layout but not a single sample value.  64-bit floats are rounded to
float32 (round-to-nearest); integers destined for label maps are widened
to uint32.
"""

from __future__ import annotations

import hashlib
import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import h5py
import numpy as np

from . import __version__
from .containers import write_msl, write_mss, write_msv
from .hdf5 import discover
from .metaio import MetaIOError, read_metaio

__all__ = ["ConversionResult", "convert_tree", "convert_file"]

_SINO_NAMES = ("sino", "proj")


@dataclass
class ConversionResult:
    entries: list[dict] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)

    def manifest(self) -> dict:
        return {
            "tool": "mectconv",
            "version": __version__,
            "entries": self.entries,
            "errors": self.errors,
        }


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return f"sha256:{digest.hexdigest()}"


def _slug(text: str) -> str:
    cleaned = re.sub(r"[^A-Za-z0-9]+", "-", text).strip("-")
    return cleaned.lower() or "data"


def _unique(dst: Path, stem: str, suffix: str, taken: set[str]) -> Path:
    name = f"{stem}{suffix}"
    counter = 2
    while name in taken or (dst / name).exists():
        name = f"{stem}_{counter}{suffix}"
        counter += 1
    taken.add(name)
    return dst / name


def _entry(
    source: Path, out: Path, kind: str, data: np.ndarray, channels: int
) -> dict:
    # dims are reported x-first to match the container headers
    return {
        "source": str(source),
        "output": out.name,
        "kind": kind,
        "dims": [int(n) for n in reversed(data.shape[-3:])]
        if kind != "sinogram"
        else [int(data.shape[2]), int(data.shape[1])],
        "channels": channels,
        "checksum": _sha256(out),
    }


def _convert_hdf5(
    source: Path, dst: Path, result: ConversionResult, taken: set[str]
) -> None:
    with h5py.File(source, "r") as h5:
        items, skipped = discover(h5)
    for path, reason in skipped:
        _warn(f"{source}: skipping {path}: {reason}")
        result.errors.append({"source": f"{source}:{path}", "message": reason})
    for item in items:
        stem = f"{source.stem}__{_slug(item.dataset)}"
        if item.kind == "volume":
            out = _unique(dst, stem, ".msv", taken)
            write_msv(out, item.data, np.asarray(item.centers))
            entry = _entry(source, out, "volume", item.data, item.data.shape[0])
        elif item.kind == "sinogram":
            out = _unique(dst, stem, ".mss", taken)
            write_mss(out, item.data, np.asarray(item.centers))
            entry = _entry(source, out, "sinogram", item.data, item.data.shape[0])
        else:
            out = _unique(dst, stem, ".msl", taken)
            write_msl(out, item.data)
            entry = _entry(source, out, "labels", item.data, 0)
        entry["dataset"] = item.dataset
        entry["energy_source"] = item.energy_source
        result.entries.append(entry)


def _convert_metaio(
    source: Path, dst: Path, result: ConversionResult, taken: set[str]
) -> None:
    image = read_metaio(source)
    data = image.data
    stem = source.stem
    if data.dtype.kind == "u" or (
        data.dtype.kind == "i" and int(data.min(initial=0)) >= 0
    ):
        if data.ndim == 4:
            raise MetaIOError("4-D integer images are not supported")
        labels = np.ascontiguousarray(
            data if data.ndim == 3 else data[None], dtype=np.uint32
        )
        out = _unique(dst, stem, ".msl", taken)
        write_msl(out, labels)
        entry = _entry(source, out, "labels", labels, 0)
    else:
        values = np.ascontiguousarray(data, dtype=np.float32)
        if values.ndim == 2:
            values = values[None]
        if values.ndim == 3 and any(n in stem.lower() for n in _SINO_NAMES):
            centers = image.energy_centers
            if centers is None or len(centers) != values.shape[0]:
                centers = 1.0 + np.arange(values.shape[0], dtype=np.float64)
            out = _unique(dst, stem, ".mss", taken)
            write_mss(out, values, centers)
            entry = _entry(source, out, "sinogram", values, values.shape[0])
            entry["energy_source"] = (
                "header" if image.energy_centers is not None else "synthetic"
            )
        else:
            centers = image.energy_centers
            if values.ndim == 3:
                if centers is not None and len(centers) == values.shape[0]:
                    values = values[:, None]  # per-energy single-slice stack
                else:
                    values = values[None]
            source_tag = "header"
            if centers is None or len(centers) != values.shape[0]:
                centers = 1.0 + np.arange(values.shape[0], dtype=np.float64)
                source_tag = "synthetic"
            spacing = (tuple(image.spacing) + (1.0, 1.0, 1.0))[:3]
            out = _unique(dst, stem, ".msv", taken)
            write_msv(out, values, centers, voxel_size=spacing)
            entry = _entry(source, out, "volume", values, values.shape[0])
            entry["energy_source"] = source_tag
    result.entries.append(entry)


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def convert_file(
    source: Path, dst: Path, result: ConversionResult, taken: set[str]
) -> None:
    """Convert one source file, appending entries or an error record."""
    try:
        suffix = source.suffix.lower()
        if suffix in (".h5", ".hdf5"):
            _convert_hdf5(source, dst, result, taken)
        elif suffix == ".mhd":
            _convert_metaio(source, dst, result, taken)
        else:
            raise ValueError(f"unsupported source type: {source.suffix}")
    except (OSError, ValueError, MetaIOError) as exc:
        _warn(f"{source}: {exc}")
        result.errors.append({"source": str(source), "message": str(exc)})


def convert_tree(src: Path, dst: Path, pattern: str = "*") -> ConversionResult:
    """Convert ``src`` (file or directory) into ``dst``; write the manifest.

    Directory sources are scanned recursively for ``.h5``/``.hdf5``/``.mhd``
    files whose names match ``pattern``.  Sources are processed in sorted
    order so reruns produce identical outputs and manifests.
    """
    dst.mkdir(parents=True, exist_ok=True)
    if src.is_dir():
        sources = sorted(
            p
            for p in src.rglob(pattern)
            if p.is_file() and p.suffix.lower() in (".h5", ".hdf5", ".mhd")
        )
        if not sources:
            _warn(f"{src}: no convertible files match {pattern!r}")
    else:
        sources = [src]

    result = ConversionResult()
    taken: set[str] = set()
    for source in sources:
        convert_file(source, dst, result, taken)
    (dst / "manifest.json").write_text(
        json.dumps(result.manifest(), indent=2) + "\n"
    )
    return result
