"""Heuristic discovery of convertible datasets inside an HDF5 file.

Published scan archives do not share a fixed internal layout, so datasets
are classified by shape and dtype rather than by name:

- float 4-D           -> spectral volume (energy axis moved to the front)
- float 3-D           -> sinogram when the dataset name contains "sino" or
                         "proj"; otherwise a spectral single-slice volume
                         when one axis matches the energy vector, else a
                         single-channel volume
- integer 2-D or 3-D  -> label map
- 1-D float           -> energy bin centers when the name suggests it
                         (or when it is the only 1-D float dataset)

Energy centers may also live in an attribute (``energies``, ``energy`` or
``bin_centers``) of the data itself.  When nothing identifies the axis,
synthetic centers 1..ne are used and recorded as such.  Every decision is
reported back so the manifest can say which dataset produced which file.
"""

from __future__ import annotations

from dataclasses import dataclass

import h5py
import numpy as np

__all__ = ["H5Item", "discover"]

_ENERGY_NAMES = ("energy", "energies", "kev", "bin_center", "bincenters")
_SINO_NAMES = ("sino", "proj")
_ENERGY_ATTRS = ("energies", "energy", "bin_centers")


@dataclass
class H5Item:
    dataset: str  # HDF5 path of the source dataset
    kind: str  # volume | labels | sinogram
    data: np.ndarray  # normalized layout, ready for the container writer
    centers: np.ndarray | None
    energy_source: str  # dataset | attribute | synthetic | none


def _basename(path: str) -> str:
    return path.rsplit("/", 1)[-1].lower()


def _valid_axis(centers: np.ndarray) -> bool:
    return (
        centers.ndim == 1
        and centers.size > 0
        and bool(np.all(np.isfinite(centers)))
        and (centers.size == 1 or bool(np.all(np.diff(centers) > 0)))
    )


def _find_energy(datasets: dict[str, h5py.Dataset]) -> tuple[str, np.ndarray] | None:
    one_d = {
        path: ds
        for path, ds in datasets.items()
        if ds.ndim == 1 and ds.dtype.kind == "f"
    }
    named = [p for p in sorted(one_d) if any(n in _basename(p) for n in _ENERGY_NAMES)]
    candidates = named if named else (sorted(one_d) if len(one_d) == 1 else [])
    for path in candidates:
        centers = np.asarray(one_d[path][()], dtype=np.float64)
        if _valid_axis(centers):
            return path, centers
    return None


def _attr_energy(ds: h5py.Dataset) -> np.ndarray | None:
    for key in _ENERGY_ATTRS:
        if key in ds.attrs:
            centers = np.asarray(ds.attrs[key], dtype=np.float64).ravel()
            if _valid_axis(centers):
                return centers
    return None


def _synthetic(ne: int) -> np.ndarray:
    return 1.0 + np.arange(ne, dtype=np.float64)


def _energy_axis_of(shape: tuple[int, ...], ne: int) -> int | None:
    """Index of the axis holding ``ne`` entries; axis 0 wins ties."""
    for axis, length in enumerate(shape):
        if length == ne:
            return axis
    return None


def _to_float32(arr: np.ndarray) -> np.ndarray:
    """float32 passes through bit-exactly; other widths are rounded."""
    return np.ascontiguousarray(arr, dtype=np.float32)


def discover(
    h5: h5py.File,
) -> tuple[list[H5Item], list[tuple[str, str]]]:
    """Classify every dataset; returns (items, skipped (path, reason))."""
    datasets: dict[str, h5py.Dataset] = {}

    def visit(name: str, obj) -> None:
        if isinstance(obj, h5py.Dataset):
            datasets[f"/{name}"] = obj

    h5.visititems(visit)

    energy = _find_energy(datasets)
    energy_path = energy[0] if energy else None

    items: list[H5Item] = []
    skipped: list[tuple[str, str]] = []
    for path in sorted(datasets):
        if path == energy_path:
            continue
        ds = datasets[path]
        kind_char = ds.dtype.kind

        if kind_char == "f" and ds.ndim == 4:
            arr = np.asarray(ds[()])
            centers, source = (energy[1], "dataset") if energy else (None, "synthetic")
            if centers is None:
                centers = _attr_energy(ds)
                source = "attribute" if centers is not None else "synthetic"
            axis = _energy_axis_of(arr.shape, len(centers)) if centers is not None else 0
            if axis is None:
                axis, centers, source = 0, _synthetic(arr.shape[0]), "synthetic"
            if centers is None:
                centers = _synthetic(arr.shape[axis])
            arr = np.moveaxis(arr, axis, 0)
            items.append(
                H5Item(path, "volume", _to_float32(arr), centers, source)
            )
        elif kind_char == "f" and ds.ndim == 3:
            arr = np.asarray(ds[()])
            centers, source = (energy[1], "dataset") if energy else (None, "synthetic")
            if centers is None:
                centers = _attr_energy(ds)
                source = "attribute" if centers is not None else "synthetic"
            is_sino = any(n in _basename(path) for n in _SINO_NAMES)
            axis = _energy_axis_of(arr.shape, len(centers)) if centers is not None else None
            if is_sino:
                if axis is None:
                    axis, centers, source = 0, _synthetic(arr.shape[0]), "synthetic"
                arr = np.moveaxis(arr, axis, 0)
                items.append(
                    H5Item(path, "sinogram", _to_float32(arr), centers, source)
                )
            elif axis is not None:
                arr = np.moveaxis(arr, axis, 0)[:, None]  # single slice
                items.append(
                    H5Item(path, "volume", _to_float32(arr), centers, source)
                )
            else:
                items.append(
                    H5Item(path, "volume", _to_float32(arr[None]), _synthetic(1), "synthetic")
                )
        elif kind_char in "iu" and ds.ndim in (2, 3):
            arr = np.asarray(ds[()])
            if arr.ndim == 2:
                arr = arr[None]
            if kind_char == "i" and int(arr.min(initial=0)) < 0:
                skipped.append((path, "integer grid has negative values"))
                continue
            items.append(
                H5Item(path, "labels", arr.astype(np.uint32), None, "none")
            )
        elif ds.ndim == 1 and kind_char == "f":
            skipped.append((path, "unreferenced 1-D float dataset"))
        else:
            skipped.append(
                (path, f"unrecognized layout: {ds.ndim}-D {ds.dtype}")
            )
    return items, skipped
