"""Synthetic multi-energy CT: phantoms, projection, noise, reconstruction.

Everything here works in physical units: voxel sizes in mm, attenuation in
1/cm, energies in keV.  Materials follow a two-term analytic model
``mu(E) = a * E^-3 + b`` (a photoelectric-like falloff plus a flat
scatter floor), which is enough to give every material its own spectral
curve shape.

Projection geometry (shared by the projector and the reconstructor):
the image is centered on the origin; view angles are uniform over
[0, 180) degrees; each view has ``n_detectors`` parallel rays whose lateral
offsets span the image diagonal.  Ray/pixel intersection lengths are exact
(Siddon-style grid traversal), collected once into a sparse system matrix,
so the forward and adjoint operators are exact transposes of each other.

The sinogram container ``.mss`` (little-endian):
magic ``MSS1`` | u32 n_angles, n_detectors, ne | ne * f32 bin centers (keV)
| ne*n_angles*n_detectors * f32 payload, detector fastest, energy slowest.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .model import EnergyAxis, FormatError, LabelVolume, SpectralVolume, _read_exact

__all__ = [
    "MaterialModel",
    "Ellipsoid",
    "PhantomSpec",
    "Sinogram",
    "generate_phantom",
    "default_phantom",
    "system_matrix",
    "forward_project",
    "backproject",
    "photon_counts",
    "add_poisson_noise",
    "art_tv_reconstruct",
    "total_variation",
    "save_sinogram",
    "load_sinogram",
]

MSS_MAGIC = b"MSS1"
MM_PER_CM = 10.0
KACZMARZ_RELAX = 0.25


@dataclass(frozen=True)
class MaterialModel:
    """mu(E) = a * E^-3 + b, E in keV, mu in 1/cm."""

    name: str
    a: float
    b: float

    def __post_init__(self) -> None:
        if self.a < 0 or self.b < 0 or (self.a == 0 and self.b == 0):
            raise ValueError(f"material {self.name!r} must attenuate (a, b >= 0, not both 0)")

    def mu(self, energies: np.ndarray) -> np.ndarray:
        e = np.asarray(energies, dtype=np.float64)
        return self.a / (e**3) + self.b


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]  # mm, from the volume corner
    radii: tuple[float, float, float]  # mm
    material: int  # index into PhantomSpec.materials
    priority: int = 0  # higher paints over lower

    def __post_init__(self) -> None:
        if min(self.radii) <= 0:
            raise ValueError("ellipsoid radii must be positive")


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int]  # (nx, ny, nz)
    voxel_size: tuple[float, float, float]  # mm
    materials: tuple[MaterialModel, ...]
    shapes: tuple[Ellipsoid, ...]

    def __post_init__(self) -> None:
        if min(self.dims) < 1:
            raise ValueError("phantom dims must be positive")
        if min(self.voxel_size) <= 0:
            raise ValueError("voxel size must be positive")
        for s in self.shapes:
            if not 0 <= s.material < len(self.materials):
                raise ValueError(f"shape references unknown material {s.material}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "dims": list(self.dims),
                "voxel_size": list(self.voxel_size),
                "materials": [
                    {"name": m.name, "a": m.a, "b": m.b} for m in self.materials
                ],
                "shapes": [
                    {
                        "center": list(s.center),
                        "radii": list(s.radii),
                        "material": s.material,
                        "priority": s.priority,
                    }
                    for s in self.shapes
                ],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "PhantomSpec":
        raw = json.loads(text)
        return cls(
            dims=tuple(int(x) for x in raw["dims"]),
            voxel_size=tuple(float(x) for x in raw["voxel_size"]),
            materials=tuple(
                MaterialModel(str(m["name"]), float(m["a"]), float(m["b"]))
                for m in raw["materials"]
            ),
            shapes=tuple(
                Ellipsoid(
                    center=tuple(float(x) for x in s["center"]),
                    radii=tuple(float(x) for x in s["radii"]),
                    material=int(s["material"]),
                    priority=int(s.get("priority", 0)),
                )
                for s in raw["shapes"]
            ),
        )


def generate_phantom(
    spec: PhantomSpec, energy: EnergyAxis
) -> tuple[SpectralVolume, LabelVolume]:
    """Voxelize a phantom: per-channel attenuation plus ground-truth labels.

    Shapes are painted in ascending (priority, definition order), so higher
    priority overwrites lower and later shapes win ties.  Ground-truth label
    of a voxel is 1 + the index of the shape that painted it; air stays 0
    with mu = 0 in every channel.
    """
    nx, ny, nz = spec.dims
    sx, sy, sz = spec.voxel_size
    ne = len(energy)
    cx = (np.arange(nx) + 0.5) * sx
    cy = (np.arange(ny) + 0.5) * sy
    cz = (np.arange(nz) + 0.5) * sz
    zz, yy, xx = np.meshgrid(cz, cy, cx, indexing="ij")

    labels = np.zeros((nz, ny, nx), dtype=np.uint32)
    order = sorted(range(len(spec.shapes)), key=lambda i: (spec.shapes[i].priority, i))
    for i in order:
        s = spec.shapes[i]
        inside = (
            ((xx - s.center[0]) / s.radii[0]) ** 2
            + ((yy - s.center[1]) / s.radii[1]) ** 2
            + ((zz - s.center[2]) / s.radii[2]) ** 2
        ) <= 1.0
        labels[inside] = i + 1

    mus = np.zeros((len(spec.materials) + 1, ne))  # row 0: air
    for m, mat in enumerate(spec.materials):
        mus[m + 1] = mat.mu(energy.centers)
    shape_to_mat = np.zeros(len(spec.shapes) + 1, dtype=np.int64)
    for i, s in enumerate(spec.shapes):
        shape_to_mat[i + 1] = s.material + 1
    data = mus[shape_to_mat[labels]]  # (nz, ny, nx, ne)
    data = np.moveaxis(data, -1, 0).astype(np.float32)
    vol = SpectralVolume(data=data, energy=energy, voxel_size=spec.voxel_size)
    return vol, LabelVolume(labels)


def default_phantom() -> PhantomSpec:
    """A 100x100 four-disk phantom with spectrally distinct materials."""
    materials = (
        MaterialModel("dense", 2.4e4, 0.20),
        MaterialModel("medium", 1.2e4, 0.30),
        MaterialModel("flat", 4.0e3, 0.42),
        MaterialModel("peaked", 3.2e4, 0.05),
    )
    centers = [(28.0, 28.0), (72.0, 28.0), (28.0, 72.0), (72.0, 72.0)]
    shapes = tuple(
        Ellipsoid(center=(cx, cy, 0.5), radii=(16.0, 16.0, 1.0), material=i)
        for i, (cx, cy) in enumerate(centers)
    )
    return PhantomSpec(
        dims=(100, 100, 1),
        voxel_size=(1.0, 1.0, 1.0),
        materials=materials,
        shapes=shapes,
    )


# ---------------------------------------------------------------------------
# projection


@dataclass
class Sinogram:
    """Line-integral data, shape (ne, n_angles, n_detectors), float32.

    View angles are implicit: uniform over [0, 180) degrees in view order.
    """

    data: np.ndarray
    energy: EnergyAxis

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError("sinogram data must have shape (ne, n_angles, n_detectors)")
        if self.data.shape[0] != len(self.energy):
            raise ValueError("sinogram channel count does not match the energy axis")
        if min(self.data.shape) < 1:
            raise ValueError("sinogram dimensions must all be positive")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("sinogram contains non-finite values")

    @property
    def n_angles(self) -> int:
        return self.data.shape[1]

    @property
    def n_detectors(self) -> int:
        return self.data.shape[2]


def _ray_geometry(
    nx: int, ny: int, sx: float, sy: float, n_angles: int, n_detectors: int
):
    w = nx * sx
    h = ny * sy
    span = math.hypot(w, h)
    theta = np.arange(n_angles) * math.pi / n_angles
    t = (np.arange(n_detectors) + 0.5) * span / n_detectors - span / 2.0
    # angle-major ray order: ray r = view * n_detectors + detector
    ox = np.repeat(np.cos(theta), n_detectors) * np.tile(t, n_angles)
    oy = np.repeat(np.sin(theta), n_detectors) * np.tile(t, n_angles)
    dx = np.repeat(-np.sin(theta), n_detectors)
    dy = np.repeat(np.cos(theta), n_detectors)
    return ox, oy, dx, dy, w, h


def system_matrix(
    nx: int,
    ny: int,
    n_angles: int,
    n_detectors: int,
    voxel_size: tuple[float, float] = (1.0, 1.0),
) -> sparse.csr_matrix:
    """Exact ray/pixel intersection lengths (in cm) as a sparse matrix.

    Rows are rays in angle-major order; columns are pixels in x-fastest
    order.  Multiplying a flat image of attenuation values (1/cm) gives
    dimensionless line integrals.
    """
    if min(nx, ny, n_angles, n_detectors) < 1:
        raise ValueError("geometry dimensions must be positive")
    sx, sy = float(voxel_size[0]), float(voxel_size[1])
    ox, oy, dx, dy, w, h = _ray_geometry(nx, ny, sx, sy, n_angles, n_detectors)
    n_rays = ox.size

    xs = -w / 2.0 + np.arange(nx + 1) * sx  # vertical grid lines
    ys = -h / 2.0 + np.arange(ny + 1) * sy

    def slab(orig, direc, lo, hi):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - orig) / direc
            t2 = (hi - orig) / direc
        para = direc == 0
        inside = (orig >= lo) & (orig <= hi)
        smin = np.where(para, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        smax = np.where(para, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        return smin, smax

    sx_lo, sx_hi = slab(ox, dx, xs[0], xs[-1])
    sy_lo, sy_hi = slab(oy, dy, ys[0], ys[-1])
    s_in = np.maximum(sx_lo, sy_lo)
    s_out = np.minimum(sx_hi, sy_hi)
    hit = s_out > s_in
    s_in = np.where(hit, s_in, 0.0)
    s_out = np.where(hit, s_out, 0.0)

    with np.errstate(divide="ignore", invalid="ignore"):
        bx = (xs[None, :] - ox[:, None]) / dx[:, None]
        by = (ys[None, :] - oy[:, None]) / dy[:, None]
    breaks = np.concatenate(
        [bx, by, s_in[:, None], s_out[:, None]], axis=1
    )
    breaks = np.where(np.isfinite(breaks), breaks, s_in[:, None])
    breaks = np.clip(breaks, s_in[:, None], s_out[:, None])
    breaks.sort(axis=1)

    seg = np.diff(breaks, axis=1)  # mm, unit direction vectors
    mid = (breaks[:, :-1] + breaks[:, 1:]) / 2.0
    px = ox[:, None] + mid * dx[:, None]
    py = oy[:, None] + mid * dy[:, None]
    ix = np.floor((px - xs[0]) / sx).astype(np.int64)
    iy = np.floor((py - ys[0]) / sy).astype(np.int64)
    valid = (
        (seg > 1e-12)
        & hit[:, None]
        & (ix >= 0)
        & (ix < nx)
        & (iy >= 0)
        & (iy < ny)
    )
    rows = np.broadcast_to(np.arange(n_rays)[:, None], seg.shape)[valid]
    cols = (iy * nx + ix)[valid]
    vals = seg[valid] / MM_PER_CM
    mat = sparse.coo_matrix(
        (vals, (rows, cols)), shape=(n_rays, nx * ny)
    ).tocsr()
    mat.sum_duplicates()
    return mat


def forward_project(
    v: SpectralVolume, n_angles: int, n_detectors: int
) -> Sinogram:
    """Line integrals of a single-slice volume over all views and channels."""
    nx, ny, nz = v.dims
    if nz != 1:
        raise ValueError("forward_project expects a single-slice volume (nz == 1)")
    mat = system_matrix(nx, ny, n_angles, n_detectors, v.voxel_size[:2])
    img = v.data[:, 0].reshape(v.n_channels, -1).T.astype(np.float64)  # (npix, ne)
    sino = (mat @ img).T.reshape(v.n_channels, n_angles, n_detectors)
    return Sinogram(data=sino.astype(np.float32), energy=v.energy)


def backproject(
    s: Sinogram,
    out_dims: tuple[int, int],
    voxel_size: tuple[float, float] = (1.0, 1.0),
) -> SpectralVolume:
    """Adjoint of :func:`forward_project` on the same geometry."""
    nx, ny = out_dims
    mat = system_matrix(nx, ny, s.n_angles, s.n_detectors, voxel_size)
    rays = s.data.reshape(s.data.shape[0], -1).T.astype(np.float64)
    img = (mat.T @ rays).T.reshape(s.data.shape[0], 1, ny, nx)
    return SpectralVolume(
        data=img.astype(np.float32),
        energy=s.energy,
        voxel_size=(voxel_size[0], voxel_size[1], 1.0),
    )


# ---------------------------------------------------------------------------
# noise


def photon_counts(s: Sinogram, n0: float) -> np.ndarray:
    """Expected detector counts for a source flux of n0 photons per ray."""
    if n0 <= 0:
        raise ValueError("n0 must be positive")
    return n0 * np.exp(-s.data.astype(np.float64))


def add_poisson_noise(s: Sinogram, n0: float, seed: int) -> Sinogram:
    """Poisson count noise at source flux n0, mapped back to line integrals.

    Counts of zero are clamped to one before the log.  The same seed gives
    bit-identical output.
    """
    rng = np.random.default_rng(seed)
    counts = rng.poisson(photon_counts(s, n0)).astype(np.float64)
    noisy = -np.log(np.maximum(counts, 1.0) / n0)
    return Sinogram(data=noisy.astype(np.float32), energy=s.energy)


# ---------------------------------------------------------------------------
# reconstruction


def _tv_gradient(u: np.ndarray, eps2: float = 1e-8) -> np.ndarray:
    """Gradient of the (smoothed) isotropic total variation of a 2-D image."""
    ux = np.zeros_like(u)
    uy = np.zeros_like(u)
    ux[:, :-1] = u[:, 1:] - u[:, :-1]
    uy[:-1, :] = u[1:, :] - u[:-1, :]
    mag = np.sqrt(ux * ux + uy * uy + eps2)
    px = ux / mag
    py = uy / mag
    div = px.copy()
    div[:, 1:] -= px[:, :-1]
    div += py
    div[1:, :] -= py[:-1, :]
    return -div


def total_variation(u: np.ndarray, eps2: float = 1e-8) -> float:
    ux = np.zeros_like(u)
    uy = np.zeros_like(u)
    ux[:, :-1] = u[:, 1:] - u[:, :-1]
    uy[:-1, :] = u[1:, :] - u[:-1, :]
    return float(np.sqrt(ux * ux + uy * uy + eps2).sum())


def _kaczmarz_sweep(
    mat: sparse.csr_matrix,
    row_norm2: np.ndarray,
    b: np.ndarray,
    x: np.ndarray,
) -> None:
    """One relaxed row-action pass over all rays, in row (angle-major) order.

    ``x`` is (n_pixels, ne) and updated in place; all channels share the ray
    geometry, so one pass updates every channel at once.
    """
    indptr, indices, data = mat.indptr, mat.indices, mat.data
    lam = KACZMARZ_RELAX
    for r in range(mat.shape[0]):
        lo, hi = indptr[r], indptr[r + 1]
        if lo == hi:
            continue
        cols = indices[lo:hi]
        a = data[lo:hi]
        resid = b[r] - a @ x[cols]
        x[cols] += np.outer(a, (lam / row_norm2[r]) * resid)


def art_tv_reconstruct(
    s: Sinogram,
    out_dims: tuple[int, int],
    iters: int = 20,
    tv_weight: float = 1e-3,
    tv_steps: int = 5,
    voxel_size: tuple[float, float] = (1.0, 1.0),
) -> SpectralVolume:
    """Iterative reconstruction: row-action sweeps alternated with TV descent.

    Per energy channel (channels never mix): each outer iteration runs one
    relaxed Kaczmarz sweep over all rays (relaxation 0.25, angle-major
    order), clamps the image to be non-negative, then takes ``tv_steps``
    gradient-descent steps of size ``tv_weight`` on the smoothed isotropic
    total variation.  Deterministic: no randomness anywhere.
    """
    nx, ny = out_dims
    if nx < 1 or ny < 1:
        raise ValueError("output dimensions must be positive")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if tv_steps < 0 or tv_weight < 0:
        raise ValueError("tv_steps and tv_weight must be non-negative")
    mat = system_matrix(nx, ny, s.n_angles, s.n_detectors, voxel_size)
    row_norm2 = np.asarray(mat.multiply(mat).sum(axis=1)).ravel()
    row_norm2[row_norm2 == 0] = 1.0  # rays missing the grid: no-op rows
    ne = s.data.shape[0]
    b = s.data.reshape(ne, -1).T.astype(np.float64)  # (n_rays, ne)
    x = np.zeros((nx * ny, ne), dtype=np.float64)
    for _ in range(iters):
        _kaczmarz_sweep(mat, row_norm2, b, x)
        np.maximum(x, 0.0, out=x)
        if tv_weight > 0:
            for ch in range(ne):
                img = x[:, ch].reshape(ny, nx)
                for _ in range(tv_steps):
                    img -= tv_weight * _tv_gradient(img)
                x[:, ch] = img.ravel()
    vol = x.T.reshape(ne, 1, ny, nx)
    return SpectralVolume(
        data=vol.astype(np.float32),
        energy=s.energy,
        voxel_size=(voxel_size[0], voxel_size[1], 1.0),
    )


# ---------------------------------------------------------------------------
# sinogram container


def save_sinogram(path, s: Sinogram) -> None:
    ne, n_angles, n_det = s.data.shape
    with open(path, "wb") as fh:
        fh.write(MSS_MAGIC + struct.pack("<3I", n_angles, n_det, ne))
        fh.write(s.energy.centers.astype("<f4").tobytes())
        fh.write(s.data.astype("<f4").tobytes())


def load_sinogram(path) -> Sinogram:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MSS_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MSS_MAGIC!r}")
        n_angles, n_det, ne = struct.unpack("<3I", _read_exact(fh, 12, "dims"))
        if min(n_angles, n_det, ne) < 1:
            raise FormatError("sinogram dimensions must all be positive")
        centers = np.frombuffer(
            _read_exact(fh, 4 * ne, "energy axis"), dtype="<f4"
        ).astype(np.float64)
        count = ne * n_angles * n_det
        payload = np.frombuffer(_read_exact(fh, 4 * count, "payload"), dtype="<f4")
        if fh.read(1):
            raise FormatError("trailing bytes after payload")
    return Sinogram(
        data=payload.reshape(ne, n_angles, n_det).copy(),
        energy=EnergyAxis(centers),
    )
