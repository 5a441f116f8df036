"""Energy-axis preprocessing: clipping, rebinning, and spectral gradients.

Detector noise concentrates in the outer energy channels and the useful
signal variance in a fairly narrow band, so the usual pipeline is: clip the
axis to the informative range, then compress the remaining channels either
uniformly or adaptively (variance-balanced groups of neighboring channels).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import EnergyAxis, SpectralVolume

__all__ = [
    "BinningPlan",
    "channel_variance",
    "clip_spectrum",
    "uniform_rebin",
    "adaptive_rebin",
    "spectral_gradient",
]


@dataclass(frozen=True)
class BinningPlan:
    """Record of an adaptive rebin: what was grouped and why."""

    budget: float  # variance budget per output group
    groups: tuple[tuple[int, int], ...]  # inclusive (lo, hi) input-channel ranges
    variances: tuple[float, ...]  # per input channel, population variance
    n_requested: int  # requested output channel count

    def to_json(self) -> str:
        return json.dumps(
            {
                "budget": self.budget,
                "groups": [list(g) for g in self.groups],
                "variances": list(self.variances),
                "n_requested": self.n_requested,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "BinningPlan":
        raw = json.loads(text)
        return cls(
            budget=float(raw["budget"]),
            groups=tuple((int(lo), int(hi)) for lo, hi in raw["groups"]),
            variances=tuple(float(x) for x in raw["variances"]),
            n_requested=int(raw["n_requested"]),
        )


def channel_variance(v: SpectralVolume) -> np.ndarray:
    """Population variance of each channel over all voxels, float64."""
    flat = v.data.reshape(v.n_channels, -1).astype(np.float64)
    return flat.var(axis=1)


def clip_spectrum(v: SpectralVolume, lo_kev: float, hi_kev: float) -> SpectralVolume:
    """Keep channels whose bin centers lie in the closed interval [lo, hi]."""
    if not lo_kev <= hi_kev:
        raise ValueError("clip range is empty (lo > hi)")
    keep = np.flatnonzero(
        (v.energy.centers >= lo_kev) & (v.energy.centers <= hi_kev)
    )
    if keep.size == 0:
        raise ValueError(
            f"no bin centers inside [{lo_kev}, {hi_kev}] keV"
        )
    return SpectralVolume(
        data=v.data[keep],
        energy=EnergyAxis(v.energy.centers[keep]),
        voxel_size=v.voxel_size,
    )


def _grouped_means(v: SpectralVolume, groups: list[tuple[int, int]]) -> SpectralVolume:
    """Average contiguous channel groups; bin center = mean of member centers."""
    out = np.empty((len(groups),) + v.data.shape[1:], dtype=np.float32)
    centers = np.empty(len(groups), dtype=np.float64)
    for i, (lo, hi) in enumerate(groups):
        out[i] = v.data[lo : hi + 1].mean(axis=0, dtype=np.float64)
        centers[i] = v.energy.centers[lo : hi + 1].mean()
    return SpectralVolume(data=out, energy=EnergyAxis(centers), voxel_size=v.voxel_size)


def uniform_rebin(v: SpectralVolume, n_out: int) -> SpectralVolume:
    """Average contiguous channel groups of near-equal size.

    Group sizes differ by at most one; the remainder goes to the earliest
    groups.
    """
    ne = v.n_channels
    if not 1 <= n_out <= ne:
        raise ValueError(f"n_out must be in [1, {ne}], got {n_out}")
    base, extra = divmod(ne, n_out)
    groups: list[tuple[int, int]] = []
    lo = 0
    for i in range(n_out):
        size = base + (1 if i < extra else 0)
        groups.append((lo, lo + size - 1))
        lo += size
    return _grouped_means(v, groups)


def adaptive_rebin(v: SpectralVolume, n_out: int) -> tuple[SpectralVolume, BinningPlan]:
    """Group neighboring channels so each group carries a similar variance load.

    The budget is total channel variance divided by ``n_out``.  Channels are
    scanned left to right and accumulated while the group's variance sum stays
    within budget; a channel that would overflow starts a new group, so a
    single high-variance channel may exceed the budget on its own.  The
    achieved group count can differ from ``n_out``; the returned plan records
    the outcome.
    """
    if n_out < 1:
        raise ValueError(f"n_out must be positive, got {n_out}")
    var = channel_variance(v)
    budget = float(var.sum() / n_out)
    groups: list[tuple[int, int]] = []
    start = 0
    acc = 0.0
    for e in range(v.n_channels):
        if e > start and acc + var[e] > budget:
            groups.append((start, e - 1))
            start = e
            acc = 0.0
        acc += var[e]
    groups.append((start, v.n_channels - 1))
    plan = BinningPlan(
        budget=budget,
        groups=tuple(groups),
        variances=tuple(float(x) for x in var),
        n_requested=n_out,
    )
    return _grouped_means(v, groups), plan


def spectral_gradient(v: SpectralVolume) -> SpectralVolume:
    """Finite-difference slope of each voxel's spectrum along energy.

    Output channel e holds (f[e+1] - f[e]) / (center[e+1] - center[e]) and
    sits at the midpoint of the two parent centers, so a volume with ne
    channels yields ne - 1 gradient channels.
    """
    if v.n_channels < 2:
        raise ValueError("spectral gradient needs at least two channels")
    c = v.energy.centers
    dc = np.diff(c)  # > 0 by the axis invariant
    grad = np.diff(v.data.astype(np.float64), axis=0) / dc[:, None, None, None]
    return SpectralVolume(
        data=grad.astype(np.float32),
        energy=EnergyAxis((c[:-1] + c[1:]) / 2.0),
        voxel_size=v.voxel_size,
    )
