"""Adaptive mean-shift clustering of voxel spectra, with LSH acceleration.

Feature vectors (per-voxel spectral signatures, or their energy gradients)
are quantized per dimension to an integer grid, every point gets a pilot
bandwidth from its k-th nearest neighbor, and mode seeking runs the
sample-point mean-shift iteration with a uniform (Epanechnikov-profile)
kernel: a point x_j participates in the update at y when it lies inside its
own bandwidth ball, weighted by 1/h_j^(d+2).  Neighbor lookups are either
exact or approximated with hash partitions of random axis-parallel cuts.
All randomness is owned by a seeded generator; the same seed reproduces the
same cuts bit for bit.

Metrics, all in quantized space: pilot bandwidths, convergence shifts, and
mode merging use L1 distance; the kernel ball itself is Euclidean, which is
what makes each weighted-mean update a guaranteed ascent step on the
matching kernel density estimate (see :func:`density`).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .binning import spectral_gradient
from .model import LabelVolume, Segmentation, SpectralVolume, canonicalize_labels, volume_digest

__all__ = [
    "FamsParams",
    "QuantizedPoints",
    "ModeSet",
    "LshIndex",
    "quantize",
    "pilot_bandwidths",
    "build_lsh",
    "shift_step",
    "density",
    "trajectory",
    "mean_shift",
    "segment_fams",
]

EXACT_PILOT_LIMIT = 10_000  # brute-force k-NN up to here, LSH candidates above
_CHUNK = 256  # seed rows per distance block in the batched iteration


@dataclass(frozen=True)
class FamsParams:
    k_neigh: int = 100  # pilot bandwidth = L1 distance to this nearest neighbor
    lsh_cuts: int = 24  # axis-parallel cuts per hash partition
    lsh_partitions: int = 35  # number of hash partitions
    quant_bits: int = 16
    max_iters: int = 100
    epsilon: float = 1e-3  # convergence shift threshold, quantized units
    mode_merge_radius: float | None = None  # default: 1% of range per dimension
    use_lsh: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k_neigh < 1:
            raise ValueError("k_neigh must be >= 1")
        if self.lsh_cuts < 1 or self.lsh_cuts > 62:
            raise ValueError("lsh_cuts must be in [1, 62]")
        if self.lsh_partitions < 1:
            raise ValueError("lsh_partitions must be >= 1")
        if not 8 <= self.quant_bits <= 24:
            raise ValueError("quant_bits must be in [8, 24]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError("epsilon must be a positive real")
        if self.mode_merge_radius is not None and not self.mode_merge_radius > 0:
            raise ValueError("mode_merge_radius must be positive")

    def merge_radius(self, n_dims: int) -> float:
        if self.mode_merge_radius is not None:
            return float(self.mode_merge_radius)
        return 0.01 * (2**self.quant_bits - 1) * n_dims

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class QuantizedPoints:
    """Integer-grid feature points plus the affine map back to value space."""

    q: np.ndarray  # int64, shape (n, d)
    lo: np.ndarray  # float64, (d,): per-dimension minimum of the inputs
    step: np.ndarray  # float64, (d,): value-space size of one quantized unit
    bits: int

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def d(self) -> int:
        return self.q.shape[1]

    def dequantize(self, q: np.ndarray) -> np.ndarray:
        return self.lo + np.asarray(q, dtype=np.float64) * self.step


@dataclass
class ModeSet:
    modes: np.ndarray  # float64, (m, d), value space
    modes_q: np.ndarray  # float64, (m, d), quantized space
    assignment: np.ndarray  # int32, (n,): mode index per input point


def quantize(points: np.ndarray, bits: int = 16) -> QuantizedPoints:
    """Map each dimension affinely onto the integer range [0, 2^bits - 1].

    Constant dimensions map to 0.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError("points must be a non-empty (n, d) array")
    if not np.all(np.isfinite(x)):
        raise ValueError("points contain non-finite values")
    if not 8 <= bits <= 24:
        raise ValueError("bits must be in [8, 24]")
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    top = float(2**bits - 1)
    span = hi - lo
    scale = np.where(span > 0, top / np.where(span > 0, span, 1.0), 0.0)
    q = np.rint((x - lo) * scale).astype(np.int64)
    step = np.where(span > 0, span / top, 0.0)
    return QuantizedPoints(q=q, lo=lo, step=step, bits=bits)


# ---------------------------------------------------------------------------
# LSH index


@dataclass
class LshIndex:
    dims: np.ndarray  # int64, (L, K): cut dimension per partition
    cuts: np.ndarray  # float64, (L, K): cut position per partition
    buckets: list[dict[int, np.ndarray]]
    point_keys: np.ndarray  # int64, (n, L)

    def keys_for(self, y: np.ndarray) -> np.ndarray:
        """Bucket key of a query position for each partition."""
        bits = (y[self.dims] > self.cuts).astype(np.int64)  # (L, K)
        return bits @ (1 << np.arange(self.dims.shape[1], dtype=np.int64))

    def candidates(self, y: np.ndarray) -> np.ndarray:
        """Union of the query's buckets over all partitions, sorted ids."""
        keys = self.keys_for(y)
        hits = [
            self.buckets[t].get(int(k))
            for t, k in enumerate(keys)
        ]
        hits = [h for h in hits if h is not None]
        if not hits:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(hits))


def build_lsh(qp: QuantizedPoints, n_cuts: int, n_partitions: int, seed: int) -> LshIndex:
    """Hash all points with L partitions of K random axis-parallel cuts.

    Cut dimensions and positions come from a seeded generator and depend only
    on (d, bits, seed), never on the data order.
    """
    rng = np.random.default_rng(seed)
    top = float(2**qp.bits - 1)
    dims = rng.integers(0, qp.d, size=(n_partitions, n_cuts))
    cuts = rng.uniform(0.0, top, size=(n_partitions, n_cuts))
    weights = 1 << np.arange(n_cuts, dtype=np.int64)
    buckets: list[dict[int, np.ndarray]] = []
    point_keys = np.empty((qp.n, n_partitions), dtype=np.int64)
    for t in range(n_partitions):
        bits = (qp.q[:, dims[t]] > cuts[t]).astype(np.int64)  # (n, K)
        keys = bits @ weights
        point_keys[:, t] = keys
        order = np.argsort(keys, kind="stable")
        sorted_keys = keys[order]
        starts = np.flatnonzero(np.r_[True, sorted_keys[1:] != sorted_keys[:-1]])
        table: dict[int, np.ndarray] = {}
        for s, e in zip(starts, np.r_[starts[1:], sorted_keys.size]):
            table[int(sorted_keys[s])] = np.sort(order[s:e])
        buckets.append(table)
    return LshIndex(dims=dims, cuts=cuts, buckets=buckets, point_keys=point_keys)


def _self_candidates(index: LshIndex, i: int) -> np.ndarray:
    hits = [
        index.buckets[t][int(index.point_keys[i, t])]
        for t in range(index.point_keys.shape[1])
    ]
    return np.unique(np.concatenate(hits))


# ---------------------------------------------------------------------------
# pilot bandwidths


def _chunked_kth_distance(x: np.ndarray, k: int) -> np.ndarray:
    """Exact L1 distance to the k-th nearest other point, per point."""
    n, d = x.shape
    out = np.empty(n, dtype=np.float64)
    step = max(1, int(2**22 // max(n, 1)))
    for s in range(0, n, step):
        e = min(n, s + step)
        block = np.zeros((e - s, n), dtype=np.float64)
        for dim in range(d):
            block += np.abs(x[s:e, dim, None] - x[None, :, dim])
        block[np.arange(e - s), np.arange(s, e)] = np.inf  # exclude self
        out[s:e] = np.partition(block, k - 1, axis=1)[:, k - 1]
    return out


def pilot_bandwidths(
    qp: QuantizedPoints,
    k_neigh: int,
    index: LshIndex | None = None,
) -> np.ndarray:
    """Per-point bandwidth: L1 distance to the k_neigh-th nearest neighbor.

    Exact for n <= 10^4; above that, neighbors are drawn from the point's
    LSH buckets (falling back to a full scan when a bucket union is too
    small).  Bandwidths are clamped to >= 1 quantized unit.
    """
    n = qp.n
    if not 1 <= k_neigh < n:
        raise ValueError(f"k_neigh must be in [1, {n - 1}]")
    x = qp.q.astype(np.float64)
    if n <= EXACT_PILOT_LIMIT or index is None:
        h = _chunked_kth_distance(x, k_neigh)
    else:
        h = np.empty(n, dtype=np.float64)
        for i in range(n):
            cand = _self_candidates(index, i)
            cand = cand[cand != i]
            if cand.size < k_neigh:
                dist = np.abs(x - x[i]).sum(axis=1)
                dist[i] = np.inf
            else:
                dist = np.abs(x[cand] - x[i]).sum(axis=1)
            h[i] = np.partition(dist, k_neigh - 1)[k_neigh - 1]
    return np.maximum(h, 1.0)


# ---------------------------------------------------------------------------
# mean shift


def _log_weights(h: np.ndarray, d: int) -> np.ndarray:
    # Sample-point weights 1/h^(d+2), kept in log space; they are normalized
    # within each window before use, so only ratios matter.
    return -(d + 2) * np.log(h)


def shift_step(qp: QuantizedPoints, h: np.ndarray, y: np.ndarray) -> np.ndarray:
    """One exact mean-shift update of position y, in quantized space."""
    x = qp.q.astype(np.float64)
    dist2 = ((x - y) ** 2).sum(axis=1)
    inside = dist2 <= h * h
    if not inside.any():
        return y.copy()
    lw = _log_weights(h[inside], qp.d)
    w = np.exp(lw - lw.max())
    return (w @ x[inside]) / w.sum()


def density(qp: QuantizedPoints, h: np.ndarray, y: np.ndarray) -> float:
    """Kernel density (up to a constant) whose ascent the update follows.

    Epanechnikov kernel with per-point bandwidths:
    sum_j h_j^-(d+2) * max(0, h_j^2 - ||y - x_j||^2).  Every weighted-mean
    update from y is a non-decreasing move on this function.
    """
    x = qp.q.astype(np.float64)
    dist2 = ((x - y) ** 2).sum(axis=1)
    hmin = h.min()
    # factor out hmin^-(d+2) so the sum stays finite for large d
    rel = np.exp(-(qp.d + 2) * (np.log(h) - np.log(hmin)))
    return float((rel * np.maximum(0.0, h * h - dist2)).sum())


def trajectory(
    qp: QuantizedPoints, h: np.ndarray, start: int, params: FamsParams
) -> np.ndarray:
    """Exact iterate sequence from one seed point, including the start."""
    y = qp.q[start].astype(np.float64)
    out = [y.copy()]
    for _ in range(params.max_iters):
        y_new = shift_step(qp, h, y)
        if np.abs(y_new - y).sum() < params.epsilon:
            break
        y = y_new
        out.append(y.copy())
    return np.asarray(out)


def _iterate_exact(
    x: np.ndarray, h: np.ndarray, logw: np.ndarray, params: FamsParams
) -> np.ndarray:
    """Run every seed to convergence against the full point set, batched."""
    n, d = x.shape
    y = x.copy()
    active = np.ones(n, dtype=bool)
    for _ in range(params.max_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        for s in range(0, idx.size, _CHUNK):
            rows = idx[s : s + _CHUNK]
            dist2 = np.zeros((rows.size, n), dtype=np.float64)
            for dim in range(d):
                dist2 += (y[rows, dim, None] - x[None, :, dim]) ** 2
            inside = dist2 <= (h * h)[None, :]
            lw = np.where(inside, logw[None, :], -np.inf)
            top = lw.max(axis=1)
            stuck = ~np.isfinite(top)  # empty window: stay put
            w = np.exp(lw - np.where(stuck, 0.0, top)[:, None])
            denom = w.sum(axis=1)
            denom[stuck] = 1.0
            y_new = (w @ x) / denom[:, None]
            y_new[stuck] = y[rows][stuck]
            shift = np.abs(y_new - y[rows]).sum(axis=1)
            done = shift < params.epsilon
            move = ~done
            y[rows[move]] = y_new[move]
            active[rows[done]] = False
    return y


def _iterate_lsh(
    x: np.ndarray,
    h: np.ndarray,
    logw: np.ndarray,
    params: FamsParams,
    index: LshIndex,
) -> np.ndarray:
    n, d = x.shape
    y = x.copy()
    # trajectories that hash identically share one candidate lookup
    cand_cache: dict[tuple, np.ndarray] = {}
    for i in range(n):
        yi = x[i].copy()
        for _ in range(params.max_iters):
            keys = index.keys_for(yi)
            key = tuple(keys.tolist())
            cand = cand_cache.get(key)
            if cand is None:
                hits = [
                    b for t in range(keys.shape[0])
                    if (b := index.buckets[t].get(int(keys[t]))) is not None
                ]
                cand = (
                    np.unique(np.concatenate(hits))
                    if hits
                    else np.empty(0, dtype=np.int64)
                )
                cand_cache[key] = cand
            if cand.size == 0:
                break
            xc = x[cand]
            dist2 = ((xc - yi) ** 2).sum(axis=1)
            inside = dist2 <= h[cand] ** 2
            if not inside.any():
                break
            lw = logw[cand][inside]
            w = np.exp(lw - lw.max())
            y_new = (w @ xc[inside]) / w.sum()
            if np.abs(y_new - yi).sum() < params.epsilon:
                break
            yi = y_new
        y[i] = yi
    return y


def _merge_endpoints(endpoints: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Greedy first-come mode merging; returns (modes_q, assignment)."""
    modes: list[np.ndarray] = []
    assign = np.empty(endpoints.shape[0], dtype=np.int32)
    for i, e in enumerate(endpoints):
        if modes:
            dist = np.abs(np.asarray(modes) - e).sum(axis=1)
            j = int(np.argmin(dist))
            if dist[j] < radius:
                assign[i] = j
                continue
        modes.append(e.copy())
        assign[i] = len(modes) - 1
    return np.asarray(modes), assign


def mean_shift(
    qp: QuantizedPoints,
    h: np.ndarray,
    params: FamsParams,
    index: LshIndex | None = None,
) -> ModeSet:
    """Seek a mode from every point; merge nearby endpoints into modes.

    When an ``index`` is given (and ``params.use_lsh``), window candidates
    come from the point's hash buckets; otherwise every update is exact.
    Endpoints closer than the merge radius (L1, quantized units) collapse to
    the first-seen mode, so surviving modes are pairwise at least that far
    apart.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (qp.n,):
        raise ValueError("h must have one bandwidth per point")
    if not np.all(h >= 1.0):
        raise ValueError("bandwidths must be clamped to >= 1")
    x = qp.q.astype(np.float64)
    logw = _log_weights(h, qp.d)
    if index is not None and params.use_lsh:
        endpoints = _iterate_lsh(x, h, logw, params, index)
    else:
        endpoints = _iterate_exact(x, h, logw, params)
    modes_q, assign = _merge_endpoints(endpoints, params.merge_radius(qp.d))
    return ModeSet(
        modes=qp.dequantize(modes_q), modes_q=modes_q, assignment=assign
    )


# ---------------------------------------------------------------------------
# volume segmentation


def _spatial_split(assignment: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    """Split each mode's voxel set into face-connected components."""
    vol = assignment.reshape(shape)
    out = np.zeros(shape, dtype=np.uint32)
    structure = ndimage.generate_binary_structure(3, 1)
    next_label = 0
    for mode in np.unique(vol):
        comp, n_comp = ndimage.label(vol == mode, structure=structure)
        mask = comp > 0
        out[mask] = comp[mask].astype(np.uint32) + next_label
        next_label += int(n_comp)
    return out


def segment_fams(
    v: SpectralVolume, params: FamsParams, use_gradient: bool = True
) -> Segmentation:
    """Cluster voxel spectra by adaptive mean shift, then split spatially.

    Features are per-voxel spectral signatures, or (default) their energy
    gradients, which emphasize curve shape over magnitude.  Voxels assigned
    to the same mode are split into face-connected (N7) spatial components;
    every voxel receives a label >= 1 and labels are canonical.  On volumes
    with fewer than ``k_neigh + 1`` voxels the neighbor count is clamped.
    """
    if use_gradient and v.n_channels < 2:
        raise ValueError("gradient features need at least two channels")
    feats = spectral_gradient(v).signatures() if use_gradient else v.signatures()
    qp = quantize(feats, params.quant_bits)
    index = None
    if params.use_lsh or qp.n > EXACT_PILOT_LIMIT:
        index = build_lsh(qp, params.lsh_cuts, params.lsh_partitions, params.seed)
    h = pilot_bandwidths(qp, min(params.k_neigh, qp.n - 1), index)
    modes = mean_shift(qp, h, params, index if params.use_lsh else None)
    nx, ny, nz = v.dims
    labels = _spatial_split(modes.assignment, (nz, ny, nx))
    lv = canonicalize_labels(LabelVolume(labels))
    rec = params.to_dict()
    rec["use_gradient"] = use_gradient
    return Segmentation(
        labels=lv,
        algorithm="fams",
        params=rec,
        source_digest=volume_digest(v),
    )
