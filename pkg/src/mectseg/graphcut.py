"""Greedy graph-based region merging over a voxel adjacency graph.

The volume is a weighted graph: voxels are nodes, adjacent voxels share an
edge, and the weight is the mean over energy channels of the absolute
per-channel difference.  Segmentation follows the Felzenszwalb-Huttenlocher
scheme: edges are scanned in ascending weight order and two regions merge
when the connecting weight is no larger than either region's internal
variation plus a size-dependent slack k/|C|.  A final pass absorbs regions
smaller than ``min_size`` into their lowest-weight neighbors.

Neighborhood systems
--------------------
``N7``          face-adjacent voxels (6 neighbors in 3-D, 4 in-plane)
``N27``         all voxels within a Chebyshev distance of 1 (26, or 8 in-plane)
``N27Weighted`` like N27 but the weight is divided by a Gaussian falloff
                g(d) = exp(-(d^2 - 1) / (2 sigma^2)) of the Euclidean offset
                length d in voxel units, so face neighbors are unchanged and
                diagonal links are penalized (their weights grow)
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from .model import LabelVolume, Segmentation, SpectralVolume, canonicalize_labels, volume_digest

__all__ = [
    "Neighborhood",
    "GraphCutParams",
    "EdgeList",
    "build_edges",
    "segment_fh",
    "merge_small",
]


class Neighborhood(str, Enum):
    N7 = "n7"
    N27 = "n27"
    N27W = "n27w"


@dataclass(frozen=True)
class GraphCutParams:
    k: float = 3.0  # merge slack scale; larger -> coarser segments
    min_size: int = 625  # smallest surviving segment, in voxels
    neighborhood: Neighborhood = Neighborhood.N27
    sigma: float = 1.0  # falloff width for N27Weighted

    def __post_init__(self) -> None:
        if not (math.isfinite(self.k) and self.k > 0):
            raise ValueError("k must be a positive finite real")
        if self.min_size < 1:
            raise ValueError("min_size must be >= 1")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("sigma must be a positive finite real")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["neighborhood"] = self.neighborhood.value
        return d


@dataclass
class EdgeList:
    """Adjacency edges as parallel arrays; u < v are flat voxel indices."""

    u: np.ndarray  # int64
    v: np.ndarray  # int64
    w: np.ndarray  # float64

    def __len__(self) -> int:
        return int(self.u.size)


def _half_offsets(nbr: Neighborhood) -> list[tuple[int, int, int]]:
    # One representative per unordered neighbor pair: lexicographically
    # positive (dz, dy, dx) offsets.
    if nbr is Neighborhood.N7:
        return [(0, 0, 1), (0, 1, 0), (1, 0, 0)]
    out = []
    for dz in (0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if (dz, dy, dx) > (0, 0, 0):
                    out.append((dz, dy, dx))
    return out


def _axis_slices(d: int, n: int) -> tuple[slice, slice]:
    if d >= 0:
        return slice(0, n - d), slice(d, n)
    return slice(-d, n), slice(0, n + d)


def build_edges(
    v: SpectralVolume,
    neighborhood: Neighborhood = Neighborhood.N27,
    sigma: float = 1.0,
) -> EdgeList:
    """Edges between all in-bounds neighbor pairs, one per unordered pair.

    Weight is the mean over channels of per-channel absolute differences;
    for ``N27Weighted`` it is divided by the Gaussian falloff g(d).
    """
    ne, nz, ny, nx = v.data.shape
    data = v.data.astype(np.float64)
    flat = np.arange(nx * ny * nz, dtype=np.int64).reshape(nz, ny, nx)
    us: list[np.ndarray] = []
    vs: list[np.ndarray] = []
    ws: list[np.ndarray] = []
    for dz, dy, dx in _half_offsets(neighborhood):
        za, zb = _axis_slices(dz, nz)
        ya, yb = _axis_slices(dy, ny)
        xa, xb = _axis_slices(dx, nx)
        a = (za, ya, xa)
        b = (zb, yb, xb)
        w = np.abs(data[(slice(None),) + a] - data[(slice(None),) + b]).mean(axis=0)
        if neighborhood is Neighborhood.N27W:
            d2 = dx * dx + dy * dy + dz * dz
            w = w * math.exp((d2 - 1) / (2.0 * sigma * sigma))
        us.append(flat[a].ravel())
        vs.append(flat[b].ravel())
        ws.append(w.ravel())
    return EdgeList(
        u=np.concatenate(us), v=np.concatenate(vs), w=np.concatenate(ws)
    )


def _find(parent: list[int], x: int) -> int:
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        parent[x], x = root, parent[x]
    return root


def _sorted_edge_order(edges: EdgeList) -> np.ndarray:
    # Ascending weight; ties broken by the smaller, then larger voxel index.
    return np.lexsort((edges.v, edges.u, edges.w))


def segment_fh(v: SpectralVolume, params: GraphCutParams) -> Segmentation:
    """Segment a volume by greedy ascending-weight region merging.

    Edges are processed in ascending (weight, min index, max index) order.
    Regions C1, C2 joined by an edge of weight w merge when
    ``w <= min(Int(C1) + k/|C1|, Int(C2) + k/|C2|)`` where Int(C) is the
    largest weight in C's minimum spanning tree (the weight that last merged
    into C).  Afterwards any region smaller than ``min_size`` is absorbed
    along its lowest-weight connecting edge.  Every voxel receives a label
    >= 1; labels are canonical (scan-order renumbered).
    """
    nx, ny, nz = v.dims
    n = nx * ny * nz
    edges = build_edges(v, params.neighborhood, params.sigma)
    order = _sorted_edge_order(edges)
    eu = edges.u[order].tolist()
    ev = edges.v[order].tolist()
    ew = edges.w[order].tolist()

    parent = list(range(n))
    size = [1] * n
    reach = [params.k] * n  # Int(C) + k/|C|, the merge threshold per root
    k = params.k
    for u, vv, w in zip(eu, ev, ew):
        ra = _find(parent, u)
        rb = _find(parent, vv)
        if ra == rb or w > reach[ra] or w > reach[rb]:
            continue
        if size[ra] < size[rb]:
            ra, rb = rb, ra
        parent[rb] = ra
        size[ra] += size[rb]
        reach[ra] = w + k / size[ra]

    if params.min_size > 1:
        for u, vv, w in zip(eu, ev, ew):
            ra = _find(parent, u)
            rb = _find(parent, vv)
            if ra != rb and (size[ra] < params.min_size or size[rb] < params.min_size):
                if size[ra] < size[rb]:
                    ra, rb = rb, ra
                parent[rb] = ra
                size[ra] += size[rb]

    roots = np.fromiter(
        (_find(parent, i) for i in range(n)), dtype=np.int64, count=n
    )
    lv = LabelVolume((roots + 1).astype(np.uint32).reshape(nz, ny, nx))
    return Segmentation(
        labels=canonicalize_labels(lv),
        algorithm="graphcut",
        params=params.to_dict(),
        source_digest=volume_digest(v),
    )


def merge_small(lv: LabelVolume, edges: EdgeList, min_size: int) -> LabelVolume:
    """Absorb nonzero segments smaller than ``min_size`` into neighbors.

    Candidate merges are voxel edges whose endpoints carry different nonzero
    labels, taken in ascending weight order with ties broken by the smaller
    (then larger) original label id.  Edges touching background (0) are
    ignored.  The result is canonicalized.
    """
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    flat = lv.labels.ravel().astype(np.int64)
    lu = flat[edges.u]
    lv_ = flat[edges.v]
    cand = (lu != lv_) & (lu != 0) & (lv_ != 0)
    la = np.minimum(lu[cand], lv_[cand])
    lb = np.maximum(lu[cand], lv_[cand])
    w = edges.w[cand]
    order = np.lexsort(
        (edges.v[cand], edges.u[cand], lb, la, w)
    )

    n_ids = int(flat.max()) + 1
    sizes = np.bincount(flat, minlength=n_ids).tolist()
    parent = list(range(n_ids))
    for a, b in zip(la[order].tolist(), lb[order].tolist()):
        ra = _find(parent, a)
        rb = _find(parent, b)
        if ra != rb and (sizes[ra] < min_size or sizes[rb] < min_size):
            parent[rb] = ra
            sizes[ra] += sizes[rb]
    remap = np.fromiter(
        (_find(parent, i) for i in range(n_ids)), dtype=np.int64, count=n_ids
    )
    remap[0] = 0  # background never moves
    return canonicalize_labels(LabelVolume(remap[flat].astype(np.uint32).reshape(lv.labels.shape)))
