"""Graph construction and greedy region merging."""
from __future__ import annotations

import math

import numpy as np
import pytest

from mectseg.graphcut import (
    EdgeList,
    GraphCutParams,
    Neighborhood,
    build_edges,
    merge_small,
    segment_fh,
)
from mectseg.model import EnergyAxis, LabelVolume, SpectralVolume


def _vol(data: np.ndarray) -> SpectralVolume:
    arr = np.asarray(data, dtype=np.float32)
    centers = 40.0 + 10.0 * np.arange(arr.shape[0])
    return SpectralVolume(data=arr, energy=EnergyAxis(centers))


def _row(values, channels=1) -> SpectralVolume:
    """nx-long single-row volume with the same values in every channel."""
    vals = np.asarray(values, dtype=np.float32)
    return _vol(np.tile(vals.reshape(1, 1, 1, -1), (channels, 1, 1, 1)))


# ---------------------------------------------------------------------------
# edges


def test_single_edge_weight() -> None:
    edges = build_edges(_row([1.0, 4.0]), Neighborhood.N7)
    assert len(edges) == 1
    assert edges.u.tolist() == [0]
    assert edges.v.tolist() == [1]
    assert edges.w.tolist() == [3.0]


def test_weight_is_mean_of_channel_diffs() -> None:
    data = np.zeros((3, 1, 1, 2), dtype=np.float32)
    data[:, 0, 0, 1] = [1.0, 2.0, 3.0]
    edges = build_edges(_vol(data), Neighborhood.N7)
    assert edges.w.tolist() == [2.0]


def test_edge_counts_2x2() -> None:
    rng = np.random.default_rng(0)
    v = _vol(rng.uniform(size=(1, 1, 2, 2)))
    assert len(build_edges(v, Neighborhood.N7)) == 4
    assert len(build_edges(v, Neighborhood.N27)) == 6  # 4 face + 2 diagonal


def test_edges_unique_and_directed_upward() -> None:
    rng = np.random.default_rng(1)
    v = _vol(rng.uniform(size=(2, 2, 3, 3)))
    for nbr in Neighborhood:
        edges = build_edges(v, nbr)
        assert (edges.u < edges.v).all()  # no self-edges, one per pair
        pairs = set(zip(edges.u.tolist(), edges.v.tolist()))
        assert len(pairs) == len(edges)


def test_weighted_neighborhood_inflates_diagonals_only() -> None:
    rng = np.random.default_rng(2)
    v = _vol(rng.uniform(size=(1, 1, 3, 3)))
    plain = build_edges(v, Neighborhood.N27)
    sigma = 0.8
    weighted = build_edges(v, Neighborhood.N27W, sigma=sigma)
    assert np.array_equal(plain.u, weighted.u)
    offset = np.abs(
        np.stack(np.unravel_index(plain.u, (1, 3, 3)), axis=1)
        - np.stack(np.unravel_index(plain.v, (1, 3, 3)), axis=1)
    )
    d2 = (offset**2).sum(axis=1)
    face = d2 == 1
    assert np.allclose(weighted.w[face], plain.w[face])
    boost = math.exp(1.0 / (2.0 * sigma * sigma))
    assert np.allclose(weighted.w[~face], plain.w[~face] * boost)


def test_weighted_neighborhood_with_huge_sigma_equals_plain() -> None:
    rng = np.random.default_rng(3)
    v = _vol(rng.uniform(size=(2, 2, 4, 3)))
    plain = build_edges(v, Neighborhood.N27)
    wide = build_edges(v, Neighborhood.N27W, sigma=1e9)
    assert np.array_equal(plain.w, wide.w)


# ---------------------------------------------------------------------------
# segmentation


def test_constant_volume_single_segment() -> None:
    v = _vol(np.full((2, 2, 3, 3), 1.5, dtype=np.float32))
    seg = segment_fh(v, GraphCutParams(k=1.0, min_size=1))
    assert seg.labels.segment_ids().tolist() == [1]
    assert (seg.labels.labels == 1).all()
    assert seg.algorithm == "graphcut"
    assert seg.params["k"] == 1.0


def test_step_profile_splits_into_two() -> None:
    seg = segment_fh(
        _row([0.0, 0.0, 0.0, 10.0, 10.0, 10.0]),
        GraphCutParams(k=1.0, min_size=1, neighborhood=Neighborhood.N7),
    )
    labels = seg.labels.labels.ravel()
    assert labels.tolist() == [1, 1, 1, 2, 2, 2]


def test_min_size_absorbs_specks() -> None:
    values = [0.0, 0.0, 0.0, 10.0, 0.0, 0.0]
    small = segment_fh(_row(values), GraphCutParams(k=0.1, min_size=1))
    assert small.labels.segment_ids().size == 3
    merged = segment_fh(_row(values), GraphCutParams(k=0.1, min_size=2))
    assert merged.labels.segment_ids().size <= 2
    sizes = np.bincount(merged.labels.labels.ravel())
    assert (sizes[sizes > 0] >= 2).all()


def test_segmentation_deterministic() -> None:
    rng = np.random.default_rng(4)
    v = _vol(rng.integers(0, 8, size=(2, 2, 5, 4)).astype(np.float32))
    params = GraphCutParams(k=2.0, min_size=3)
    a = segment_fh(v, params)
    b = segment_fh(v, params)
    assert np.array_equal(a.labels.labels, b.labels.labels)
    assert a.source_digest == b.source_digest


def test_labels_are_canonical_and_total() -> None:
    rng = np.random.default_rng(5)
    for _ in range(10):
        v = _vol(rng.integers(0, 6, size=(1, 2, 4, 4)).astype(np.float32))
        seg = segment_fh(v, GraphCutParams(k=1.0, min_size=2))
        labels = seg.labels.labels
        assert (labels >= 1).all()  # no background concept here
        ids = np.unique(labels)
        assert ids.tolist() == list(range(1, ids.size + 1))


def test_params_validation() -> None:
    with pytest.raises(ValueError):
        GraphCutParams(k=0.0)
    with pytest.raises(ValueError):
        GraphCutParams(k=math.inf)
    with pytest.raises(ValueError):
        GraphCutParams(min_size=0)
    with pytest.raises(ValueError):
        GraphCutParams(sigma=0.0)


# ---------------------------------------------------------------------------
# standalone small-segment merging


def _line_edges(values) -> EdgeList:
    return build_edges(_row(values), Neighborhood.N7)


def test_merge_small_identity_when_threshold_is_one() -> None:
    lv = LabelVolume(np.array([1, 2, 3], dtype=np.uint32).reshape(1, 1, 3))
    out = merge_small(lv, _line_edges([0.0, 1.0, 5.0]), 1)
    assert np.array_equal(out.labels, lv.labels)


def test_merge_small_absorbs_single_voxel() -> None:
    lv = LabelVolume(np.array([1, 1, 1, 2], dtype=np.uint32).reshape(1, 1, 4))
    out = merge_small(lv, _line_edges([0.0, 0.0, 0.0, 3.0]), 2)
    assert out.segment_ids().tolist() == [1]


def test_merge_small_tie_rule_on_line() -> None:
    """Two adjacent singletons merge with each other before the heavy edge."""
    lv = LabelVolume(np.array([1, 2, 3, 3], dtype=np.uint32).reshape(1, 1, 4))
    # candidate edges: (0,1) weight 1 between labels 1|2, (1,2) weight 4 between 2|3
    out = merge_small(lv, _line_edges([0.0, 1.0, 5.0, 5.0]), 2)
    assert out.labels.ravel().tolist() == [1, 1, 2, 2]
    # a higher threshold pulls everything together
    out_all = merge_small(lv, _line_edges([0.0, 1.0, 5.0, 5.0]), 3)
    assert np.unique(out_all.labels).size == 1


def test_merge_small_ignores_background() -> None:
    lv = LabelVolume(np.array([1, 0, 2, 2], dtype=np.uint32).reshape(1, 1, 4))
    out = merge_small(lv, _line_edges([0.0, 0.0, 0.0, 0.0]), 2)
    labels = out.labels.ravel()
    assert labels[1] == 0  # background never merges
    assert labels[0] == 1  # stranded small segment has no nonzero neighbor


def test_merge_small_clears_small_segments_on_full_grids() -> None:
    rng = np.random.default_rng(6)
    for _ in range(10):
        shape = (2, 4, 4)
        raw = rng.integers(1, 6, size=shape).astype(np.uint32)
        v = _vol(rng.uniform(size=(2,) + shape))
        edges = build_edges(v, Neighborhood.N7)
        min_size = int(rng.integers(2, 6))
        out = merge_small(LabelVolume(raw), edges, min_size)
        sizes = np.bincount(out.labels.ravel())[1:]
        assert (sizes[sizes > 0] >= min_size).all()
        ids = np.unique(out.labels)
        assert ids.tolist() == list(range(1, ids.size + 1))


def test_merge_small_rejects_bad_threshold() -> None:
    lv = LabelVolume(np.ones((1, 1, 2), dtype=np.uint32))
    with pytest.raises(ValueError):
        merge_small(lv, _line_edges([0.0, 1.0]), 0)
