"""Segmentation quality metrics: overlap, noise, and homogeneity measures.

Label 0 is background everywhere here.  Segmenters in this package label
every voxel, so before comparing against a ground truth that has background,
use :func:`mask_background` to send predicted segments that mostly cover
true background to 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .model import LabelVolume, SpectralVolume

__all__ = [
    "DiceReport",
    "MetricsReport",
    "dice_multilabel",
    "mask_background",
    "snr_projection",
    "snr_reconstruction",
    "cnr",
    "homogeneity_score",
]


@dataclass
class DiceReport:
    overall: float
    per_label: dict[int, float]  # truth label -> dice (0 when unmatched)
    matches: list[tuple[int, int, int]] = field(default_factory=list)  # (truth, pred, overlap)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "per_label": {str(k): v for k, v in self.per_label.items()},
            "matches": [list(m) for m in self.matches],
        }


def _nonzero_sizes(flat: np.ndarray) -> dict[int, int]:
    ids, counts = np.unique(flat[flat != 0], return_counts=True)
    return dict(zip(ids.tolist(), counts.tolist()))


def dice_multilabel(truth: LabelVolume, pred: LabelVolume) -> DiceReport:
    """Greedy one-to-one dice matching between truth and predicted segments.

    Overlap pairs are taken in descending voxel-count order (ties: smaller
    predicted label, then smaller truth label); each truth and each predicted
    label is matched at most once.  Unmatched truth labels score 0.  The
    overall score is 2 * sum(matched overlaps) divided by the total nonzero
    voxel counts of both labelings, so spurious predicted segments are
    penalized.  Two labelings with no nonzero voxels at all score 1.0.
    """
    if truth.labels.shape != pred.labels.shape:
        raise ValueError("truth and prediction have different shapes")
    t = truth.labels.ravel().astype(np.int64)
    p = pred.labels.ravel().astype(np.int64)
    t_sizes = _nonzero_sizes(t)
    p_sizes = _nonzero_sizes(p)

    both = (t != 0) & (p != 0)
    if both.any():
        key = t[both] * (p.max() + 1) + p[both]
        pairs, counts = np.unique(key, return_counts=True)
        t_of = pairs // (p.max() + 1)
        p_of = pairs % (p.max() + 1)
        order = np.lexsort((t_of, p_of, -counts))
    else:
        t_of = p_of = counts = np.empty(0, dtype=np.int64)
        order = np.empty(0, dtype=np.int64)

    matched_t: set[int] = set()
    matched_p: set[int] = set()
    matches: list[tuple[int, int, int]] = []
    per_label = {tl: 0.0 for tl in t_sizes}
    overlap_sum = 0
    for i in order:
        tl, pl, ov = int(t_of[i]), int(p_of[i]), int(counts[i])
        if tl in matched_t or pl in matched_p:
            continue
        matched_t.add(tl)
        matched_p.add(pl)
        matches.append((tl, pl, ov))
        per_label[tl] = 2.0 * ov / (t_sizes[tl] + p_sizes[pl])
        overlap_sum += ov
    denom = sum(t_sizes.values()) + sum(p_sizes.values())
    overall = 2.0 * overlap_sum / denom if denom else 1.0
    return DiceReport(overall=overall, per_label=per_label, matches=matches)


def mask_background(pred: LabelVolume, truth: LabelVolume) -> LabelVolume:
    """Zero out predicted segments that mostly cover true background.

    A predicted segment is sent to 0 when at least as many of its voxels lie
    on truth background (0) as on its best-overlapping truth segment.
    Returns a new LabelVolume; the input is untouched.
    """
    if truth.labels.shape != pred.labels.shape:
        raise ValueError("truth and prediction have different shapes")
    t = truth.labels.ravel().astype(np.int64)
    p = pred.labels.ravel().astype(np.int64)
    n_pred = int(p.max()) + 1
    bg_count = np.bincount(p[t == 0], minlength=n_pred)
    fg = t != 0
    best_fg = np.zeros(n_pred, dtype=np.int64)
    if fg.any():
        key = p[fg] * (t.max() + 1) + t[fg]
        pairs, counts = np.unique(key, return_counts=True)
        p_of = pairs // (t.max() + 1)
        np.maximum.at(best_fg, p_of, counts)
    keep = bg_count < best_fg  # background wins ties
    keep[0] = False
    out = np.where(keep[p], p, 0).astype(np.uint32)
    return LabelVolume(out.reshape(pred.labels.shape))


def _mean_over_std(values: np.ndarray) -> float:
    """mean/std with a +inf sentinel when the spread is zero."""
    if values.size == 0:
        raise ValueError("empty selection")
    std = float(values.std())
    mean = float(values.mean())
    if std == 0.0:
        return math.inf
    return mean / std


def snr_projection(counts: np.ndarray) -> float:
    """Signal-to-noise of projection data: mean/std of positive entries."""
    arr = np.asarray(counts, dtype=np.float64)
    sel = arr[arr > 0]
    if sel.size == 0:
        raise ValueError("no positive entries in projection data")
    return _mean_over_std(sel)


def snr_reconstruction(v: SpectralVolume, roi: np.ndarray, channel: int) -> float:
    """mean/std of one channel inside a boolean region of interest."""
    nx, ny, nz = v.dims
    mask = np.asarray(roi, dtype=bool)
    if mask.shape != (nz, ny, nx):
        raise ValueError("roi shape must be (nz, ny, nx)")
    if not 0 <= channel < v.n_channels:
        raise ValueError("channel out of range")
    return _mean_over_std(v.data[channel][mask].astype(np.float64))


def cnr(
    v: SpectralVolume,
    material_mask: np.ndarray,
    background_mask: np.ndarray,
    channel: int,
) -> float:
    """Contrast-to-noise: (mean_material - mean_background) / std_background."""
    nx, ny, nz = v.dims
    m = np.asarray(material_mask, dtype=bool)
    b = np.asarray(background_mask, dtype=bool)
    if m.shape != (nz, ny, nx) or b.shape != (nz, ny, nx):
        raise ValueError("masks must have shape (nz, ny, nx)")
    if not m.any() or not b.any():
        raise ValueError("masks must be non-empty")
    if not 0 <= channel < v.n_channels:
        raise ValueError("channel out of range")
    plane = v.data[channel].astype(np.float64)
    std_b = float(plane[b].std())
    contrast = float(plane[m].mean() - plane[b].mean())
    if std_b == 0.0:
        return math.inf
    return contrast / std_b


def homogeneity_score(v: SpectralVolume, lv: LabelVolume) -> float:
    """Unsupervised segmentation quality; lower is better.

    Two penalties are added: (a) the mean pairwise similarity between
    segment mean spectra, where per channel the similarity of two segments
    is 1 - |mean_i - mean_j| / (largest segment mean magnitude in that
    channel); similar neighbors suggest the split was unnecessary; and
    (b) the mean in-segment dispersion, per channel the root of the summed
    squared deviations from the segment mean, normalized by sqrt(segment
    size) and the channel's value range so volumes of different scale are
    comparable.  Background voxels (label 0) are ignored.
    """
    nx, ny, nz = v.dims
    if lv.labels.shape != (nz, ny, nx):
        raise ValueError("labels and volume have different shapes")
    flat_labels = lv.labels.ravel().astype(np.int64)
    sig = v.signatures().astype(np.float64)  # (n_vox, ne)
    ids = np.unique(flat_labels)
    ids = ids[ids != 0]
    if ids.size == 0:
        raise ValueError("no nonzero segments to score")
    ne = sig.shape[1]

    means = np.empty((ids.size, ne))
    disps = np.empty(ids.size)
    chan_range = sig.max(axis=0) - sig.min(axis=0)
    safe_range = np.where(chan_range > 0, chan_range, 1.0)
    for i, seg in enumerate(ids):
        pts = sig[flat_labels == seg]
        means[i] = pts.mean(axis=0)
        dev = pts - means[i]
        rss = np.sqrt((dev * dev).sum(axis=0))  # per channel
        disps[i] = (rss / (math.sqrt(pts.shape[0]) * safe_range)).mean()

    dispersion = float(disps.mean())
    if ids.size < 2:
        return dispersion

    denom = np.abs(means).max(axis=0)
    pair_sims = []
    for i in range(ids.size):
        for j in range(i + 1, ids.size):
            diff = np.abs(means[i] - means[j])
            per_chan = np.where(denom > 0, 1.0 - diff / np.where(denom > 0, denom, 1.0), 1.0)
            pair_sims.append(per_chan.mean())
    return float(np.mean(pair_sims)) + dispersion


@dataclass
class MetricsReport:
    """Bundle of evaluation results with JSON/CSV emission.

    Infinite values (zero-variance SNR or CNR) serialize as a null value
    plus an ``*_infinite`` flag.
    """

    dice: DiceReport | None = None
    homogeneity: float | None = None
    snr: float | None = None
    cnr: float | None = None

    def to_dict(self) -> dict:
        out: dict = {}
        if self.dice is not None:
            out["dice"] = self.dice.to_dict()
        if self.homogeneity is not None:
            out["homogeneity"] = self.homogeneity
        for name in ("snr", "cnr"):
            val = getattr(self, name)
            if val is None:
                continue
            out[name] = None if math.isinf(val) else val
            out[f"{name}_infinite"] = math.isinf(val)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        rows = ["metric,value"]
        if self.dice is not None:
            rows.append(f"dice_overall,{self.dice.overall}")
            for label in sorted(self.dice.per_label):
                rows.append(f"dice_label_{label},{self.dice.per_label[label]}")
        if self.homogeneity is not None:
            rows.append(f"homogeneity,{self.homogeneity}")
        for name in ("snr", "cnr"):
            val = getattr(self, name)
            if val is not None:
                rows.append(f"{name},{'inf' if math.isinf(val) else val}")
        return "\n".join(rows) + "\n"
