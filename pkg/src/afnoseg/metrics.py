"""Volumetric overlap and boundary-distance metrics.

DSC is 2|G n P| / (|G| + |P|); HD95 is the symmetric 95th-percentile
boundary distance max(d95(Y,P), d95(P,Y)) where d95(A,B) is the nearest-rank
95th percentile, over boundary voxels of A, of the Euclidean distance (in
physical spacing units) to the nearest boundary voxel of B.  Boundary
voxels are foreground voxels with at least one 6-connected background
neighbor; the outside of the grid counts as background.

``dsc_reference`` and ``hd95_reference`` are deliberately slow scalar-loop
implementations kept as independent oracles; the fast paths compute every
pairwise squared distance with the same term order, so the two agree
exactly, not just within tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


def dsc(g: np.ndarray, p: np.ndarray) -> float:
    """Dice similarity of two binary masks; both-empty counts as 1.0."""
    g = np.asarray(g, dtype=bool)
    p = np.asarray(p, dtype=bool)
    if g.shape != p.shape:
        raise InputError(f"mask shapes differ: {g.shape} vs {p.shape}")
    total = int(g.sum()) + int(p.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((g & p).sum()) / total


def dsc_reference(g: np.ndarray, p: np.ndarray) -> float:
    """Scalar-loop Dice used as an oracle for the vectorized path."""
    g = np.asarray(g, dtype=bool)
    p = np.asarray(p, dtype=bool)
    if g.shape != p.shape:
        raise InputError(f"mask shapes differ: {g.shape} vs {p.shape}")
    inter = size_g = size_p = 0
    for gv, pv in zip(g.ravel(), p.ravel()):
        inter += int(gv and pv)
        size_g += int(gv)
        size_p += int(pv)
    if size_g + size_p == 0:
        return 1.0
    return 2.0 * inter / (size_g + size_p)


def boundary_voxels(mask: np.ndarray) -> np.ndarray:
    """(n, 3) indices of foreground voxels with a 6-connected background neighbor."""
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = np.ones_like(m)
    for axis in range(3):
        lo = [slice(1, -1)] * 3
        hi = [slice(1, -1)] * 3
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        interior &= padded[tuple(lo)] & padded[tuple(hi)]
    return np.argwhere(m & ~interior)


def nearest_rank(n: int, q_percent: int = 95) -> int:
    """ceil(q*n/100) as an exact integer rank (1-based)."""
    return (q_percent * n + 99) // 100


def _directed_d95(a_idx: np.ndarray, b_idx: np.ndarray, spacing) -> float:
    sd, sh, sw = spacing
    a = a_idx.astype(np.float64)
    b = b_idx.astype(np.float64)
    mins = np.empty(len(a))
    chunk = 2048
    for start in range(0, len(a), chunk):
        blk = a[start: start + chunk]
        d2 = (((blk[:, None, 0] - b[None, :, 0]) * sd) ** 2
              + ((blk[:, None, 1] - b[None, :, 1]) * sh) ** 2
              + ((blk[:, None, 2] - b[None, :, 2]) * sw) ** 2)
        mins[start: start + chunk] = d2.min(axis=1)
    dists = np.sort(np.sqrt(mins))
    return float(dists[nearest_rank(len(dists)) - 1])


def hd95(y: np.ndarray, p: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> float | None:
    """Symmetric 95th-percentile boundary distance; None when a mask is empty."""
    y = np.asarray(y, dtype=bool)
    p = np.asarray(p, dtype=bool)
    if y.shape != p.shape:
        raise InputError(f"mask shapes differ: {y.shape} vs {p.shape}")
    if not y.any() or not p.any():
        return None
    by = boundary_voxels(y)
    bp = boundary_voxels(p)
    return max(_directed_d95(by, bp, spacing), _directed_d95(bp, by, spacing))


def hd95_reference(y: np.ndarray, p: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> float | None:
    """Exhaustive all-pairs scalar-loop HD95 oracle."""
    y = np.asarray(y, dtype=bool)
    p = np.asarray(p, dtype=bool)
    if not y.any() or not p.any():
        return None
    sd, sh, sw = spacing

    def boundary(mask):
        out = []
        dd, hh, ww = mask.shape
        for i in range(dd):
            for j in range(hh):
                for k in range(ww):
                    if not mask[i, j, k]:
                        continue
                    for di, dj, dk in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                                       (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                        ni, nj, nk = i + di, j + dj, k + dk
                        outside = not (0 <= ni < dd and 0 <= nj < hh and 0 <= nk < ww)
                        if outside or not mask[ni, nj, nk]:
                            out.append((i, j, k))
                            break
        return out

    def directed(a_pts, b_pts):
        dists = []
        for ai, aj, ak in a_pts:
            best = math.inf
            for bi, bj, bk in b_pts:
                d2 = (((ai - bi) * sd) ** 2
                      + ((aj - bj) * sh) ** 2
                      + ((ak - bk) * sw) ** 2)
                if d2 < best:
                    best = d2
            dists.append(math.sqrt(best))
        dists.sort()
        return dists[nearest_rank(len(dists)) - 1]

    by, bp = boundary(y), boundary(p)
    return max(directed(by, bp), directed(bp, by))


@dataclass
class MetricReport:
    """Per-foreground-class DSC and HD95 plus their means.

    ``per_class_hd95`` holds None (undefined) where a class is empty in
    either mask; undefined entries are excluded from ``mean_hd95`` and
    counted in ``hd95_undefined``.
    """

    per_class_dsc: dict[int, float] = field(default_factory=dict)
    per_class_hd95: dict[int, float | None] = field(default_factory=dict)
    mean_dsc: float = 0.0
    mean_hd95: float | None = None
    hd95_undefined: int = 0

    def to_dict(self) -> dict:
        return {
            "per_class_dsc": {str(k): v for k, v in self.per_class_dsc.items()},
            "per_class_hd95": {str(k): v for k, v in self.per_class_hd95.items()},
            "mean_dsc": self.mean_dsc,
            "mean_hd95": self.mean_hd95,
            "hd95_undefined": self.hd95_undefined,
        }


def evaluate(pred: np.ndarray, truth: np.ndarray, num_classes: int,
             spacing=(1.0, 1.0, 1.0)) -> MetricReport:
    """One-vs-rest metrics per foreground class (background class 0 excluded)."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise InputError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    for name, mask in (("pred", pred), ("truth", truth)):
        if mask.min() < 0 or mask.max() >= num_classes:
            raise InputError(
                f"{name} labels must lie in [0, {num_classes}), got range "
                f"[{mask.min()}, {mask.max()}]"
            )
    report = MetricReport()
    hd_values = []
    for cls in range(1, num_classes):
        g = truth == cls
        p = pred == cls
        report.per_class_dsc[cls] = dsc(g, p)
        value = hd95(g, p, spacing)
        report.per_class_hd95[cls] = value
        if value is None:
            report.hd95_undefined += 1
        else:
            hd_values.append(value)
    report.mean_dsc = float(np.mean(list(report.per_class_dsc.values())))
    report.mean_hd95 = float(np.mean(hd_values)) if hd_values else None
    return report
