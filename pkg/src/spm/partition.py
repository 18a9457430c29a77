"""Load-balanced axis-aligned domain decomposition.

A 2-D particle histogram over the first two coordinates drives a FIFO
bisection: each box is split at the grid-aligned plane (axis 1 or 2) that
best balances the particle counts of the two halves.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .core import ParticleEnsemble


@dataclass(frozen=True)
class Histogram2D:
    counts: np.ndarray  # (n1, n2) int64
    origin: Tuple[float, float]
    h: float

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class Box:
    lo: np.ndarray  # (2,)
    hi: np.ndarray  # (2,)

    def measure(self) -> float:
        return float(np.prod(self.hi - self.lo))


@dataclass(frozen=True)
class BoxPartition:
    blocks: List[Box]
    counts: List[int]


def build_histogram(ensemble: ParticleEnsemble, box: Box, h: float) -> Histogram2D:
    """Exact per-cell particle counts over the first two coordinates."""
    xy = ensemble.locations[:, :2]
    outside = np.any((xy < box.lo) | (xy >= box.hi + 1e-12), axis=1)
    if outside.any():
        raise ValueError(
            f"particle {int(np.argmax(outside))} lies outside the histogram box"
        )
    n1 = int(np.ceil((box.hi[0] - box.lo[0]) / h - 1e-9))
    n2 = int(np.ceil((box.hi[1] - box.lo[1]) / h - 1e-9))
    i = np.minimum(np.floor((xy[:, 0] - box.lo[0]) / h).astype(np.int64), n1 - 1)
    j = np.minimum(np.floor((xy[:, 1] - box.lo[1]) / h).astype(np.int64), n2 - 1)
    counts = np.bincount(i * n2 + j, minlength=n1 * n2).reshape(n1, n2)
    return Histogram2D(counts, (float(box.lo[0]), float(box.lo[1])), h)


def _cell_range(lo: float, hi: float, origin: float, h: float) -> Tuple[int, int]:
    a = int(round((lo - origin) / h))
    b = int(round((hi - origin) / h))
    return a, b


def split_domain(hist: Histogram2D, box: Box, nproc: int) -> BoxPartition:
    """FIFO bisection into ``nproc`` blocks (nproc a power of two).

    Every candidate split plane on axes 1 and 2 is scanned; the plane
    minimising |L - R| wins, ties broken by smallest axis then smallest
    coordinate.
    """
    if nproc < 1 or nproc & (nproc - 1):
        raise ValueError("nproc must be a positive power of two")
    queue = deque([box])
    while len(queue) < nproc:
        cur = queue.popleft()
        axis, cut = _best_split(hist, cur)
        lo1, hi1 = cur.lo.copy(), cur.hi.copy()
        lo2, hi2 = cur.lo.copy(), cur.hi.copy()
        hi1[axis] = cut
        lo2[axis] = cut
        queue.append(Box(lo1, hi1))
        queue.append(Box(lo2, hi2))
    blocks = list(queue)
    counts = [_count_in(hist, b) for b in blocks]
    return BoxPartition(blocks, counts)


def _count_in(hist: Histogram2D, box: Box) -> int:
    i0, i1 = _cell_range(box.lo[0], box.hi[0], hist.origin[0], hist.h)
    j0, j1 = _cell_range(box.lo[1], box.hi[1], hist.origin[1], hist.h)
    return int(hist.counts[i0:i1, j0:j1].sum())


def _best_split(hist: Histogram2D, box: Box) -> Tuple[int, float]:
    best = None
    i0, i1 = _cell_range(box.lo[0], box.hi[0], hist.origin[0], hist.h)
    j0, j1 = _cell_range(box.lo[1], box.hi[1], hist.origin[1], hist.h)
    sub = hist.counts[i0:i1, j0:j1]
    total = sub.sum()
    for axis, (a, b) in enumerate(((i0, i1), (j0, j1))):
        if b - a < 2:
            continue
        marg = sub.sum(axis=1 - axis)
        left = np.cumsum(marg)[:-1]  # counts left of each interior plane
        imbalance = np.abs(2 * left - total)
        k = int(np.argmin(imbalance))
        cand = (int(imbalance[k]), axis, k)
        if best is None or cand < best:
            best = cand
    if best is None:
        raise ValueError("box is one cell wide on both candidate axes")
    _, axis, k = best
    origin = hist.origin[axis]
    start = (i0, j0)[axis]
    cut = origin + (start + k + 1) * hist.h
    return axis, cut
