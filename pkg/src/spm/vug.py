"""Sparse piecewise-constant reconstruction on a virtual uniform grid.

Only occupied cells of the conceptual lattice are stored.  Cells are keyed by
their integer coordinates, held sorted by a linearised key so that lookup,
merging and serialisation are deterministic.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Tuple

import numpy as np

from .core import GridSpec, ParticleEnsemble

ROLE_SOLUTION = "solution"
ROLE_SOLUTION_PLUS_F = "solution_plus_nonlinearity"

# Dense per-shard accumulation is used while the bounding-box volume stays
# below this; beyond it the sort/unique path takes over.
_DENSE_VOLUME_CAP = 1 << 25


def grid_coord(x: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Integer cell coordinate(s) of point(s) ``x``; cells are right-open."""
    x = np.asarray(x, dtype=np.float64)
    return np.floor((x - grid.anchor) / grid.h).astype(np.int64)


def _linear_keys(coords: np.ndarray, cmin: np.ndarray, strides: np.ndarray) -> np.ndarray:
    """Linearised cell keys, accumulated one axis at a time (an integer
    matmul would fall off the fast path)."""
    keys = (coords[:, 0] - cmin[0]) * strides[0]
    for j in range(1, coords.shape[1]):
        keys += (coords[:, j] - cmin[j]) * strides[j]
    return keys


class EmptyFieldError(RuntimeError):
    """Raised when a reconstruction has zero total variation."""


@dataclass
class VugMap:
    """Sparse map from integer cell coordinates to cell-averaged values."""

    grid: GridSpec
    coords: np.ndarray  # (K, d) int64, sorted by linearised key
    values: np.ndarray  # (K,) float64
    role: str = ROLE_SOLUTION
    _cmin: np.ndarray = field(init=False, repr=False)
    _strides: np.ndarray = field(init=False, repr=False)
    _extent: np.ndarray = field(init=False, repr=False)
    _keys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, self.grid.dim)
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if coords.shape[0] != values.shape[0]:
            raise ValueError("coords/values length mismatch")
        if coords.shape[0] == 0:
            raise ValueError("a VUG map must hold at least one cell")
        cmin = coords.min(axis=0)
        extent = coords.max(axis=0) - cmin + 1
        strides = _strides_for(extent)
        keys = _linear_keys(coords, cmin, strides)
        order = np.argsort(keys, kind="stable")
        self.coords = coords[order]
        self.values = values[order]
        self._cmin = cmin
        self._extent = extent
        self._strides = strides
        self._keys = keys[order]

    # -- queries ---------------------------------------------------------

    @property
    def n_cells(self) -> int:
        return self.coords.shape[0]

    def cell_centers(self) -> np.ndarray:
        return self.grid.anchor + (self.coords + 0.5) * self.grid.h

    def values_at_coords(self, coords: np.ndarray) -> np.ndarray:
        """Stored values at integer coordinates; absent cells give 0."""
        coords = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        inside = np.all((coords >= self._cmin) &
                        (coords < self._cmin + self._extent), axis=1)
        out = np.zeros(coords.shape[0])
        if inside.all():
            keys = _linear_keys(coords, self._cmin, self._strides)
            return self._values_at_keys(keys)
        if inside.any():
            keys = _linear_keys(coords[inside], self._cmin, self._strides)
            out[inside] = self._values_at_keys(keys)
        return out

    def _values_at_keys(self, keys: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self._keys, keys)
        pos_c = np.minimum(pos, self._keys.size - 1)
        hit = self._keys[pos_c] == keys
        return np.where(hit, self.values[pos_c], 0.0)

    def eval(self, x: np.ndarray) -> np.ndarray:
        """Piecewise-constant value(s) at point(s) ``x`` (0 off support)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        c = grid_coord(np.atleast_2d(x), self.grid)
        v = self.values_at_coords(c)
        return float(v[0]) if single else v

    def grad_component_at_coords(self, coords: np.ndarray, axis: int) -> np.ndarray:
        """Central difference across the two axis neighbours of each cell;
        absent neighbours contribute 0."""
        coords = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        right = coords.copy()
        right[:, axis] += 1
        left = coords.copy()
        left[:, axis] -= 1
        return (self.values_at_coords(right) - self.values_at_coords(left)) / (
            2.0 * self.grid.h
        )

    def grad_component_at_stored(self, axis: int) -> np.ndarray:
        """Central difference for every stored cell via key arithmetic (the
        two axis neighbours differ by exactly one stride)."""
        edge_lo = self.coords[:, axis] == self._cmin[axis]
        edge_hi = self.coords[:, axis] == self._cmin[axis] + self._extent[axis] - 1
        right = self._values_at_keys(self._keys + self._strides[axis])
        left = self._values_at_keys(self._keys - self._strides[axis])
        right[edge_hi] = 0.0
        left[edge_lo] = 0.0
        return (right - left) / (2.0 * self.grid.h)

    def grad_component(self, x: np.ndarray, axis: int):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        c = grid_coord(np.atleast_2d(x), self.grid)
        g = self.grad_component_at_coords(c, axis)
        return float(g[0]) if single else g

    def total_variation(self) -> float:
        """``Z = sum_k |c_k| h^d``."""
        return float(np.abs(self.values).sum() * self.grid.cell_measure)

    # -- serialisation ---------------------------------------------------

    def to_text(self, path):
        cols = np.column_stack([self.coords.astype(np.float64), self.values])
        fmt = ["%d"] * self.grid.dim + ["%.17g"]
        np.savetxt(path, cols, fmt=fmt)

    @classmethod
    def from_text(cls, path, grid: GridSpec, role=ROLE_SOLUTION):
        data = np.atleast_2d(np.loadtxt(path))
        return cls(grid, data[:, : grid.dim].astype(np.int64), data[:, -1], role)

    @classmethod
    def from_cells(cls, grid: GridSpec, cells: dict, role=ROLE_SOLUTION):
        coords = np.array(list(cells.keys()), dtype=np.int64).reshape(-1, grid.dim)
        values = np.array(list(cells.values()), dtype=np.float64)
        return cls(grid, coords, values, role)


@dataclass(frozen=True)
class OccupancyStats:
    stored_cells: int
    full_cells: int

    @property
    def ratio(self) -> float:
        return self.stored_cells / self.full_cells


def occupancy(vmap: VugMap, box: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> OccupancyStats:
    """Stored cells vs full lattice cells over a bounding box (by default the
    tight integer bounding box of the stored cells)."""
    if box is None:
        full = int(np.prod(vmap._extent.astype(np.float64)))
    else:
        lo, hi = (np.asarray(b, dtype=np.float64) for b in box)
        per_axis = np.ceil((hi - lo) / vmap.grid.h - 1e-9)
        full = int(np.prod(per_axis))
        clo = np.floor((lo - vmap.grid.anchor) / vmap.grid.h + 1e-9).astype(np.int64)
        if np.any(vmap.coords < clo) or np.any(vmap.coords >= clo + per_axis):
            raise ValueError("bounding box does not contain all stored cells")
    if full < vmap.n_cells:
        raise ValueError("bounding box does not contain all stored cells")
    return OccupancyStats(vmap.n_cells, full)


def _strides_for(extent: np.ndarray) -> np.ndarray:
    strides = np.ones_like(extent)
    strides[:-1] = np.cumprod(extent[::-1])[-2::-1]
    return strides


def _accumulate_shard(keys, weights, volume):
    """(unique keys, per-key weight sums, per-key particle counts)."""
    if volume <= _DENSE_VOLUME_CAP:
        sums = np.bincount(keys, weights=weights, minlength=volume)
        hits = np.bincount(keys, minlength=volume)
        occ = np.nonzero(hits)[0]
        return occ, sums[occ]
    uniq, inverse = np.unique(keys, return_inverse=True)
    sums = np.bincount(inverse, weights=weights)
    return uniq, sums


def _merge_pair(a, b):
    keys = np.concatenate([a[0], b[0]])
    vals = np.concatenate([a[1], b[1]])
    uniq, inverse = np.unique(keys, return_inverse=True)
    return uniq, np.bincount(inverse, weights=vals)


def build_solution_map(
    ensemble: ParticleEnsemble,
    grid: GridSpec,
    workers: int = 1,
    role: str = ROLE_SOLUTION,
) -> VugMap:
    """Deposit ``w_i / (N h^d)`` into the cell of each particle.

    Each worker accumulates a private shard; shard results merge pairwise in
    a fixed tree order, so the outcome is reproducible for a given worker
    count.
    """
    coords = grid_coord(ensemble.locations, grid)
    cmin = coords.min(axis=0)
    extent = coords.max(axis=0) - cmin + 1
    strides = _strides_for(extent)
    keys = _linear_keys(coords, cmin, strides)
    volume = int(np.prod(extent.astype(np.float64))) if np.prod(
        extent.astype(np.float64)
    ) <= _DENSE_VOLUME_CAP else _DENSE_VOLUME_CAP + 1

    scale = 1.0 / (ensemble.n * grid.cell_measure)
    weights = ensemble.weights * scale

    nshards = max(1, min(workers, ensemble.n))
    bounds = np.linspace(0, ensemble.n, nshards + 1, dtype=np.int64)
    if nshards == 1:
        merged = _accumulate_shard(keys, weights, volume)
    else:
        with ThreadPoolExecutor(max_workers=nshards) as pool:
            shards = list(
                pool.map(
                    lambda i: _accumulate_shard(
                        keys[bounds[i]:bounds[i + 1]],
                        weights[bounds[i]:bounds[i + 1]],
                        volume,
                    ),
                    range(nshards),
                )
            )
        while len(shards) > 1:
            nxt = []
            for i in range(0, len(shards) - 1, 2):
                nxt.append(_merge_pair(shards[i], shards[i + 1]))
            if len(shards) % 2:
                nxt.append(shards[-1])
            shards = nxt
        merged = shards[0]

    occ_keys, sums = merged
    out_coords = np.empty((occ_keys.size, grid.dim), dtype=np.int64)
    rem = occ_keys.copy()
    for j in range(grid.dim):
        out_coords[:, j] = rem // strides[j] + cmin[j]
        rem = rem % strides[j]
    return VugMap(grid, out_coords, sums, role)


def total_variation_Z(vmap: VugMap) -> float:
    """Normaliser ``Z``; zero signals a fully cancelled or empty field."""
    z = vmap.total_variation()
    if z == 0.0:
        raise EmptyFieldError("reconstructed field has zero total variation")
    return z


def sample_from_map(
    vmap: VugMap,
    z: float,
    rng: np.random.Generator,
    n: int = 1,
    return_indices: bool = False,
):
    """Draw point(s) from the normalised magnitude of the stored field.

    A cell is selected with probability ``|c_k| h^d / Z`` from a cumulative
    table in sorted-key order, then the point is uniform within the cell.
    """
    if z <= 0:
        raise EmptyFieldError("Z must be positive for sampling")
    cum = np.cumsum(np.abs(vmap.values) * vmap.grid.cell_measure)
    u = rng.random(n) * cum[-1]
    idx = np.searchsorted(cum, u, side="right")
    idx = np.minimum(idx, vmap.n_cells - 1)
    offs = rng.random((n, vmap.grid.dim))
    pts = vmap.grid.anchor + (vmap.coords[idx] + offs) * vmap.grid.h
    if return_indices:
        return pts, idx
    return pts
