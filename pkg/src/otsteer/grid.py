"""Box grids and probability mass vectors over their cells.

Cells are numbered with the first axis varying fastest, so a 2-D mass
vector reshaped to ``(counts[1], counts[0])`` is an image whose row index
is the second coordinate (increasing upwards).
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DegenerateDensityError, OutOfDomainError

MASS_ATOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    lower: tuple
    upper: tuple
    counts: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        counts = tuple(int(c) for c in np.atleast_1d(self.counts))
        if not (len(lower) == len(upper) == len(counts)):
            raise ValueError("lower, upper and counts must have the same length")
        if any(c < 1 for c in counts):
            raise ValueError("cell counts must be at least 1")
        if any(hi <= lo for lo, hi in zip(lower, upper)):
            raise ValueError("grid box must have positive extent on every axis")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "counts", counts)

    @property
    def ndim(self):
        return len(self.counts)

    @property
    def size(self):
        return int(np.prod(self.counts))

    @property
    def widths(self):
        return (np.array(self.upper) - np.array(self.lower)) / np.array(self.counts)

    @property
    def cell_volume(self):
        return float(np.prod(self.widths))

    def axis_centers(self, d):
        lo, w = self.lower[d], self.widths[d]
        return lo + w * (np.arange(self.counts[d]) + 0.5)

    @cached_property
    def centroids(self):
        axes = [self.axis_centers(d) for d in range(self.ndim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel(order="F") for g in mesh], axis=1)
        pts.setflags(write=False)
        return pts

    def contains(self, points, atol=1e-12):
        P = np.atleast_2d(points)
        lo = np.array(self.lower) - atol
        hi = np.array(self.upper) + atol
        return np.all((P >= lo) & (P <= hi), axis=1)

    def cell_index(self, points):
        """Flat index of the cell containing each point.

        Points on the upper boundary belong to the last cell.  Raises
        :class:`OutOfDomainError` for points outside the box.
        """
        P = np.atleast_2d(np.asarray(points, dtype=float))
        if P.shape[1] != self.ndim:
            raise ValueError(f"points must have dimension {self.ndim}")
        inside = self.contains(P)
        if not np.all(inside):
            bad = P[~inside][0]
            raise OutOfDomainError(f"point {bad.tolist()} lies outside the grid box")
        return self._flat_index(P)

    def _flat_index(self, P):
        counts = np.array(self.counts)
        idx = np.floor((P - np.array(self.lower)) / self.widths).astype(np.int64)
        idx = np.clip(idx, 0, counts - 1)
        return np.ravel_multi_index(tuple(idx.T), self.counts, order="F")

    def histogram(self, points):
        """Fraction of ``points`` in each cell plus the fraction outside the box."""
        P = np.atleast_2d(points)
        if P.shape[0] == 0:
            return np.zeros(self.size), 0.0
        inside = self.contains(P)
        counts = np.bincount(self._flat_index(P[inside]), minlength=self.size)
        return counts / P.shape[0], float(np.mean(~inside))

    def image(self, values):
        """Reshape a per-cell vector of a 2-D grid to ``(rows, cols)``, top row first."""
        if self.ndim != 2:
            raise ValueError("image() needs a 2-D grid")
        return np.asarray(values).reshape(self.counts[1], self.counts[0])[::-1]


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Probability masses attached to the cells of a :class:`GridSpec`."""

    grid: GridSpec
    mass: np.ndarray

    def __post_init__(self):
        mass = np.array(self.mass, dtype=float).ravel()
        if mass.size != self.grid.size:
            raise ValueError(f"mass has {mass.size} entries for {self.grid.size} cells")
        if np.any(mass < 0):
            raise ValueError("masses must be nonnegative")
        if abs(mass.sum() - 1.0) > MASS_ATOL:
            raise ValueError(f"masses sum to {mass.sum()!r}, not 1")
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)

    @property
    def cells(self):
        return self.grid.centroids

    @property
    def volumes(self):
        return np.full(self.grid.size, self.grid.cell_volume)

    def __len__(self):
        return self.grid.size


def _normalize(w, grid):
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("density values must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise DegenerateDensityError("density has no mass on the grid")
    return GridDensity(grid, w / total)


def discretize(density, grid):
    """Cell masses of ``density`` on ``grid``, normalized to sum to one.

    ``density`` is either a callable evaluated at cell centroids (midpoint
    rule) or a 2-D raster whose shape is ``(counts[1], counts[0])``; the top
    raster row maps to the highest second coordinate.
    """
    if callable(density):
        values = np.asarray(density(grid.centroids), dtype=float).ravel()
        return _normalize(values * grid.cell_volume, grid)
    raster = np.asarray(density, dtype=float)
    if grid.ndim != 2 or raster.shape != (grid.counts[1], grid.counts[0]):
        raise ValueError(
            f"raster of shape {raster.shape} does not match grid counts {grid.counts}")
    return _normalize(raster[::-1].ravel(), grid)


def total_variation(hist, rho, outside=0.0):
    """Half the L1 distance; ``outside`` is mass that fell off the grid."""
    return 0.5 * (float(np.abs(np.asarray(hist) - np.asarray(rho)).sum()) + outside)
