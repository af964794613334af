"""Quadrature grids on truncated boxes [-R, R]^d and weighted-sum integration.

Every integral in the solver is a weighted sum over one of these grids, so
determinism of `integrate` (fixed summation order) is what makes whole runs
reproducible byte-for-byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy.special import roots_legendre

from .errors import GridError

RULES = ("trapezoid", "gauss-legendre")

#: Refuse to build grids above this many nodes (dense kernels get huge first).
MAX_GRID_NODES = 4_000_000


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor quadrature grid over the box [-R, R]^dim.

    nodes is (n,) for dim == 1 and (n, dim) otherwise; weights is always (n,)
    and strictly positive.  axes keeps the per-axis 1-D node arrays (needed to
    rebuild tensor structure, e.g. for kernels on product grids).
    """

    nodes: np.ndarray
    weights: np.ndarray
    truncation_radius: float
    dim: int
    rule: str
    axes: Tuple[np.ndarray, ...] = field(repr=False, default=())

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        if nodes.shape[0] < 2:
            raise GridError("grid needs at least 2 nodes")
        if weights.shape != (nodes.shape[0],):
            raise GridError("weights length must match node count")
        if not np.all(weights > 0):
            raise GridError("quadrature weights must be strictly positive")
        for ax in self.axes:
            if np.any(np.diff(ax) <= 0):
                raise GridError("axis nodes must be strictly increasing")
        nodes.setflags(write=False)
        weights.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def volume(self) -> float:
        return (2.0 * self.truncation_radius) ** self.dim

    def axis(self, k: int = 0) -> np.ndarray:
        return self.axes[k]


@dataclass(frozen=True)
class GridFunction:
    """A function known by its values at the grid nodes."""

    grid: QuadratureGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_nodes,):
            raise GridError(
                f"values shape {values.shape} does not match grid "
                f"({self.grid.n_nodes} nodes)"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def _axis_rule(radius: float, points: int, rule: str):
    if rule == "trapezoid":
        x = np.linspace(-radius, radius, points)
        h = 2.0 * radius / (points - 1)
        w = np.full(points, h)
        w[0] = w[-1] = h / 2.0
        return x, w
    if rule == "gauss-legendre":
        xi, wi = roots_legendre(points)
        return radius * xi, radius * wi
    raise GridError(f"unknown quadrature rule {rule!r}; expected one of {RULES}")


def build_grid(dim: int = 1, radius: float = 1.0, points_per_axis: int = 2,
               rule: str = "trapezoid") -> QuadratureGrid:
    """Build a tensor quadrature grid on [-radius, radius]^dim."""
    if radius <= 0:
        raise GridError("radius must be positive")
    if points_per_axis < 2:
        raise GridError("points_per_axis must be at least 2")
    if dim < 1:
        raise GridError("dim must be at least 1")
    total = points_per_axis ** dim
    if total > MAX_GRID_NODES:
        raise GridError(
            f"grid of {points_per_axis}^{dim} = {total} nodes exceeds the cap "
            f"of {MAX_GRID_NODES} (approx {8 * total / 1e9:.1f} GB per vector)"
        )
    x, w = _axis_rule(float(radius), int(points_per_axis), rule)
    if dim == 1:
        return QuadratureGrid(x, w, float(radius), 1, rule, axes=(x,))
    mesh = np.meshgrid(*([x] * dim), indexing="ij")
    nodes = np.column_stack([m.ravel() for m in mesh])
    wmesh = np.meshgrid(*([w] * dim), indexing="ij")
    weights = np.ones(total)
    for wm in wmesh:
        weights = weights * wm.ravel()
    return QuadratureGrid(nodes, weights, float(radius), dim, rule,
                          axes=tuple([x] * dim))


def integrate(f: GridFunction) -> float:
    """Weighted sum sum_i w_i f(x_i).

    Uses numpy's pairwise summation, which is deterministic for a fixed
    node order; callers must not reorder nodes between runs.
    """
    bad = np.flatnonzero(~np.isfinite(f.values))
    if bad.size:
        raise GridError(f"non-finite value at node index {int(bad[0])}")
    return float(np.sum(f.grid.weights * f.values))
