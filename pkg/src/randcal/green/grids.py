"""Uniform Dirichlet grids in one and two dimensions.

Coefficient fields live on the closed lattice (boundary nodes included) so
that face averages next to the boundary are well defined; operators act on
the interior unknowns with zero exterior values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Interior shape per axis; spacing is h = 1/(shape[0]+1)."""

    shape: Tuple[int, ...]

    def __post_init__(self):
        shape = tuple(int(s) for s in (self.shape if isinstance(self.shape, tuple)
                                       else tuple(self.shape)))
        if len(shape) not in (1, 2) or any(s < 1 for s in shape):
            raise ValueError(f"invalid grid shape {shape}")
        object.__setattr__(self, "shape", shape)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def h(self) -> float:
        return 1.0 / (self.shape[0] + 1)

    @property
    def closed_shape(self) -> Tuple[int, ...]:
        return tuple(s + 2 for s in self.shape)

    @property
    def n_interior(self) -> int:
        out = 1
        for s in self.shape:
            out *= s
        return out

    def axis_coords(self, axis: int) -> np.ndarray:
        """Closed-lattice coordinates along one axis."""
        return self.h * np.arange(self.shape[axis] + 2)

    def interior_mesh(self) -> Tuple[np.ndarray, ...]:
        axes = [self.axis_coords(a)[1:-1] for a in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def closed_mesh(self) -> Tuple[np.ndarray, ...]:
        axes = [self.axis_coords(a) for a in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def interior_of(self, field: np.ndarray) -> np.ndarray:
        self.check_field(field)
        sl = tuple(slice(1, -1) for _ in range(self.dim))
        return field[sl]

    def flatten_interior(self, field: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(self.interior_of(field)).reshape(-1)

    def check_field(self, field: np.ndarray) -> None:
        if field.shape != self.closed_shape:
            raise ValueError(
                f"field shape {field.shape} does not match closed lattice "
                f"{self.closed_shape}")

    def index_coords(self, idx: Sequence[int]) -> Tuple[float, ...]:
        """Coordinates of a closed-lattice index."""
        idx = tuple(int(i) for i in (idx if isinstance(idx, (tuple, list)) else (idx,)))
        if len(idx) != self.dim:
            raise ValueError("index dimensionality mismatch")
        for i, s in zip(idx, self.closed_shape):
            if not (0 <= i < s):
                raise ValueError(f"index {idx} outside closed lattice")
        return tuple(i * self.h for i in idx)

    def boundary_distance(self, idx: Sequence[int]) -> float:
        """Distance from a closed-lattice node to the nearest boundary face."""
        idx = tuple(int(i) for i in (idx if isinstance(idx, (tuple, list)) else (idx,)))
        d = min(min(i, s - 1 - i) for i, s in zip(idx, self.closed_shape))
        return d * self.h


def field_from_function(grid: Grid, fn: Callable) -> np.ndarray:
    mesh = grid.closed_mesh()
    return np.asarray(fn(*mesh), dtype=float)


def constant_field(grid: Grid, value: float) -> np.ndarray:
    return np.full(grid.closed_shape, float(value))


def bump_field(grid: Grid, center: Sequence[float], radius: float,
               height: float, base: float = 0.0) -> np.ndarray:
    """C^2 compactly supported bump: base + height * (1 - (d/radius)^2)^3."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    mesh = grid.closed_mesh()
    d2 = sum((m - c) ** 2 for m, c in zip(mesh, center))
    s2 = np.clip(d2 / radius**2, 0.0, 1.0)
    return base + height * (1.0 - s2) ** 3
