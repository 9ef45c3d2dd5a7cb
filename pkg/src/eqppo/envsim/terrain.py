"""Uneven-terrain generation: a dense grid of square boxes with one shared
side length per episode and i.i.d. uniform heights.

The grid is allocated at the cell count needed by the smallest legal side
length and always fully sampled, so the number of RNG draws per episode is
independent of the sampled side length (keeps seeded runs comparable across
difficulty levels).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

MIN_HEIGHT = 1e-4               # lower bound of every box height [m]
SIDE_BOUNDS = (0.3, 0.5)        # per-episode box side length range [m]
FIELD_X = (-2.0, 18.0)          # covered ground area [m]
FIELD_Y = (-3.0, 3.0)


@dataclass
class TerrainField:
    """One episode's terrain: square boxes of a single ``side`` length tiled
    densely from (FIELD_X[0], FIELD_Y[0]), heights in [MIN_HEIGHT, h_max]."""

    side: float
    heights: np.ndarray        # (n_x, n_y), only the cells covering the field are used
    h_max: float

    def cell_index(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ix = np.clip(((np.asarray(x) - FIELD_X[0]) // self.side).astype(int),
                     0, self.heights.shape[0] - 1)
        iy = np.clip(((np.asarray(y) - FIELD_Y[0]) // self.side).astype(int),
                     0, self.heights.shape[1] - 1)
        return ix, iy

    def height_at(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        ix, iy = self.cell_index(x, y)
        return self.heights[ix, iy]

    def local_roughness(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Standard deviation of box heights in the 3x3 neighborhood around
        the cell under (x, y) — the local height variance proxy driving
        drag, stumbles, and attitude excitation."""
        ix, iy = self.cell_index(x, y)
        ix = np.atleast_1d(ix)
        iy = np.atleast_1d(iy)
        out = np.empty(ix.shape)
        nx, ny = self.heights.shape
        for k in range(ix.size):
            sl = self.heights[max(ix.flat[k] - 1, 0):min(ix.flat[k] + 2, nx),
                              max(iy.flat[k] - 1, 0):min(iy.flat[k] + 2, ny)]
            out.flat[k] = sl.std()
        return out if np.asarray(x).ndim else float(out[0])


def _grid_shape() -> tuple[int, int]:
    side_min = SIDE_BOUNDS[0]
    nx = int(np.ceil((FIELD_X[1] - FIELD_X[0]) / side_min))
    ny = int(np.ceil((FIELD_Y[1] - FIELD_Y[0]) / side_min))
    return nx, ny


def generate_terrain(rng: np.random.Generator, h_max: float,
                     side_bounds: tuple[float, float] = SIDE_BOUNDS,
                     side: float | None = None) -> TerrainField:
    """Sample one episode's terrain.

    ``side`` overrides the sampled side length (the evaluation protocol
    fixes it to 0.4 m) without changing the number of RNG draws.
    """
    if h_max < MIN_HEIGHT:
        raise ConfigError(f"h_max must be >= {MIN_HEIGHT}, got {h_max}")
    drawn = rng.uniform(*side_bounds)
    heights = rng.uniform(MIN_HEIGHT, h_max, size=_grid_shape())
    return TerrainField(side=side if side is not None else float(drawn),
                        heights=heights, h_max=h_max)
