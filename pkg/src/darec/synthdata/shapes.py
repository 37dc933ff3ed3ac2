"""Procedural shape families built from unions of boxes and cylinders.

Shapes are generated directly in cell coordinates so that parts meant to
touch share a face after discretization. Axis 1 (y) points up; chair backs
sit at low z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError
from ..geometry import VoxelGrid, sample_isosurface

CATEGORIES = ("chair-like", "table-like", "block", "cylinder-union")


@dataclass(frozen=True)
class ShapeConfig:
    resolution: int = 32
    n_points: int = 2500


def _box(r, lo, hi):
    m = np.zeros((r, r, r), dtype=bool)
    lo = [max(0, int(v)) for v in lo]
    hi = [min(r, int(v)) for v in hi]
    m[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] = True
    return m


def _cylinder(r, axis, center, radius, lo, hi):
    """Cells whose centres lie within ``radius`` (in cells) of an axis-aligned line."""
    idx = np.arange(r) + 0.5
    grids = np.meshgrid(idx, idx, idx, indexing="ij")
    others = [a for a in range(3) if a != axis]
    d2 = (grids[others[0]] - center[0]) ** 2 + (grids[others[1]] - center[1]) ** 2
    along = grids[axis]
    return (d2 <= radius**2) & (along >= lo) & (along < hi)


def _chair(rng, r):
    c = lambda f: int(round(f * r))  # noqa: E731
    hw, hd = rng.uniform(0.2, 0.3), rng.uniform(0.2, 0.3)
    x0, x1 = c(0.5 - hw), c(0.5 + hw)
    z0, z1 = c(0.5 - hd), c(0.5 + hd)
    floor = c(0.1)
    seat0 = floor + max(2, c(rng.uniform(0.22, 0.35)))
    seat1 = seat0 + max(1, c(rng.uniform(0.06, 0.1)))
    lt = max(1, c(rng.uniform(0.06, 0.1)))
    bt = max(1, c(rng.uniform(0.06, 0.1)))
    top = min(r - c(0.05), seat1 + max(2, c(rng.uniform(0.25, 0.4))))
    parts = [_box(r, (x0, seat0, z0), (x1, seat1, z1))]
    for xa, xb in ((x0, x0 + lt), (x1 - lt, x1)):
        for za, zb in ((z0, z0 + lt), (z1 - lt, z1)):
            parts.append(_box(r, (xa, floor, za), (xb, seat0, zb)))
    parts.append(_box(r, (x0, seat1, z0), (x1, top, z0 + bt)))
    if rng.random() < 0.5:
        arm_y = min(top - 1, seat1 + max(1, c(rng.uniform(0.1, 0.16))))
        for xa, xb in ((x0, x0 + lt), (x1 - lt, x1)):
            parts.append(_box(r, (xa, arm_y, z0), (xb, arm_y + 1, z1)))
            parts.append(_box(r, (xa, seat1, z1 - lt), (xb, arm_y, z1)))
    return parts


def _table(rng, r):
    c = lambda f: int(round(f * r))  # noqa: E731
    hw, hd = rng.uniform(0.28, 0.38), rng.uniform(0.2, 0.35)
    x0, x1 = c(0.5 - hw), c(0.5 + hw)
    z0, z1 = c(0.5 - hd), c(0.5 + hd)
    floor = c(0.15)
    top0 = floor + max(2, c(rng.uniform(0.3, 0.5)))
    top1 = top0 + max(1, c(rng.uniform(0.06, 0.1)))
    lt = max(1, c(rng.uniform(0.06, 0.1)))
    inset = c(rng.uniform(0.0, 0.05))
    parts = [_box(r, (x0, top0, z0), (x1, top1, z1))]
    for xa in (x0 + inset, x1 - inset - lt):
        for za in (z0 + inset, z1 - inset - lt):
            parts.append(_box(r, (xa, floor, za), (xa + lt, top0, za + lt)))
    return parts


def block_extents(rng, r):
    lo, hi = max(1, int(round(0.25 * r))), max(2, int(round(0.7 * r)))
    return [int(rng.integers(lo, hi + 1)) for _ in range(3)]


def _block(rng, r):
    ext = block_extents(rng, r)
    lo = [(r - e) // 2 for e in ext]
    return [_box(r, lo, [a + e for a, e in zip(lo, ext)])]


def _cylinder_union(rng, r):
    cx, cz = r / 2, r / 2
    radius = rng.uniform(0.12, 0.22) * r
    y0 = round(0.15 * r)
    y1 = y0 + max(2, round(rng.uniform(0.35, 0.65) * r))
    parts = [_cylinder(r, 1, (cx, cz), radius, y0, y1)]
    for _ in range(int(rng.integers(1, 3))):
        axis = int(rng.choice([0, 2]))
        y = rng.uniform(y0 + 1, y1 - 1)
        half = rng.uniform(0.2, 0.38) * r
        rad = max(0.75, rng.uniform(0.07, 0.13) * r)
        centre = (y, cz) if axis == 0 else (cx, y)
        mid = cx if axis == 0 else cz
        parts.append(_cylinder(r, axis, centre, rad, mid - half, mid + half))
    return parts


_BUILDERS = {
    "chair-like": _chair,
    "table-like": _table,
    "block": _block,
    "cylinder-union": _cylinder_union,
}


def generate_parts(category: str, params_seed: int, resolution: int = 32):
    """Boolean masks of the primitives making up one instance."""
    if category not in _BUILDERS:
        raise InvalidInputError(
            f"unknown category {category!r}; expected one of {', '.join(CATEGORIES)}"
        )
    if resolution < 8:
        raise InvalidInputError("procedural shapes need resolution >= 8")
    rng = np.random.default_rng([params_seed, CATEGORIES.index(category)])
    return _BUILDERS[category](rng, resolution)


def generate_voxels(category: str, params_seed: int, resolution: int = 32) -> np.ndarray:
    parts = generate_parts(category, params_seed, resolution)
    return np.logical_or.reduce(parts).astype(np.float64)


def generate_shape(category: str, params_seed: int, cfg: ShapeConfig = ShapeConfig()):
    """Return a consistent ``(VoxelGrid, PointCloud)`` pair for one instance."""
    vox = VoxelGrid(generate_voxels(category, params_seed, cfg.resolution))
    cloud = sample_isosurface(vox, 0.5, cfg.n_points, seed=params_seed)
    return vox, cloud


def mirror_x(values: np.ndarray) -> np.ndarray:
    return values[::-1, :, :]


def is_mirror_symmetric(values: np.ndarray) -> bool:
    return bool(np.array_equal(values, mirror_x(values)))

