"""Voxel and point-cloud representations, metrics and file formats.

All geometry lives in a canonical frame: a voxel grid of resolution ``r``
spans the cube [-1, 1]^3 and cell ``(i, j, k)`` covers
``[-1 + i*h, -1 + (i+1)*h]`` along x (and likewise for y, z) with
``h = 2 / r``. Arrays are indexed ``values[i, j, k]``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyShapeError, InvalidInputError

DEFAULT_THRESHOLD = 0.5
DEFAULT_N_POINTS = 2500

VOXEL_MAGIC = b"DVOX"
VOXEL_VERSION = 1
KIND_BINARY = 0
KIND_FLOAT32 = 1

# (axis, side) for the six face directions; side 0 is the low face.
FACE_DIRECTIONS = [(a, s) for a in range(3) for s in (0, 1)]


@dataclass(frozen=True)
class VoxelGrid:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or len(set(v.shape)) != 1:
            raise InvalidInputError(f"voxel grid must be cubic, got shape {v.shape}")
        if v.shape[0] < 2:
            raise InvalidInputError("voxel resolution must be >= 2")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise InvalidInputError("voxel values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.values == 0.0) | (self.values == 1.0)))

    def binarize(self, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
        return self.values >= threshold

    def occupied_count(self, threshold: float = DEFAULT_THRESHOLD) -> int:
        return int(self.binarize(threshold).sum())


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 3:
            raise InvalidInputError(f"point cloud must be (n, 3), got {p.shape}")
        if p.shape[0] < 1:
            raise InvalidInputError("point cloud must contain at least one point")
        if not np.all(np.isfinite(p)):
            raise InvalidInputError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", p)

    @property
    def count(self) -> int:
        return self.points.shape[0]


VoxelLike = Union[VoxelGrid, np.ndarray]
CloudLike = Union[PointCloud, np.ndarray]


def as_voxels(v: VoxelLike) -> VoxelGrid:
    return v if isinstance(v, VoxelGrid) else VoxelGrid(v)


def as_points(p: CloudLike) -> np.ndarray:
    if isinstance(p, PointCloud):
        return p.points
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        raise InvalidInputError(f"point cloud must be (n, 3), got {p.shape}")
    if p.shape[0] == 0:
        raise InvalidInputError("empty point cloud")
    if not np.all(np.isfinite(p)):
        raise InvalidInputError("point cloud contains non-finite coordinates")
    return p


# --------------------------------------------------------------------------
# metrics


def nearest_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Euclidean distance from every point of ``src`` to its nearest point in ``dst``."""
    d, _ = cKDTree(dst).query(src, k=1)
    return d


def chamfer_distance(p1: CloudLike, p2: CloudLike, squared: bool = False) -> float:
    """Symmetric mean nearest-neighbour distance between two point sets.

    Distances are plain Euclidean norms; ``squared=True`` switches to the
    squared variant found in some codebases and is never the default.
    """
    a = as_points(p1)
    b = as_points(p2)
    d_ab = nearest_distances(a, b)
    d_ba = nearest_distances(b, a)
    if squared:
        d_ab, d_ba = d_ab**2, d_ba**2
    return float(d_ab.mean() + d_ba.mean())


def voxel_iou(a: VoxelLike, b: VoxelLike, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Intersection over union of two grids binarized at ``threshold``.

    Two grids that are both empty after binarization have IoU 1.0.
    """
    if not 0.0 < threshold < 1.0:
        raise InvalidInputError("threshold must lie in (0, 1)")
    ga, gb = as_voxels(a), as_voxels(b)
    if ga.resolution != gb.resolution:
        raise InvalidInputError(
            f"resolution mismatch: {ga.resolution} vs {gb.resolution}"
        )
    ba, bb = ga.binarize(threshold), gb.binarize(threshold)
    union = np.count_nonzero(ba | bb)
    if union == 0:
        return 1.0
    return np.count_nonzero(ba & bb) / union


# --------------------------------------------------------------------------
# isosurface sampling


def exposed_faces(occ: np.ndarray) -> np.ndarray:
    """Return an (m, 5) int array of exposed faces ``(i, j, k, axis, side)``.

    A face is exposed when its cell is occupied and the neighbour across it
    is empty or outside the grid.
    """
    occ = np.asarray(occ, dtype=bool)
    padded = np.pad(occ, 1, constant_values=False)
    r = occ.shape[0]
    out = []
    for axis, side in FACE_DIRECTIONS:
        offset = [1, 1, 1]
        offset[axis] += 1 if side else -1
        neighbour = padded[
            offset[0] : offset[0] + r, offset[1] : offset[1] + r, offset[2] : offset[2] + r
        ]
        idx = np.argwhere(occ & ~neighbour)
        if len(idx):
            tag = np.tile([axis, side], (len(idx), 1))
            out.append(np.hstack([idx, tag]))
    if not out:
        return np.zeros((0, 5), dtype=np.int64)
    return np.vstack(out).astype(np.int64)


def face_area(resolution: int) -> float:
    return (2.0 / resolution) ** 2


def mean_sample_spacing(occ: np.ndarray, n_points: int) -> float:
    """Typical distance between neighbouring samples on the exposed surface."""
    area = len(exposed_faces(occ)) * face_area(occ.shape[0])
    return float(np.sqrt(area / n_points))


def sample_isosurface(
    v: VoxelLike,
    threshold: float = DEFAULT_THRESHOLD,
    n_points: int = DEFAULT_N_POINTS,
    seed: int = 0,
) -> PointCloud:
    """Sample points uniformly over the exposed faces of a binarized grid."""
    if n_points < 1:
        raise InvalidInputError("n_points must be positive")
    grid = as_voxels(v)
    faces = exposed_faces(grid.binarize(threshold))
    if len(faces) == 0:
        raise EmptyShapeError("cannot sample the isosurface of an empty grid")
    return PointCloud(_sample_faces(faces, grid.resolution, n_points, seed))


def _sample_faces(faces: np.ndarray, resolution: int, n_points: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    h = 2.0 / resolution
    chosen = faces[rng.integers(0, len(faces), size=n_points)]
    uv = rng.random((n_points, 2))
    cells = chosen[:, :3].astype(np.float64)
    axis = chosen[:, 3]
    side = chosen[:, 4]
    pts = np.empty((n_points, 3))
    for a in range(3):
        mask = axis == a
        if not mask.any():
            continue
        others = [b for b in range(3) if b != a]
        pts[mask, a] = cells[mask, a] + side[mask]
        pts[mask, others[0]] = cells[mask, others[0]] + uv[mask, 0]
        pts[mask, others[1]] = cells[mask, others[1]] + uv[mask, 1]
    return np.clip(-1.0 + pts * h, -1.0, 1.0)


def cell_centers(resolution: int) -> np.ndarray:
    h = 2.0 / resolution
    return -1.0 + (np.arange(resolution) + 0.5) * h


def voxelize_points(points: CloudLike, resolution: int) -> np.ndarray:
    """Occupancy grid of the cells containing at least one point."""
    p = as_points(points)
    idx = np.floor((p + 1.0) / 2.0 * resolution).astype(np.int64)
    idx = np.clip(idx, 0, resolution - 1)
    grid = np.zeros((resolution,) * 3, dtype=np.float64)
    grid[idx[:, 0], idx[:, 1], idx[:, 2]] = 1.0
    return grid


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvalConfig:
    threshold: float = DEFAULT_THRESHOLD
    n_points: int = DEFAULT_N_POINTS
    seed: int = 0
    convert_voxels: bool = True
    squared: bool = False


@dataclass
class MetricReport:
    ids: list = field(default_factory=list)
    iou: Optional[list] = None
    chamfer: list = field(default_factory=list)
    checkpoint: Optional[str] = None

    @property
    def mean_chamfer(self) -> float:
        return float(np.mean(self.chamfer)) if self.chamfer else float("nan")

    @property
    def mean_iou(self) -> Optional[float]:
        if self.iou is None:
            return None
        return float(np.mean(self.iou)) if self.iou else float("nan")

    def __len__(self):
        return len(self.chamfer)

    def extend(self, other: "MetricReport") -> None:
        self.ids.extend(other.ids)
        self.chamfer.extend(other.chamfer)
        if other.iou is not None:
            self.iou = (self.iou or []) + list(other.iou)

    def to_dict(self) -> dict:
        return {
            "checkpoint": self.checkpoint,
            "n": len(self),
            "mean_iou": self.mean_iou,
            "mean_chamfer": self.mean_chamfer,
            "ids": list(self.ids),
            "iou": None if self.iou is None else [float(x) for x in self.iou],
            "chamfer": [float(x) for x in self.chamfer],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(ids=list(d["ids"]), iou=d["iou"], chamfer=list(d["chamfer"]),
                   checkpoint=d.get("checkpoint"))


def _is_voxels(x) -> bool:
    if isinstance(x, VoxelGrid):
        return True
    if isinstance(x, PointCloud):
        return False
    return np.asarray(x).ndim == 3


def evaluate_pair(pred, gt, cfg: Optional[EvalConfig] = None, sample_id=None) -> MetricReport:
    """IoU (voxels only) and Chamfer distance for one prediction/target pair."""
    cfg = cfg or EvalConfig()
    pv, gv = _is_voxels(pred), _is_voxels(gt)
    iou = None
    if pv and gv:
        iou = [voxel_iou(pred, gt, cfg.threshold)]
    elif pv != gv and not cfg.convert_voxels:
        raise InvalidInputError("cannot compare a voxel grid with a point cloud")

    def to_cloud(x, is_vox):
        if is_vox:
            if not cfg.convert_voxels:
                raise InvalidInputError("voxel to point-cloud conversion disabled")
            return sample_isosurface(x, cfg.threshold, cfg.n_points, cfg.seed).points
        return as_points(x)

    cd = chamfer_distance(to_cloud(pred, pv), to_cloud(gt, gv), squared=cfg.squared)
    return MetricReport(ids=[sample_id], iou=iou, chamfer=[cd])


# --------------------------------------------------------------------------
# file formats


def write_voxels(path: Union[str, Path], v: VoxelLike, binary: Optional[bool] = None) -> None:
    """Write a grid as DVOX: 16-byte little-endian header, then an x-fastest payload.

    Binary grids are bit-packed (little bit order); anything else is float32.
    """
    grid = as_voxels(v)
    if binary is None:
        binary = grid.is_binary
    kind = KIND_BINARY if binary else KIND_FLOAT32
    flat = grid.values.ravel(order="F")
    if binary:
        payload = np.packbits(flat >= 0.5, bitorder="little").tobytes()
    else:
        payload = flat.astype("<f4").tobytes()
    header = VOXEL_MAGIC + struct.pack("<III", VOXEL_VERSION, grid.resolution, kind)
    Path(path).write_bytes(header + payload)


def read_voxels(path: Union[str, Path]) -> VoxelGrid:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != VOXEL_MAGIC:
        raise InvalidInputError(f"{path}: not a DVOX file")
    version, res, kind = struct.unpack("<III", data[4:16])
    if version != VOXEL_VERSION:
        raise InvalidInputError(f"{path}: unsupported DVOX version {version}")
    n = res**3
    body = data[16:]
    if kind == KIND_BINARY:
        bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8), bitorder="little")
        if len(bits) < n:
            raise InvalidInputError(f"{path}: truncated payload")
        flat = bits[:n].astype(np.float64)
    elif kind == KIND_FLOAT32:
        if len(body) < 4 * n:
            raise InvalidInputError(f"{path}: truncated payload")
        flat = np.frombuffer(body[: 4 * n], dtype="<f4").astype(np.float64)
    else:
        raise InvalidInputError(f"{path}: unknown value kind {kind}")
    return VoxelGrid(flat.reshape((res,) * 3, order="F"))


def write_points(path: Union[str, Path], p: CloudLike, comment: Optional[str] = None) -> None:
    pts = as_points(p)
    lines = [f"# {comment}"] if comment else []
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in pts.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_points(path: Union[str, Path]) -> PointCloud:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise InvalidInputError(f"{path}:{lineno}: expected 'x y z'")
        rows.append([float(t) for t in parts])
    if not rows:
        raise InvalidInputError(f"{path}: no points")
    return PointCloud(np.array(rows))


def stack_reports(reports: Sequence[MetricReport], checkpoint=None) -> MetricReport:
    out = MetricReport(checkpoint=checkpoint)
    for r in reports:
        out.extend(r)
    return out
