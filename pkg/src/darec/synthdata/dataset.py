"""Dataset specification, in-memory generation and on-disk persistence."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator, Optional, Protocol

import numpy as np
from PIL import Image

from ..errors import ConfigError, InvalidInputError
from ..geometry import read_points, read_voxels, sample_isosurface, write_points, write_voxels
from .naturalize import NaturalizeConfig, naturalize
from .render import Domain, ImageSample, RenderConfig, View, render
from .shapes import CATEGORIES, generate_voxels

MANIFEST = "manifest.jsonl"
SPEC_FILE = "dataset.json"


@dataclass
class DatasetSpec:
    n_rendered: int = 500
    n_natural: int = 500
    categories: tuple = CATEGORIES
    seed: int = 0
    test_fraction: float = 0.2
    resolution: int = 16
    image_size: int = 64
    n_points: int = 2500
    azimuth_range: tuple = (0.0, 360.0)
    elevation_range: tuple = (10.0, 40.0)
    natural_elevation_range: Optional[tuple] = None
    naturalize: NaturalizeConfig = field(default_factory=NaturalizeConfig)

    def validate(self) -> None:
        if self.n_rendered < 2 or self.n_natural < 2:
            raise ConfigError("need at least two rendered and two natural samples")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        bad = [c for c in self.categories if c not in CATEGORIES]
        if bad or not self.categories:
            raise ConfigError(f"unknown categories {bad}")
        lo, hi = self.azimuth_range
        if not 0.0 <= lo < hi <= 360.0:
            raise ConfigError("azimuth_range must lie within [0, 360)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["categories"] = list(self.categories)
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown dataset keys: {sorted(unknown)}")
        d = dict(d)
        nat = d.pop("naturalize", {}) or {}
        nat_known = {f.name for f in fields(NaturalizeConfig)}
        if set(nat) - nat_known:
            raise ConfigError(f"unknown naturalize keys: {sorted(set(nat) - nat_known)}")
        nat = {k: tuple(v) if isinstance(v, list) else v for k, v in nat.items()}
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        spec = cls(**d, naturalize=NaturalizeConfig(**nat))
        spec.validate()
        return spec

    def render_config(self) -> RenderConfig:
        lo = min(self.elevation_range[0], (self.natural_elevation_range or self.elevation_range)[0])
        hi = max(self.elevation_range[1], (self.natural_elevation_range or self.elevation_range)[1])
        return RenderConfig(image_size=self.image_size, elevation_range=(lo, hi))


@dataclass
class ShapeImageDataset:
    """Manifest rows plus the decoded arrays they point to."""

    records: list
    images: np.ndarray  # (N, 3, H, W) uint8
    shapes: dict  # shape_id -> (voxels uint8 (r,r,r), points float64 (n,3))
    spec: Optional[DatasetSpec] = None

    def indices(self, domain=None, split=None) -> list:
        out = []
        for i, rec in enumerate(self.records):
            if domain is not None and rec["domain"] != Domain(domain).value:
                continue
            if split is not None and rec["split"] != split:
                continue
            out.append(i)
        return out

    def image_floats(self, idx) -> np.ndarray:
        return self.images[idx].astype(np.float32) / 255.0

    def voxels_for(self, idx) -> np.ndarray:
        return np.stack([self.shapes[self.records[i]["shape_id"]][0] for i in idx])

    def points_for(self, idx) -> np.ndarray:
        return np.stack([self.shapes[self.records[i]["shape_id"]][1] for i in idx])

    def sample(self, i: int) -> ImageSample:
        rec = self.records[i]
        labeled = rec["shape_path"] is not None
        return ImageSample(
            pixels=self.image_floats(i),
            domain=Domain(rec["domain"]),
            category=rec["category"],
            shape_ref=rec["shape_id"] if labeled else None,
            view=View(**rec["view"]),
        )

    @property
    def resolution(self) -> int:
        return next(iter(self.shapes.values()))[0].shape[0]


class DatasetAdapter(Protocol):
    """Interface for external image/shape collections.

    An adapter yields ``(ImageSample, voxels | None, points | None)`` triples;
    no loaders for public datasets are shipped.
    """

    def __iter__(self) -> Iterator[tuple]:
        ...


def _quantize(pixels: np.ndarray) -> np.ndarray:
    return np.round(np.clip(pixels, 0, 1) * 255).astype(np.uint8)


def _plan(spec: DatasetSpec):
    """Per-sample generation parameters, derived from the spec seed only."""
    rng = np.random.default_rng(spec.seed)
    nat_elev = spec.natural_elevation_range or spec.elevation_range
    plans = []
    n_test_r = max(1, int(round(spec.n_rendered * spec.test_fraction)))
    n_test_n = max(1, int(round(spec.n_natural * spec.test_fraction)))
    for domain, n, n_test, prefix, shape_prefix, elev in (
        (Domain.RENDERED, spec.n_rendered, n_test_r, "r", "s", spec.elevation_range),
        (Domain.NATURAL, spec.n_natural, n_test_n, "n", "t", nat_elev),
    ):
        for i in range(n):
            plans.append({
                "id": f"{prefix}{i:05d}",
                "shape_id": f"{shape_prefix}{i:05d}",
                "domain": domain.value,
                "split": "test" if i >= n - n_test else "train",
                "category": spec.categories[int(rng.integers(len(spec.categories)))],
                "params_seed": int(rng.integers(2**31)),
                "natural_seed": int(rng.integers(2**31)),
                "view": {
                    "azimuth": round(float(rng.uniform(*spec.azimuth_range)) % 360.0, 4),
                    "elevation": round(float(rng.uniform(*elev)), 4),
                },
            })
    return plans


def generate_dataset(spec: DatasetSpec) -> ShapeImageDataset:
    """Generate every sample in memory; identical to what ``build_dataset`` writes."""
    spec.validate()
    rcfg = spec.render_config()
    records, images, shapes = [], [], {}
    for p in _plan(spec):
        vox = generate_voxels(p["category"], p["params_seed"], spec.resolution)
        img = render(vox, View(**p["view"]), rcfg, category=p["category"], shape_ref=p["shape_id"])
        img.pixels = _quantize(img.pixels).astype(np.float32) / 255.0
        labeled = p["domain"] == Domain.RENDERED.value or p["split"] == "test"
        if p["domain"] == Domain.NATURAL.value:
            img = naturalize(img, p["natural_seed"], spec.naturalize)
        images.append(_quantize(img.pixels))
        shape_path = None
        if labeled:
            pts = sample_isosurface(vox, 0.5, spec.n_points, seed=p["params_seed"]).points
            shapes[p["shape_id"]] = (vox.astype(np.uint8), pts)
            shape_path = f"shapes/{p['shape_id']}.dvox"
        records.append({
            "id": p["id"],
            "domain": p["domain"],
            "split": p["split"],
            "category": p["category"],
            "image_path": f"images/{p['id']}.png",
            "shape_path": shape_path,
            "shape_id": p["shape_id"] if labeled else None,
            "view": p["view"],
        })
    return ShapeImageDataset(records, np.stack(images), shapes, spec)


def manifest_line(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True)


def build_dataset(spec: DatasetSpec, out_dir) -> ShapeImageDataset:
    """Generate and persist: PNG images, DVOX + ASCII point files, JSON-lines manifest."""
    ds = generate_dataset(spec)
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "shapes").mkdir(parents=True, exist_ok=True)
    for rec, img in zip(ds.records, ds.images):
        Image.fromarray(img.transpose(1, 2, 0)).save(out / rec["image_path"])
    for sid, (vox, pts) in ds.shapes.items():
        write_voxels(out / "shapes" / f"{sid}.dvox", vox, binary=True)
        write_points(out / "shapes" / f"{sid}.xyz", pts)
    with open(out / MANIFEST, "w") as fh:
        for rec in ds.records:
            fh.write(manifest_line(rec) + "\n")
    (out / SPEC_FILE).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return ds


def read_manifest(path) -> list:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def load_dataset(root) -> ShapeImageDataset:
    root = Path(root)
    if not (root / MANIFEST).exists():
        raise InvalidInputError(f"{root}: no {MANIFEST}")
    records = read_manifest(root)
    images = np.stack([
        np.asarray(Image.open(root / r["image_path"]).convert("RGB")).transpose(2, 0, 1)
        for r in records
    ])
    shapes = {}
    for r in records:
        if r["shape_path"] is None or r["shape_id"] in shapes:
            continue
        vox = read_voxels(root / r["shape_path"]).values.astype(np.uint8)
        pts = read_points(root / r["shape_path"].replace(".dvox", ".xyz")).points
        shapes[r["shape_id"]] = (vox, pts)
    spec = None
    if (root / SPEC_FILE).exists():
        spec = DatasetSpec.from_dict(json.loads((root / SPEC_FILE).read_text()))
    return ShapeImageDataset(records, images, shapes, spec)
