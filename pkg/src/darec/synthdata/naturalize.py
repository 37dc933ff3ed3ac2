"""Perturb clean renders into a synthetic "natural" image domain."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from ..errors import InvalidInputError
from .render import Domain, ImageSample

TEXTURES = ("noise", "stripes", "checker", "gradient")


@dataclass(frozen=True)
class NaturalizeConfig:
    texture_strength: float = 1.0
    textures: tuple = TEXTURES
    jitter: float = 0.3  # per-channel gain range on the object
    brightness: float = 0.15
    noise_std: float = 0.04
    blur_sigma: tuple = (0.3, 0.9)
    crop_min: float = 0.85  # smallest crop side as a fraction of the image

    @classmethod
    def identity(cls) -> "NaturalizeConfig":
        """Only replace the background with a flat colour."""
        return cls(texture_strength=0.0, jitter=0.0, brightness=0.0, noise_std=0.0,
                   blur_sigma=(0.0, 0.0), crop_min=1.0)


def background_texture(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    c1, c2 = rng.uniform(0.05, 0.95, 3), rng.uniform(0.05, 0.95, 3)
    yy, xx = np.mgrid[0:size, 0:size] / size
    if kind == "noise":
        field = gaussian_filter(rng.standard_normal((size, size)), sigma=size / rng.uniform(6, 16))
        field = (field - field.min()) / (np.ptp(field) + 1e-12)
    elif kind == "stripes":
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(3, 9)
        field = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy))
    elif kind == "checker":
        n = int(rng.integers(3, 9))
        field = ((np.floor(xx * n) + np.floor(yy * n)) % 2).astype(float)
    elif kind == "gradient":
        theta = rng.uniform(0, 2 * np.pi)
        field = np.cos(theta) * xx + np.sin(theta) * yy
        field = (field - field.min()) / (np.ptp(field) + 1e-12)
    else:
        raise InvalidInputError(f"unknown texture {kind!r}")
    return c1[:, None, None] * (1 - field) + c2[:, None, None] * field


def _resize(chw: np.ndarray, size: int) -> np.ndarray:
    return np.stack(
        [np.asarray(Image.fromarray(ch.astype(np.float32), mode="F").resize(
            (size, size), Image.BILINEAR)) for ch in chw]
    )


def naturalize(img: ImageSample, seed: int, cfg: NaturalizeConfig = NaturalizeConfig()) -> ImageSample:
    """Turn a RENDERED sample into an unlabeled NATURAL one."""
    if img.domain != Domain.RENDERED:
        raise InvalidInputError("naturalize expects a RENDERED image")
    if img.mask is None:
        raise InvalidInputError("naturalize needs the render silhouette")
    rng = np.random.default_rng(seed)
    x = np.asarray(img.pixels, dtype=np.float64)
    size = x.shape[1]
    mask = img.mask.astype(np.float64)[None]

    flat = rng.uniform(0.05, 0.95, 3)[:, None, None] * np.ones_like(x)
    kind = cfg.textures[int(rng.integers(len(cfg.textures)))]
    tex = background_texture(kind, size, rng)
    bg = (1 - cfg.texture_strength) * flat + cfg.texture_strength * tex

    gain = 1 + rng.uniform(-cfg.jitter, cfg.jitter, 3)[:, None, None]
    offset = rng.uniform(-cfg.brightness, cfg.brightness)
    obj = x * gain + offset
    out = mask * obj + (1 - mask) * bg

    if cfg.noise_std > 0:
        out = out + rng.normal(0.0, cfg.noise_std, out.shape)
    sigma = rng.uniform(*cfg.blur_sigma)
    if sigma > 0:
        out = gaussian_filter(out, sigma=(0, sigma, sigma))
    if cfg.crop_min < 1.0:
        side = int(round(size * rng.uniform(cfg.crop_min, 1.0)))
        y0 = int(rng.integers(0, size - side + 1))
        x0 = int(rng.integers(0, size - side + 1))
        if side != size:
            out = _resize(out[:, y0 : y0 + side, x0 : x0 + side], size)
    return replace(
        img,
        pixels=np.clip(out, 0.0, 1.0).astype(np.float32),
        domain=Domain.NATURAL,
        shape_ref=None,
        mask=None,
    )
