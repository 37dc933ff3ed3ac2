"""Latent-space probes: embedding export, domain statistics, interpolation and arithmetic.

All functions are read-only with respect to the network; they run it in
inference mode and never touch parameters.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from PIL import Image
from scipy.stats import energy_distance

from .darec_net import DarecNet, Discriminator
from .errors import InvalidInputError
from .shape_prior import VOXEL
from .synthdata import Domain, ImageSample, ShapeImageDataset

NATURAL_SOURCE = "NATURAL-image"
RENDERED_SOURCE = "RENDERED-image"
SHAPE_SOURCE = "SHAPE-manifold"
SOURCES = (NATURAL_SOURCE, RENDERED_SOURCE, SHAPE_SOURCE)


@dataclass
class EmbeddingDump:
    ids: list
    sources: list
    vectors: np.ndarray  # (n, d_e) float32
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        if self.vectors.ndim != 2 or len(self.vectors) != len(self.ids) or len(self.ids) != len(self.sources):
            raise InvalidInputError("ids, sources and vectors must have matching lengths")
        bad = set(self.sources) - set(SOURCES)
        if bad:
            raise InvalidInputError(f"unknown embedding sources {sorted(bad)}")

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def select(self, source: str) -> np.ndarray:
        mask = np.array([s == source for s in self.sources], dtype=bool)
        return self.vectors[mask]

    def to_csv(self, path) -> None:
        """Header ``id,source,dim_0..dim_{d-1}``; floats written with full precision."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "source"] + [f"dim_{j}" for j in range(self.dim)])
            for i, s, v in zip(self.ids, self.sources, self.vectors):
                w.writerow([i, s] + [repr(float(x)) for x in v])

    @classmethod
    def from_csv(cls, path) -> "EmbeddingDump":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][:2] != ["id", "source"]:
            raise InvalidInputError(f"{path}: not an embedding dump")
        body = rows[1:]
        vecs = np.array([[float(x) for x in r[2:]] for r in body], dtype=np.float32)
        return cls([r[0] for r in body], [r[1] for r in body], vecs.reshape(len(body), len(rows[0]) - 2))


def _as_batch(images) -> torch.Tensor:
    if isinstance(images, ImageSample):
        images = images.pixels
    x = torch.as_tensor(np.asarray(images), dtype=torch.float32)
    return x.unsqueeze(0) if x.dim() == 3 else x


def embed_images(net: DarecNet, images, batch_size: int = 100) -> np.ndarray:
    x = _as_batch(images)
    was = net.training
    net.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(x), batch_size):
            out.append(net.embed(x[i : i + batch_size]))
    net.train(was)
    return torch.cat(out).numpy()


def encode_shapes(net: DarecNet, shapes, batch_size: int = 100) -> np.ndarray:
    s = torch.as_tensor(np.asarray(shapes), dtype=torch.float32)
    out = []
    with torch.no_grad():
        for i in range(0, len(s), batch_size):
            out.append(net.prior.encode(s[i : i + batch_size]))
    return torch.cat(out).numpy()


def export_embeddings(net: DarecNet, data: ShapeImageDataset, split: Optional[str] = None,
                      include_shapes: bool = True, config: Optional[dict] = None) -> EmbeddingDump:
    """Embed every image of ``data`` (optionally one split) and every distinct labeled shape."""
    ids, sources, vecs = [], [], []
    for domain, source in ((Domain.NATURAL, NATURAL_SOURCE), (Domain.RENDERED, RENDERED_SOURCE)):
        idx = data.indices(domain, split)
        if idx:
            vecs.append(embed_images(net, data.image_floats(np.asarray(idx))))
            ids += [data.records[i]["id"] for i in idx]
            sources += [source] * len(idx)
    if include_shapes:
        shape_ids = sorted({data.records[i]["shape_id"] for i in data.indices(Domain.RENDERED, split)})
        if shape_ids:
            key = 0 if net.kind == VOXEL else 1
            vecs.append(encode_shapes(net, np.stack([data.shapes[s][key] for s in shape_ids])))
            ids += shape_ids
            sources += [SHAPE_SOURCE] * len(shape_ids)
    if not vecs:
        raise InvalidInputError("nothing to embed")
    return EmbeddingDump(ids, sources, np.concatenate(vecs), config or {})


def mean_energy_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Energy distance between two samples, averaged over embedding dimensions."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1] or not len(a) or not len(b):
        raise InvalidInputError("expected two nonempty (n, d) samples of equal dimension")
    return float(np.mean([energy_distance(a[:, j], b[:, j]) for j in range(a.shape[1])]))


def probe_accuracy(train_a, train_b, test_a, test_b, seed: int = 0, width: int = 64,
                   epochs: int = 500, lr: float = 1e-3) -> float:
    """Train a fresh discriminator on frozen embeddings; return held-out accuracy.

    Features are standardized with statistics of the training rows.
    """
    tr = np.concatenate([train_a, train_b]).astype(np.float32)
    mu, sd = tr.mean(0), tr.std(0) + 1e-6

    def prep(x):
        return torch.as_tensor((np.asarray(x, dtype=np.float32) - mu) / sd)

    x = prep(tr)
    y = torch.cat([torch.zeros(len(train_a)), torch.ones(len(train_b))]).long()
    torch.manual_seed(seed)
    probe = Discriminator(x.shape[1], width)
    opt = torch.optim.Adam(probe.parameters(), lr=lr)
    for _ in range(epochs):
        opt.zero_grad()
        loss = torch.nn.functional.cross_entropy(probe(x), y)
        loss.backward()
        opt.step()
    with torch.no_grad():
        pa = probe(prep(test_a)).argmax(-1) == 0
        pb = probe(prep(test_b)).argmax(-1) == 1
    return float(torch.cat([pa, pb]).float().mean())


# --------------------------------------------------------------------------
# interpolation and arithmetic


def embed_one(net: DarecNet, x) -> torch.Tensor:
    was = net.training
    net.eval()
    with torch.no_grad():
        e = net.embed(_as_batch(x))[0]
    net.train(was)
    return e


def decode_code(net: DarecNet, e: torch.Tensor) -> torch.Tensor:
    with torch.no_grad():
        return net.decode(e.unsqueeze(0))[0]


def reconstruct(net: DarecNet, x) -> torch.Tensor:
    """Single-image reconstruction, the reference for the identities below."""
    return decode_code(net, embed_one(net, x))


def _slerp(a, b, t):
    na, nb = a.norm(), b.norm()
    cos = torch.clamp(torch.dot(a / na, b / nb), -1.0, 1.0)
    omega = torch.arccos(cos)
    if float(omega) < 1e-6:
        return a + t * (b - a)
    s = torch.sin(omega)
    return (torch.sin((1 - t) * omega) / s) * a + (torch.sin(t * omega) / s) * b


def interpolate(net: DarecNet, x_a, x_b, steps: int, spherical: bool = False):
    """Decode ``steps`` codes on the segment from ``f(x_a)`` to ``f(x_b)``.

    Returns ``(codes, shapes)``; the end codes are exactly ``f(x_a)`` and ``f(x_b)``.
    """
    if steps < 2:
        raise InvalidInputError("interpolation needs at least 2 steps")
    ea, eb = embed_one(net, x_a), embed_one(net, x_b)
    codes = []
    for k in range(steps):
        t = k / (steps - 1)
        if k == 0:
            codes.append(ea.clone())
        elif k == steps - 1:
            codes.append(eb.clone())
        else:
            codes.append(_slerp(ea, eb, t) if spherical else ea + t * (eb - ea))
    return torch.stack(codes), torch.stack([decode_code(net, e) for e in codes])


def exact_signed_sum(codes: Sequence[torch.Tensor], signs: Sequence[int]) -> torch.Tensor:
    """Correctly rounded ``sum(sign * code)``, so that ``a + b - b`` is exactly ``a``."""
    arr = np.stack([c.double().numpy() * s for c, s in zip(codes, signs)])
    out = np.array([math.fsum(arr[:, j]) for j in range(arr.shape[1])])
    return torch.as_tensor(out, dtype=codes[0].dtype)


def arithmetic(net: DarecNet, operands: Sequence[tuple]):
    """``operands`` is a list of ``(sign, image)`` pairs with sign +1 or -1.

    Returns ``(code, shape)`` where ``code = sum(sign_i f(x_i))``.
    """
    if len(operands) < 1:
        raise InvalidInputError("arithmetic needs at least one operand")
    signs = []
    for s, _ in operands:
        if s not in (1, -1):
            raise InvalidInputError("operand signs must be +1 or -1")
        signs.append(s)
    codes = [embed_one(net, x) for _, x in operands]
    code = exact_signed_sum(codes, signs)
    return code, decode_code(net, code)


def parse_expression(expr: str) -> list:
    """``"+a.png -b.png c.png"`` -> ``[(1, 'a.png'), (-1, 'b.png'), (1, 'c.png')]``."""
    out = []
    for tok in expr.split():
        sign = 1
        if tok[0] in "+-":
            sign, tok = (1 if tok[0] == "+" else -1), tok[1:]
        if not tok:
            raise InvalidInputError(f"dangling sign in expression {expr!r}")
        out.append((sign, tok))
    if len(out) < 2:
        raise InvalidInputError("an arithmetic expression needs at least 2 operands")
    return out


def load_image(path, size: Optional[int] = None) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    if size is not None and img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0


def contact_sheet(shapes: Sequence[np.ndarray], kind: str, threshold: float = 0.5) -> Image.Image:
    """Side-by-side silhouettes (max projection along z, then along x) of each shape."""
    tiles = []
    for s in shapes:
        s = np.asarray(s)
        if kind == VOXEL:
            occ = s >= threshold
            front = occ.any(axis=2).T[::-1]
            side = occ.any(axis=0).T[::-1]
        else:
            r = 32
            idx = np.clip(((s + 1) / 2 * r).astype(int), 0, r - 1)
            front = np.zeros((r, r), bool)
            side = np.zeros((r, r), bool)
            front[r - 1 - idx[:, 1], idx[:, 0]] = True
            side[r - 1 - idx[:, 1], idx[:, 2]] = True
        tile = np.concatenate([front, np.zeros((1, front.shape[1]), bool), side], axis=0)
        tiles.append(np.kron(tile, np.ones((4, 4), bool)))
    h = max(t.shape[0] for t in tiles)
    sep = np.zeros((h, 4), bool)
    row = np.concatenate(sum([[t, sep] for t in tiles], [])[:-1], axis=1)
    return Image.fromarray(np.where(row, 0, 255).astype(np.uint8))


def latent_digest(e: torch.Tensor) -> str:
    return hashlib.sha256(e.detach().contiguous().numpy().tobytes()).hexdigest()


__all__ = [
    "EmbeddingDump",
    "NATURAL_SOURCE",
    "RENDERED_SOURCE",
    "SHAPE_SOURCE",
    "arithmetic",
    "contact_sheet",
    "embed_images",
    "embed_one",
    "encode_shapes",
    "exact_signed_sum",
    "export_embeddings",
    "interpolate",
    "load_image",
    "mean_energy_distance",
    "parse_expression",
    "probe_accuracy",
    "reconstruct",
]
