"""Stage-1 shape autoencoders: a 3D-conv voxel model and a point-cloud model.

Once trained, an autoencoder is frozen and its encoder/decoder are reused
unchanged during reconstruction training. Frozen models carry a parameter
checksum so that any later modification is detectable.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DivergenceError, FrozenModelError, InvalidInputError

VOXEL = "voxel"
POINTCLOUD = "pointcloud"
KINDS = (VOXEL, POINTCLOUD)


@dataclass
class PriorArch:
    kind: str = VOXEL
    resolution: int = 32
    latent_dim: int = 256
    conv_widths: tuple = (32, 64, 128, 256)
    first_kernel: int = 5
    kernel: int = 3
    n_points: int = 2500
    point_widths: tuple = (64, 128, 1024)
    decoder_widths: tuple = (1024, 512, 256, 128)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown representation kind {self.kind!r}")
        self.conv_widths = tuple(self.conv_widths)
        self.point_widths = tuple(self.point_widths)
        self.decoder_widths = tuple(self.decoder_widths)
        if self.kind == VOXEL and self.resolution % 16:
            raise InvalidInputError("voxel resolution must be divisible by 16")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def paper_arch(kind: str) -> PriorArch:
    if kind == VOXEL:
        return PriorArch(kind=VOXEL)
    return PriorArch(kind=POINTCLOUD, latent_dim=1024)


def toy_arch(kind: str) -> PriorArch:
    """Half-width desk-scale preset."""
    if kind == VOXEL:
        return PriorArch(kind=VOXEL, resolution=16, latent_dim=64, conv_widths=(16, 32, 64, 128))
    return PriorArch(kind=POINTCLOUD, resolution=16, latent_dim=64, n_points=512,
                     point_widths=(32, 64, 512), decoder_widths=(512, 256, 128, 64))


# --------------------------------------------------------------------------
# voxel model


class VoxelEncoder(nn.Module):
    def __init__(self, arch: PriorArch):
        super().__init__()
        stages = []
        c_in = 1
        for i, w in enumerate(arch.conv_widths):
            k = arch.first_kernel if i == 0 else arch.kernel
            stages.append(nn.Sequential(
                nn.Conv3d(c_in, w, k, padding=k // 2),
                nn.BatchNorm3d(w),
                nn.MaxPool3d(2),
                nn.ReLU(),
            ))
            c_in = w
        self.stages = nn.ModuleList(stages)
        self.bottom = arch.resolution // 2 ** len(arch.conv_widths)
        self.fc = nn.Linear(c_in * self.bottom**3, arch.latent_dim)

    def forward(self, v):
        x = v.unsqueeze(1)
        for stage in self.stages:
            x = stage(x)
        return self.fc(x.flatten(1))


class VoxelDecoder(nn.Module):
    def __init__(self, arch: PriorArch):
        super().__init__()
        widths = list(arch.conv_widths[::-1])
        self.bottom = arch.resolution // 2 ** len(widths)
        self.top_width = widths[0]
        self.fc = nn.Linear(arch.latent_dim, widths[0] * self.bottom**3)
        outs = widths[1:] + [1]
        k = arch.kernel
        self.stages = nn.ModuleList([
            nn.Sequential(
                nn.Upsample(scale_factor=2, mode="trilinear", align_corners=False),
                nn.Conv3d(c_in, c_out, k, padding=k // 2),
                nn.BatchNorm3d(c_out) if c_out > 1 else nn.Identity(),
            )
            for c_in, c_out in zip(widths, outs)
        ])

    def forward(self, e):
        b = self.bottom
        x = F.relu(self.fc(e)).view(-1, self.top_width, b, b, b)
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if i < len(self.stages) - 1:
                x = F.relu(x)
        return torch.sigmoid(x.squeeze(1))


# --------------------------------------------------------------------------
# point-cloud model


class PointEncoder(nn.Module):
    """Shared per-point MLP followed by a max over points."""

    def __init__(self, arch: PriorArch):
        super().__init__()
        layers = []
        c_in = 3
        for i, w in enumerate(arch.point_widths):
            layers.append(nn.Linear(c_in, w))
            if i < len(arch.point_widths) - 1:
                layers.append(nn.ReLU())
            c_in = w
        self.point_mlp = nn.Sequential(*layers)
        self.fc = nn.Linear(c_in, arch.latent_dim)

    def forward(self, pts):
        feats = self.point_mlp(pts)
        return self.fc(F.relu(feats.max(dim=1).values))


class AtlasDecoder(nn.Module):
    """Single-patch AtlasNet decoder: folds a 2D patch into 3D conditioned on the code."""

    def __init__(self, arch: PriorArch):
        super().__init__()
        self.n_points = arch.n_points
        layers = []
        c_in = arch.latent_dim + 2
        for w in arch.decoder_widths:
            layers += [nn.Linear(c_in, w), nn.ReLU()]
            c_in = w
        layers.append(nn.Linear(c_in, 3))
        self.mlp = nn.Sequential(*layers)
        side = int(math.isqrt(arch.n_points))
        if side * side == arch.n_points:
            g = (torch.arange(side, dtype=torch.float32) + 0.5) / side
            uv = torch.stack(torch.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
        else:
            uv = torch.rand(arch.n_points, 2, generator=torch.Generator().manual_seed(0))
        self.register_buffer("eval_uv", uv)

    def forward(self, e, uv: Optional[torch.Tensor] = None):
        b = e.shape[0]
        if uv is None:
            if self.training:
                uv = torch.rand(b, self.n_points, 2, dtype=e.dtype, device=e.device)
            else:
                uv = self.eval_uv.to(e.dtype).expand(b, -1, -1)
        code = e.unsqueeze(1).expand(-1, uv.shape[1], -1)
        return torch.tanh(self.mlp(torch.cat([code, uv], dim=-1)))


# --------------------------------------------------------------------------
# losses


def voxel_mse(pred, target):
    return F.mse_loss(pred, target)


def chamfer_loss(pred, target):
    """Batch mean of the (non-squared) Chamfer distance; differentiable."""
    d = torch.cdist(pred, target, compute_mode="donot_use_mm_for_euclid_dist")
    return (d.min(dim=2).values.mean(dim=1) + d.min(dim=1).values.mean(dim=1)).mean()


def reconstruction_loss(kind: str, pred, target):
    return voxel_mse(pred, target) if kind == VOXEL else chamfer_loss(pred, target)


# --------------------------------------------------------------------------
# autoencoder wrapper


def parameter_checksum(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in module.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


class ShapeAutoencoder(nn.Module):
    def __init__(self, arch: PriorArch):
        super().__init__()
        self.arch = arch
        if arch.kind == VOXEL:
            self.encoder = VoxelEncoder(arch)
            self.decoder = VoxelDecoder(arch)
        else:
            self.encoder = PointEncoder(arch)
            self.decoder = AtlasDecoder(arch)
        self.frozen = False
        self.frozen_checksum: Optional[str] = None

    @property
    def kind(self) -> str:
        return self.arch.kind

    @property
    def latent_dim(self) -> int:
        return self.arch.latent_dim

    def _check_input(self, v):
        v = torch.as_tensor(v, dtype=next(self.parameters()).dtype)
        single = False
        if self.kind == VOXEL:
            r = self.arch.resolution
            if v.dim() == 3:
                v, single = v.unsqueeze(0), True
            if v.dim() != 4 or tuple(v.shape[1:]) != (r, r, r):
                raise InvalidInputError(f"expected voxel grids of shape ({r},{r},{r})")
        else:
            if v.dim() == 2:
                v, single = v.unsqueeze(0), True
            if v.dim() != 3 or v.shape[-1] != 3:
                raise InvalidInputError("expected point clouds of shape (n, 3)")
        if not torch.isfinite(v).all():
            raise InvalidInputError("non-finite shape input")
        return v, single

    def encode(self, v):
        v, single = self._check_input(v)
        e = self.encoder(v)
        return e[0] if single else e

    def decode(self, e):
        e = torch.as_tensor(e, dtype=next(self.parameters()).dtype)
        single = e.dim() == 1
        if single:
            e = e.unsqueeze(0)
        if e.shape[-1] != self.latent_dim:
            raise InvalidInputError(
                f"latent dimension {e.shape[-1]} does not match {self.latent_dim}"
            )
        out = self.decoder(e)
        return out[0] if single else out

    def forward(self, v):
        return self.decode(self.encode(v))

    def loss(self, v):
        v, _ = self._check_input(v)
        return reconstruction_loss(self.kind, self(v), v)

    def checksum(self) -> str:
        return parameter_checksum(self)

    def freeze(self) -> "ShapeAutoencoder":
        if self.frozen:
            return self
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        self.frozen = True
        self.frozen_checksum = self.checksum()
        return self

    def train(self, mode: bool = True):
        # frozen models stay in inference mode
        return super().train(mode and not getattr(self, "frozen", False))

    def verify_frozen(self) -> None:
        if not self.frozen:
            raise FrozenModelError("shape autoencoder is not frozen")
        if self.checksum() != self.frozen_checksum:
            raise FrozenModelError("frozen parameters were modified")


def encode(ae: ShapeAutoencoder, v) -> torch.Tensor:
    with torch.no_grad():
        was = ae.training
        ae.eval()
        try:
            return ae.encode(v)
        finally:
            ae.train(was)


def decode(ae: ShapeAutoencoder, e) -> torch.Tensor:
    with torch.no_grad():
        was = ae.training
        ae.eval()
        try:
            return ae.decode(e)
        finally:
            ae.train(was)


def freeze(ae: ShapeAutoencoder) -> ShapeAutoencoder:
    return ae.freeze()


# --------------------------------------------------------------------------
# training


@dataclass
class PriorTrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    converge_window: int = 10
    converge_tol: float = 0.005
    min_epochs: int = 20
    log_every: int = 0


@dataclass
class PriorTrainState:
    """Everything needed to resume stage-1 training bit-for-bit."""

    epoch: int = 0
    losses: list = field(default_factory=list)
    optimizer: Optional[dict] = None
    generator: Optional[torch.Tensor] = None
    torch_rng: Optional[torch.Tensor] = None
    converged: bool = False


def smoothed(values: Sequence[float], window: int = 5) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return v
    return np.convolve(v, np.ones(window) / window, mode="valid")


def has_converged(epoch_losses: Sequence[float], window: int, tol: float) -> bool:
    """Smoothed loss improved by less than ``tol`` (relative) over ``window`` epochs."""
    s = smoothed(epoch_losses)
    if len(s) <= window:
        return False
    old, new = s[-window - 1], s[-1]
    return (old - new) < tol * abs(old)


def train_prior(
    ae: ShapeAutoencoder,
    shapes,
    cfg: PriorTrainConfig = PriorTrainConfig(),
    state: Optional[PriorTrainState] = None,
    on_epoch=None,
    max_epochs: Optional[int] = None,
):
    """Fit the autoencoder on a tensor of shapes; returns ``(ae, state)``.

    ``state.losses`` holds the per-epoch mean training loss. ``on_epoch`` is
    called after each epoch with ``(ae, state)`` (used for checkpointing).
    ``max_epochs`` stops early without marking convergence, so a later call
    with the returned state continues the identical trajectory.
    """
    if ae.frozen:
        raise FrozenModelError("cannot train a frozen shape autoencoder")
    shapes = torch.as_tensor(shapes, dtype=torch.float32)
    ae._check_input(shapes[:1])
    opt = torch.optim.Adam(ae.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    if state is None:
        state = PriorTrainState()
        torch.manual_seed(cfg.seed)
    else:
        opt.load_state_dict(state.optimizer)
        gen.set_state(state.generator)
        torch.set_rng_state(state.torch_rng)
    n = len(shapes)
    ae.train()
    stop_at = cfg.epochs if max_epochs is None else min(cfg.epochs, state.epoch + max_epochs)
    while state.epoch < stop_at and not state.converged:
        perm = torch.randperm(n, generator=gen)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            batch = shapes[perm[i : i + cfg.batch_size]]
            opt.zero_grad()
            loss = ae.loss(batch)
            if not torch.isfinite(loss):
                raise DivergenceError(
                    "stage-1 loss became non-finite",
                    {"epoch": state.epoch, "batch_start": i, "loss": float(loss)},
                )
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
        state.losses.append(total / n)
        state.epoch += 1
        if state.epoch >= cfg.min_epochs and has_converged(
            state.losses, cfg.converge_window, cfg.converge_tol
        ):
            state.converged = True
        state.optimizer = opt.state_dict()
        state.generator = gen.get_state()
        state.torch_rng = torch.get_rng_state()
        if on_epoch is not None:
            on_epoch(ae, state)
    return ae, state


def reconstruction_iou(ae: ShapeAutoencoder, shapes, threshold: float = 0.5, batch_size: int = 64):
    """Mean voxel IoU of ``decode(encode(v))`` against ``v``."""
    from .geometry import voxel_iou

    shapes = torch.as_tensor(shapes, dtype=torch.float32)
    out = []
    for i in range(0, len(shapes), batch_size):
        rec = decode(ae, encode(ae, shapes[i : i + batch_size])).numpy()
        for r, v in zip(rec, shapes[i : i + batch_size].numpy()):
            out.append(voxel_iou(r, v, threshold))
    return float(np.mean(out))


def arch_from_dict(d: dict) -> PriorArch:
    return PriorArch(**d)


def with_overrides(arch: PriorArch, **kw) -> PriorArch:
    return replace(arch, **kw)
