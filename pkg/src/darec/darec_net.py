"""Stage-2 reconstruction network and its adversarial loss terms.

The image encoder ``f`` maps images into the frozen shape autoencoder's
latent space; the frozen decoder turns codes into shapes. Two independent
discriminators classify codes: ``d_img`` separates rendered from natural
images, ``d_shape`` separates image codes from shape-manifold codes.

The min-max objective is realised in one backward pass: the code fed to a
discriminator goes through a gradient-reversal operator, so the
discriminators descend their classification losses while ``f`` ascends
them, scaled by the loss weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import FrozenModelError, InvalidInputError
from .shape_prior import POINTCLOUD, VOXEL, ShapeAutoencoder, reconstruction_loss

RENDERED_CLASS = 0
NATURAL_CLASS = 1
SHAPE_CLASS = 1
MAX_CONFUSION = 2 * math.log(2)


class _GradientReversal(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, scale):
        ctx.scale = scale
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.scale, None


def grad_reverse(x, scale: float = 1.0):
    """Identity forward; multiplies the incoming gradient by ``-scale`` backward."""
    return _GradientReversal.apply(x, scale)


class GradientReversal(nn.Module):
    def __init__(self, scale: float = 1.0):
        super().__init__()
        self.scale = scale

    def forward(self, x):
        return grad_reverse(x, self.scale)


@dataclass
class LossWeights:
    lambda_i: float = 0.001
    lambda_s: float = 0.001

    def __post_init__(self):
        if self.lambda_i < 0 or self.lambda_s < 0:
            raise InvalidInputError("loss weights must be nonnegative")

    @classmethod
    def for_kind(cls, kind: str) -> "LossWeights":
        return cls(0.001, 0.001) if kind == VOXEL else cls(0.01, 0.01)


@dataclass
class EncoderArch:
    backbone: str = "small"  # "small" or "resnet50"
    image_size: int = 64
    widths: tuple = (32, 64, 128, 256)
    pretrained_path: Optional[str] = None

    def __post_init__(self):
        self.widths = tuple(self.widths)
        if self.backbone not in ("small", "resnet50"):
            raise InvalidInputError(f"unknown backbone {self.backbone!r}")


class SmallCNN(nn.Module):
    def __init__(self, widths):
        super().__init__()
        layers = []
        c_in = 3
        for w in widths:
            layers += [nn.Conv2d(c_in, w, 3, stride=2, padding=1), nn.ReLU()]
            c_in = w
        self.features = nn.Sequential(*layers)
        self.out_dim = c_in

    def forward(self, x):
        return self.features(x).mean(dim=(2, 3))


def _resnet50(pretrained_path: Optional[str]):
    from torchvision.models import resnet50

    net = resnet50(weights=None)
    if pretrained_path:
        state = torch.load(pretrained_path, map_location="cpu", weights_only=True)
        state = {k: v for k, v in state.items() if not k.startswith("fc.")}
        net.load_state_dict(state, strict=False)
    out_dim = net.fc.in_features
    net.fc = nn.Identity()
    net.out_dim = out_dim
    return net


class ImageEncoder(nn.Module):
    """Backbone plus a freshly initialised affine head onto the latent space."""

    def __init__(self, arch: EncoderArch, latent_dim: int):
        super().__init__()
        self.arch = arch
        if arch.backbone == "small":
            self.backbone = SmallCNN(arch.widths)
        else:
            self.backbone = _resnet50(arch.pretrained_path)
        self.head = nn.Linear(self.backbone.out_dim, latent_dim)
        self.latent_dim = latent_dim

    def forward(self, x):
        s = self.arch.image_size
        if x.dim() != 4 or tuple(x.shape[1:]) != (3, s, s):
            raise InvalidInputError(f"expected images of shape (3, {s}, {s}), got {tuple(x.shape[1:])}")
        return self.head(self.backbone(x))


class Discriminator(nn.Module):
    """Two hidden affine+ReLU stages and a two-way softmax output."""

    def __init__(self, latent_dim: int, width: int = 1024):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(latent_dim, width), nn.ReLU(),
            nn.Linear(width, width), nn.ReLU(),
            nn.Linear(width, 2),
        )

    def forward(self, e):
        return self.net(e)

    def probs(self, e):
        return F.softmax(self(e), dim=-1)


def adversarial_loss(logits_a, logits_b):
    """``-E log D(a) - E log(1 - D(b))`` where ``D`` is the probability of class 0.

    Batch means stand in for the expectations.
    """
    if len(logits_a) == 0 or len(logits_b) == 0:
        raise InvalidInputError("adversarial loss needs nonempty batches")
    la = F.log_softmax(logits_a, dim=-1)[:, 0]
    lb = F.log_softmax(logits_b, dim=-1)[:, 1]
    return -la.mean() - lb.mean()


@dataclass
class LossSwitches:
    use_rec: bool = True
    use_img: bool = True
    use_shape: bool = True

    def __post_init__(self):
        if not self.use_rec:
            raise InvalidInputError("the reconstruction loss cannot be switched off")

    @property
    def label(self) -> str:
        terms = ["rec"] + (["img"] if self.use_img else []) + (["shape"] if self.use_shape else [])
        return "+".join(terms)


class DarecNet(nn.Module):
    def __init__(
        self,
        prior: ShapeAutoencoder,
        encoder_arch: EncoderArch = EncoderArch(),
        disc_width: int = 1024,
        seed: int = 0,
    ):
        super().__init__()
        if not prior.frozen:
            raise FrozenModelError("stage 2 needs a frozen shape autoencoder")
        # the image encoder is initialised first from the seed so that runs
        # differing only in loss switches start from identical weights
        torch.manual_seed(seed)
        self.f = ImageEncoder(encoder_arch, prior.latent_dim)
        torch.manual_seed(seed + 1)
        self.d_img = Discriminator(prior.latent_dim, disc_width)
        self.d_shape = Discriminator(prior.latent_dim, disc_width)
        self.prior = prior

    @property
    def kind(self) -> str:
        return self.prior.kind

    def trainable_parameters(self):
        return [p for n, p in self.named_parameters() if not n.startswith("prior.")]

    def embed(self, x):
        return self.f(x)

    def decode(self, e):
        return self.prior.decode(e)

    def reconstruct(self, x):
        return self.decode(self.embed(x))

    def manifold_codes(self, shapes):
        with torch.no_grad():
            return self.prior.encode(shapes)

    # ---- individual loss terms ------------------------------------------

    def loss_rec(self, x_r, target, e_r=None):
        e_r = self.embed(x_r) if e_r is None else e_r
        return reconstruction_loss(self.kind, self.decode(e_r), target)

    def loss_img(self, e_r, e_n, reverse: bool = False):
        if reverse:
            e_r, e_n = grad_reverse(e_r), grad_reverse(e_n)
        return adversarial_loss(self.d_img(e_r), self.d_img(e_n))

    def loss_shape(self, e_r, e_shape, reverse: bool = False):
        if not self.prior.frozen:
            raise FrozenModelError("shape-manifold codes must come from a frozen encoder")
        if reverse:
            e_r = grad_reverse(e_r)
        return adversarial_loss(self.d_shape(e_r), self.d_shape(e_shape.detach()))

    # ---- combined objective ---------------------------------------------

    def objective(
        self,
        x_r,
        target,
        x_n=None,
        e_shape=None,
        weights: LossWeights = LossWeights(),
        switches: LossSwitches = LossSwitches(),
        natural_in_shape: bool = False,
    ):
        """Scalar whose gradient gives every trainable parameter its update direction.

        ``f`` descends ``L_rec - lambda_i L_img - lambda_s L_shape``; the
        discriminators descend their own (weighted) losses; the frozen
        autoencoder receives nothing. Returns ``(total, terms)``.
        """
        e_r = self.embed(x_r)
        terms = {"rec": self.loss_rec(x_r, target, e_r=e_r)}
        total = terms["rec"]
        e_n = None
        if switches.use_img:
            e_n = self.embed(x_n)
            terms["img"] = self.loss_img(e_r, e_n, reverse=True)
            total = total + weights.lambda_i * terms["img"]
        if switches.use_shape:
            e_img = e_r
            if natural_in_shape:
                e_n = self.embed(x_n) if e_n is None else e_n
                e_img = torch.cat([e_r, e_n])
            terms["shape"] = self.loss_shape(e_img, e_shape, reverse=True)
            total = total + weights.lambda_s * terms["shape"]
        return total, terms


def discriminator_accuracy(disc: Discriminator, e_a, e_b) -> float:
    """Fraction classified correctly when ``e_a`` is class 0 and ``e_b`` class 1."""
    with torch.no_grad():
        pa = disc(e_a).argmax(-1) == 0
        pb = disc(e_b).argmax(-1) == 1
    return float(torch.cat([pa, pb]).float().mean())


__all__ = [
    "DarecNet",
    "Discriminator",
    "EncoderArch",
    "GradientReversal",
    "ImageEncoder",
    "LossSwitches",
    "LossWeights",
    "MAX_CONFUSION",
    "POINTCLOUD",
    "VOXEL",
    "adversarial_loss",
    "discriminator_accuracy",
    "grad_reverse",
]
