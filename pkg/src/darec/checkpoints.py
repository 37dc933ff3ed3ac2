"""Versioned checkpoint containers for both training stages."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import torch

from .darec_net import DarecNet, EncoderArch
from .errors import ChecksumMismatchError, InvalidInputError
from .shape_prior import PriorArch, ShapeAutoencoder

PRIOR_FORMAT = "darec-shape-prior"
RECON_FORMAT = "darec-recon"
VERSION = 1


def save_prior(path, ae: ShapeAutoencoder, config: Optional[dict] = None, train_state=None,
               losses=None, wall_clock: float = 0.0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "format": PRIOR_FORMAT,
        "version": VERSION,
        "kind": ae.kind,
        "arch": ae.arch.to_dict(),
        "config": config,
        "state_dict": {k: v.detach().clone() for k, v in ae.state_dict().items()},
        "frozen": ae.frozen,
        "checksum": ae.frozen_checksum if ae.frozen else ae.checksum(),
        "losses": list(losses or []),
        "wall_clock": float(wall_clock),
        "train_state": None,
    }
    if train_state is not None:
        blob["train_state"] = {
            "epoch": train_state.epoch,
            "losses": list(train_state.losses),
            "optimizer": train_state.optimizer,
            "generator": train_state.generator,
            "torch_rng": train_state.torch_rng,
            "converged": train_state.converged,
        }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(blob, tmp)
    tmp.replace(path)
    return path


def _read(path, fmt):
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise InvalidInputError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format") != fmt:
        raise InvalidInputError(f"{path}: not a {fmt} checkpoint")
    if blob.get("version") != VERSION:
        raise InvalidInputError(f"{path}: unsupported version {blob.get('version')}")
    return blob


def read_prior_blob(path) -> dict:
    return _read(path, PRIOR_FORMAT)


def load_prior(path) -> ShapeAutoencoder:
    """Rebuild a shape autoencoder; frozen checkpoints are re-frozen and verified."""
    blob = read_prior_blob(path)
    ae = ShapeAutoencoder(PriorArch(**blob["arch"]))
    ae.load_state_dict(blob["state_dict"])
    if blob["frozen"]:
        ae.freeze()
        if ae.frozen_checksum != blob["checksum"]:
            raise ChecksumMismatchError(f"{path}: parameter checksum mismatch")
    return ae


def save_recon(path, net: DarecNet, prior_path, config: Optional[dict] = None, step: int = 0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    net.prior.verify_frozen()
    blob = {
        "format": RECON_FORMAT,
        "version": VERSION,
        "config": config,
        "step": step,
        "encoder_arch": {
            "backbone": net.f.arch.backbone,
            "image_size": net.f.arch.image_size,
            "widths": list(net.f.arch.widths),
            "pretrained_path": None,
        },
        "disc_width": net.d_img.net[0].out_features,
        "f": {k: v.detach().clone() for k, v in net.f.state_dict().items()},
        "d_img": {k: v.detach().clone() for k, v in net.d_img.state_dict().items()},
        "d_shape": {k: v.detach().clone() for k, v in net.d_shape.state_dict().items()},
        "prior_path": str(Path(prior_path).resolve()),
        "prior_checksum": net.prior.frozen_checksum,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(blob, tmp)
    tmp.replace(path)
    return path


def load_recon(path, prior_path=None) -> DarecNet:
    """Load a stage-2 network together with the frozen prior it references."""
    blob = _read(path, RECON_FORMAT)
    prior = load_prior(prior_path or blob["prior_path"])
    if prior.frozen_checksum != blob["prior_checksum"]:
        raise ChecksumMismatchError(
            f"{path}: referenced prior has checksum {prior.frozen_checksum[:12]}, "
            f"expected {blob['prior_checksum'][:12]}"
        )
    net = DarecNet(prior, EncoderArch(**blob["encoder_arch"]), disc_width=blob["disc_width"])
    net.f.load_state_dict(blob["f"])
    net.d_img.load_state_dict(blob["d_img"])
    net.d_shape.load_state_dict(blob["d_shape"])
    net.eval()
    return net


def recon_blob(path) -> dict:
    return _read(path, RECON_FORMAT)
