import numpy as np
import pytest
import torch
import torch.nn as nn

from darec.errors import DivergenceError, FrozenModelError, InvalidInputError
from darec.shape_prior import (
    POINTCLOUD,
    VOXEL,
    PriorArch,
    PriorTrainConfig,
    ShapeAutoencoder,
    chamfer_loss,
    decode,
    encode,
    has_converged,
    paper_arch,
    reconstruction_loss,
    smoothed,
    toy_arch,
    train_prior,
    voxel_mse,
)
from darec.geometry import sample_isosurface
from darec.synthdata import CATEGORIES, generate_voxels

from oracles import brute_chamfer, finite_difference_check


def tiny_voxel_arch():
    return PriorArch(kind=VOXEL, resolution=16, latent_dim=8, conv_widths=(4, 4, 4, 4))


def tiny_point_arch():
    return PriorArch(kind=POINTCLOUD, latent_dim=8, n_points=16, point_widths=(8, 8, 16),
                     decoder_widths=(16, 16, 16, 16))


def n_params(m):
    return sum(p.numel() for p in m.parameters())


def toy_shapes(n=4, r=16, seed=0):
    rng = np.random.default_rng(seed)
    return np.stack([
        generate_voxels(CATEGORIES[i % 4], int(rng.integers(1 << 30)), r) for i in range(n)
    ]).astype(np.float32)


class TestArchitecture:
    def test_voxel_encoder_stages(self):
        ae = ShapeAutoencoder(paper_arch(VOXEL))
        convs = [m for m in ae.encoder.modules() if isinstance(m, nn.Conv3d)]
        pools = [m for m in ae.encoder.modules() if isinstance(m, nn.MaxPool3d)]
        assert [c.kernel_size[0] for c in convs] == [5, 3, 3, 3]
        assert [c.out_channels for c in convs] == [32, 64, 128, 256]
        assert all(c.stride == (1, 1, 1) for c in convs)
        assert len(pools) == 4 and all(p.kernel_size == 2 for p in pools)
        assert any(isinstance(m, nn.ReLU) for m in ae.encoder.modules())
        assert ae.encoder.fc.out_features == 256

    def test_voxel_decoder_mirrors_with_upsampling(self):
        ae = ShapeAutoencoder(paper_arch(VOXEL))
        convs = [m for m in ae.decoder.modules() if isinstance(m, nn.Conv3d)]
        ups = [m for m in ae.decoder.modules() if isinstance(m, nn.Upsample)]
        assert len(convs) == 4 and len(ups) == 4
        assert all(u.scale_factor == 2 and u.mode == "trilinear" for u in ups)
        assert [c.in_channels for c in convs] == [256, 128, 64, 32]
        assert convs[-1].out_channels == 1
        assert ae.decoder.fc.in_features == 256

    def test_voxel_shapes_32(self):
        ae = ShapeAutoencoder(paper_arch(VOXEL)).eval()
        v = torch.zeros(2, 32, 32, 32)
        e = ae.encode(v)
        assert e.shape == (2, 256)
        assert ae.decode(e).shape == (2, 32, 32, 32)

    def test_point_architecture(self):
        ae = ShapeAutoencoder(paper_arch(POINTCLOUD))
        assert ae.latent_dim == 1024
        lin = [m for m in ae.decoder.mlp if isinstance(m, nn.Linear)]
        assert [m.out_features for m in lin] == [1024, 512, 256, 128, 3]
        assert lin[0].in_features == 1024 + 2
        assert ae.arch.n_points == 2500

    def test_toy_profile_halves_widths(self):
        a = toy_arch(VOXEL)
        assert a.conv_widths == (16, 32, 64, 128)
        assert (a.resolution, a.latent_dim) == (16, 64)

    def test_resolution_must_divide(self):
        with pytest.raises(InvalidInputError):
            PriorArch(kind=VOXEL, resolution=24)

    def test_unknown_kind(self):
        with pytest.raises(InvalidInputError):
            PriorArch(kind="mesh")


class TestEncodeDecode:
    def test_point_encoder_permutation_invariant(self):
        torch.manual_seed(0)
        ae = ShapeAutoencoder(toy_arch(POINTCLOUD)).eval()
        pts = torch.rand(300, 3) * 2 - 1
        perm = torch.randperm(300)
        assert torch.equal(encode(ae, pts), encode(ae, pts[perm]))

    @pytest.mark.parametrize("kind", [VOXEL, POINTCLOUD])
    def test_decoder_bounds_wide_latents(self, kind):
        torch.manual_seed(1)
        ae = ShapeAutoencoder(toy_arch(kind)).eval()
        e = torch.randn(16, ae.latent_dim) * np.sqrt(10)
        out = decode(ae, e)
        assert torch.isfinite(out).all()
        if kind == VOXEL:
            assert out.min() >= 0 and out.max() <= 1
        else:
            assert out.abs().max() <= 1
            assert out.shape == (16, ae.arch.n_points, 3)

    @pytest.mark.parametrize("kind", [VOXEL, POINTCLOUD])
    def test_zero_latent_is_valid(self, kind):
        ae = ShapeAutoencoder(toy_arch(kind)).eval()
        assert torch.isfinite(decode(ae, torch.zeros(ae.latent_dim))).all()

    def test_encode_deterministic_and_finite(self):
        ae = ShapeAutoencoder(toy_arch(VOXEL))
        v = torch.from_numpy(toy_shapes(2))
        a, b = encode(ae, v), encode(ae, v)
        assert torch.equal(a, b) and torch.isfinite(a).all() and a.shape == (2, 64)

    def test_wrong_grid_size(self):
        ae = ShapeAutoencoder(toy_arch(VOXEL))
        with pytest.raises(InvalidInputError):
            ae.encode(torch.zeros(1, 8, 8, 8))

    def test_point_input_to_voxel_model(self):
        ae = ShapeAutoencoder(toy_arch(VOXEL))
        with pytest.raises(InvalidInputError):
            ae.encode(torch.zeros(100, 3))

    def test_non_finite_input(self):
        ae = ShapeAutoencoder(toy_arch(POINTCLOUD))
        pts = torch.zeros(10, 3)
        pts[3, 1] = float("nan")
        with pytest.raises(InvalidInputError):
            ae.encode(pts)

    def test_latent_dimension_mismatch(self):
        ae = ShapeAutoencoder(toy_arch(VOXEL))
        with pytest.raises(InvalidInputError):
            ae.decode(torch.zeros(3, 65))


class TestLosses:
    @pytest.mark.parametrize("q", [0.0, 0.1, 0.5, 0.9])
    def test_half_prediction_is_quarter(self, q):
        rng = np.random.default_rng(0)
        target = torch.from_numpy((rng.random((2, 16, 16, 16)) < q).astype(np.float32))
        assert voxel_mse(torch.full_like(target, 0.5), target).item() == 0.25

    def test_identity_losses(self):
        v = torch.from_numpy(toy_shapes(2))
        assert voxel_mse(v, v).item() == 0.0
        p = torch.rand(2, 50, 3)
        assert chamfer_loss(p, p).item() == 0.0

    def test_chamfer_loss_matches_oracle(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(2, 30, 3)), rng.normal(size=(2, 45, 3))
        got = chamfer_loss(torch.from_numpy(a), torch.from_numpy(b)).item()
        want = np.mean([brute_chamfer(a[i], b[i]) for i in range(2)])
        assert got == pytest.approx(want, rel=1e-12)

    def test_dispatch(self):
        p = torch.rand(1, 5, 3)
        assert reconstruction_loss(POINTCLOUD, p, p).item() == 0.0


def _fd_rows(model, loss_fn, seed=0):
    model.double()
    rows, skipped = finite_difference_check(loss_fn, list(model.parameters()), n=10, seed=seed)
    assert len(rows) == 10, f"only {len(rows)} smooth entries ({skipped} skipped)"
    assert sum(abs(r[2]) > 1e-9 for r in rows) >= 5, "gradient check is vacuous"
    return rows


class TestGradients:
    def test_voxel_mse_gradient(self):
        torch.manual_seed(0)
        ae = ShapeAutoencoder(tiny_voxel_arch())
        assert n_params(ae) < 5000
        v = torch.rand(4, 16, 16, 16, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
        rows = _fd_rows(ae, lambda: ae.loss(v))
        assert max(r[-1] for r in rows) < 1e-2

    def test_chamfer_gradient(self):
        torch.manual_seed(1)
        ae = ShapeAutoencoder(tiny_point_arch()).eval()
        assert n_params(ae) < 5000
        pts = torch.rand(2, 40, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(0)) * 2 - 1
        rows = _fd_rows(ae, lambda: ae.loss(pts))
        assert max(r[-1] for r in rows) < 1e-2


class TestFreeze:
    def test_freeze_idempotent(self):
        ae = ShapeAutoencoder(toy_arch(VOXEL))
        ae.freeze()
        c = ae.frozen_checksum
        ae.freeze()
        assert ae.frozen_checksum == c == ae.checksum()
        assert not any(p.requires_grad for p in ae.parameters())

    def test_frozen_stays_in_eval(self):
        ae = ShapeAutoencoder(toy_arch(VOXEL)).freeze()
        ae.train()
        assert not ae.training

    def test_train_frozen_raises(self):
        ae = ShapeAutoencoder(toy_arch(VOXEL)).freeze()
        with pytest.raises(FrozenModelError):
            train_prior(ae, toy_shapes(2))

    def test_modification_detected(self):
        ae = ShapeAutoencoder(toy_arch(VOXEL)).freeze()
        with torch.no_grad():
            next(ae.parameters()).add_(1e-3)
        with pytest.raises(FrozenModelError):
            ae.verify_frozen()

    def test_forward_in_eval_does_not_touch_buffers(self):
        ae = ShapeAutoencoder(toy_arch(VOXEL)).freeze()
        ae(torch.from_numpy(toy_shapes(3)))
        ae.verify_frozen()


class TestTraining:
    @pytest.mark.parametrize("category", CATEGORIES)
    def test_overfit_one_voxel_shape(self, category):
        torch.manual_seed(0)
        ae = ShapeAutoencoder(toy_arch(VOXEL))
        v = generate_voxels(category, 1, 16)[None].astype(np.float32)
        cfg = PriorTrainConfig(epochs=200, batch_size=1, lr=1e-3, min_epochs=1000)
        ae, state = train_prior(ae, v, cfg)
        assert state.losses[-1] < 0.01 * state.losses[0]

    def test_overfit_one_point_cloud(self):
        torch.manual_seed(0)
        arch = toy_arch(POINTCLOUD)
        ae = ShapeAutoencoder(arch)
        pts = sample_isosurface(generate_voxels("chair-like", 1, 16), n_points=arch.n_points).points[None]
        cfg = PriorTrainConfig(epochs=200, batch_size=1, lr=1e-3, min_epochs=1000)
        ae, state = train_prior(ae, pts, cfg)
        assert state.losses[-1] < 0.01 * state.losses[0]

    def test_resume_identical(self):
        shapes = toy_shapes(8)
        cfg = PriorTrainConfig(epochs=4, batch_size=4, lr=1e-3, seed=3)
        torch.manual_seed(0)
        a, sa = train_prior(ShapeAutoencoder(tiny_voxel_arch()), shapes, cfg)
        torch.manual_seed(0)
        b = ShapeAutoencoder(tiny_voxel_arch())
        b, sb = train_prior(b, shapes, cfg, max_epochs=2)
        assert sb.epoch == 2
        b, sb = train_prior(b, shapes, cfg, state=sb)
        assert sa.losses == sb.losses
        assert a.checksum() == b.checksum()

    def test_divergence_raises(self):
        ae = ShapeAutoencoder(tiny_voxel_arch())
        with torch.no_grad():
            ae.decoder.fc.bias.fill_(float("inf"))
        with pytest.raises(DivergenceError) as exc:
            train_prior(ae, toy_shapes(2), PriorTrainConfig(epochs=3))
        assert "epoch" in exc.value.diagnostics

    def test_convergence_rule(self):
        flat = [1.0] * 30
        assert has_converged(flat, 10, 0.005)
        falling = list(np.linspace(1.0, 0.1, 30))
        assert not has_converged(falling, 10, 0.005)
        assert len(smoothed(range(10))) == 6
