import numpy as np
import pytest
import torch

from darec.darec_net import (
    MAX_CONFUSION,
    DarecNet,
    Discriminator,
    EncoderArch,
    GradientReversal,
    ImageEncoder,
    LossSwitches,
    LossWeights,
    adversarial_loss,
    discriminator_accuracy,
    grad_reverse,
)
from darec.errors import FrozenModelError, InvalidInputError
from darec.shape_prior import POINTCLOUD, VOXEL, PriorArch, ShapeAutoencoder, toy_arch

from oracles import LN4, finite_difference_check


def tiny_prior(kind=VOXEL, dtype=torch.float64):
    if kind == VOXEL:
        arch = PriorArch(kind=VOXEL, resolution=16, latent_dim=8, conv_widths=(4, 4, 4, 4))
    else:
        arch = PriorArch(kind=POINTCLOUD, latent_dim=8, n_points=16, point_widths=(8, 8, 16),
                         decoder_widths=(16, 16, 16, 16))
    torch.manual_seed(0)
    return ShapeAutoencoder(arch).to(dtype).freeze()


def tiny_net(kind=VOXEL, seed=0):
    net = DarecNet(tiny_prior(kind), EncoderArch(image_size=8, widths=(4, 4)), disc_width=8, seed=seed)
    return net.double()


def tiny_batch(kind=VOXEL, seed=0, b=4):
    g = torch.Generator().manual_seed(seed)
    x_r = torch.rand(b, 3, 8, 8, generator=g, dtype=torch.float64)
    x_n = torch.rand(b, 3, 8, 8, generator=g, dtype=torch.float64)
    if kind == VOXEL:
        target = (torch.rand(b, 16, 16, 16, generator=g, dtype=torch.float64) < 0.3).double()
    else:
        target = torch.rand(b, 30, 3, generator=g, dtype=torch.float64) * 2 - 1
    return x_r, x_n, target


def flat_grads(params):
    return [None if p.grad is None else p.grad.clone() for p in params]


class TestGradientReversal:
    def test_forward_identity(self):
        x = torch.randn(5, 3)
        assert torch.equal(grad_reverse(x), x)
        assert torch.equal(GradientReversal(0.3)(x), x)

    @pytest.mark.parametrize("scale", [1.0, 0.25, 3.0])
    def test_backward_negates_and_scales(self, scale):
        x = torch.randn(4, 2, requires_grad=True)
        w = torch.randn(4, 2)
        (grad_reverse(x, scale) * w).sum().backward()
        assert torch.allclose(x.grad, -scale * w, rtol=0, atol=0)


class TestDiscriminator:
    def test_probabilities_sum_to_one(self):
        d = Discriminator(16, 32)
        p = d.probs(torch.randn(50, 16) * 5)
        assert torch.allclose(p.sum(-1), torch.ones(50), atol=1e-6)

    def test_structure(self):
        d = Discriminator(64, 1024)
        lin = [m for m in d.net if isinstance(m, torch.nn.Linear)]
        assert [(m.in_features, m.out_features) for m in lin] == [(64, 1024), (1024, 1024), (1024, 2)]

    def test_uniform_output_gives_2ln2(self):
        z = torch.zeros(7, 2, dtype=torch.float64)
        assert adversarial_loss(z, z[:3]).item() == pytest.approx(LN4, abs=1e-12)
        assert MAX_CONFUSION == pytest.approx(LN4)

    def test_perfect_discriminator_near_zero(self):
        a = torch.tensor([[50.0, -50.0]] * 4)
        b = torch.tensor([[-50.0, 50.0]] * 4)
        assert 0 <= adversarial_loss(a, b).item() < 1e-20

    def test_empty_batch(self):
        with pytest.raises(InvalidInputError):
            adversarial_loss(torch.zeros(0, 2), torch.zeros(3, 2))

    def test_accuracy_helper(self):
        d = Discriminator(2, 4)
        with torch.no_grad():
            for m in d.net:
                if isinstance(m, torch.nn.Linear):
                    m.weight.zero_()
                    m.bias.zero_()
            d.net[-1].bias.copy_(torch.tensor([1.0, 0.0]))
        assert discriminator_accuracy(d, torch.zeros(3, 2), torch.zeros(5, 2)) == 3 / 8


class TestImageEncoder:
    def test_output_shape_paper_latent(self):
        f = ImageEncoder(EncoderArch(image_size=64), 256).eval()
        e = f(torch.rand(2, 3, 64, 64))
        assert e.shape == (2, 256) and torch.isfinite(e).all()

    def test_small_cnn_default_structure(self):
        f = ImageEncoder(EncoderArch(), 64)
        convs = [m for m in f.backbone.modules() if isinstance(m, torch.nn.Conv2d)]
        assert [c.out_channels for c in convs] == [32, 64, 128, 256]
        assert all(c.kernel_size == (3, 3) and c.stride == (2, 2) for c in convs)

    def test_zero_image_and_determinism(self):
        f = ImageEncoder(EncoderArch(image_size=32, widths=(8, 8)), 16).eval()
        z = torch.zeros(1, 3, 32, 32)
        assert torch.isfinite(f(z)).all()
        x = torch.rand(1, 3, 32, 32)
        assert torch.equal(f(x), f(x))

    def test_size_mismatch(self):
        f = ImageEncoder(EncoderArch(image_size=64), 16)
        with pytest.raises(InvalidInputError):
            f(torch.rand(1, 3, 32, 32))

    def test_unknown_backbone(self):
        with pytest.raises(InvalidInputError):
            EncoderArch(backbone="vgg")


class TestDarecNet:
    def test_requires_frozen_prior(self):
        with pytest.raises(FrozenModelError):
            DarecNet(ShapeAutoencoder(toy_arch(VOXEL)))

    def test_discriminators_independent(self):
        net = tiny_net()
        assert all(a is not b for a, b in zip(net.d_img.parameters(), net.d_shape.parameters()))
        assert not all(torch.equal(a, b) for a, b in zip(net.d_img.parameters(), net.d_shape.parameters()))

    def test_seeded_initialisation(self):
        a, b = tiny_net(seed=5), tiny_net(seed=5)
        assert all(torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))

    def test_trainable_excludes_prior(self):
        net = tiny_net()
        prior_ids = {id(p) for p in net.prior.parameters()}
        assert not prior_ids & {id(p) for p in net.trainable_parameters()}

    def test_reconstruction_bounds_and_non_constancy(self):
        net = tiny_net().eval()
        x = torch.rand(3, 3, 8, 8, dtype=torch.float64)
        out = net.reconstruct(x)
        assert out.min() >= 0 and out.max() <= 1
        y = net.reconstruct(torch.zeros(1, 3, 8, 8, dtype=torch.float64))
        assert not torch.equal(out[:1], y)

    def test_rec_loss_identities(self):
        net = tiny_net()
        x_r, _, _ = tiny_batch()
        with torch.no_grad():
            pred = net.reconstruct(x_r)
        assert net.loss_rec(x_r, pred).item() == 0.0

    def test_no_gradient_reaches_prior(self):
        net = tiny_net()
        x_r, x_n, target = tiny_batch()
        e_shape = net.manifold_codes(target)
        total, _ = net.objective(x_r, target, x_n, e_shape)
        total.backward()
        assert all(p.grad is None for p in net.prior.parameters())
        net.prior.verify_frozen()

    def test_rec_gives_no_discriminator_gradient(self):
        net = tiny_net()
        x_r, _, target = tiny_batch()
        net.loss_rec(x_r, target).backward()
        for p in list(net.d_img.parameters()) + list(net.d_shape.parameters()):
            assert p.grad is None or torch.count_nonzero(p.grad) == 0

    def test_shape_loss_symmetric_inputs(self):
        net = tiny_net()
        e = torch.randn(6, 8, dtype=torch.float64)
        logits = net.d_shape(e)
        per_a = -torch.log_softmax(logits, -1)[:, 0].mean()
        per_b = -torch.log_softmax(logits, -1)[:, 1].mean()
        assert net.loss_shape(e, e).item() == pytest.approx((per_a + per_b).item(), rel=1e-12)

    def test_zero_weights_match_rec_only_bitwise(self):
        x_r, x_n, target = tiny_batch(seed=3)
        results = []
        for weights, switches in ((LossWeights(0, 0), LossSwitches()),
                                  (LossWeights(), LossSwitches(True, False, False))):
            net = tiny_net(seed=2)
            opt = torch.optim.Adam(net.trainable_parameters(), lr=1e-3)
            for _ in range(3):
                opt.zero_grad()
                total, _ = net.objective(x_r, target, x_n, net.manifold_codes(target), weights, switches)
                total.backward()
                opt.step()
            results.append([p.detach().clone() for p in net.f.parameters()])
        assert all(torch.equal(a, b) for a, b in zip(*results))

    def test_reversal_sign_on_encoder(self):
        net = tiny_net(seed=1)
        x_r, x_n, _ = tiny_batch(seed=1)
        lam = 0.37
        net.zero_grad()
        (lam * net.loss_img(net.embed(x_r), net.embed(x_n), reverse=True)).backward()
        reversed_f = flat_grads(net.f.parameters())
        reversed_d = flat_grads(net.d_img.parameters())
        net.zero_grad()
        net.loss_img(net.embed(x_r), net.embed(x_n), reverse=False).backward()
        plain_f = flat_grads(net.f.parameters())
        plain_d = flat_grads(net.d_img.parameters())
        for a, b in zip(reversed_f, plain_f):
            assert torch.allclose(a, -lam * b, rtol=1e-12, atol=1e-15)
        for a, b in zip(reversed_d, plain_d):
            assert torch.allclose(a, lam * b, rtol=1e-12, atol=1e-15)

    def test_natural_in_shape_flag(self):
        net = tiny_net()
        x_r, x_n, target = tiny_batch()
        e_shape = net.manifold_codes(target)
        _, a = net.objective(x_r, target, x_n, e_shape, natural_in_shape=False)
        _, b = net.objective(x_r, target, x_n, e_shape, natural_in_shape=True)
        assert a["rec"].item() == b["rec"].item()
        assert a["shape"].item() != b["shape"].item()

    def test_switch_off_rec_rejected(self):
        with pytest.raises(InvalidInputError):
            LossSwitches(use_rec=False)
        assert LossSwitches(True, True, False).label == "rec+img"

    def test_negative_weights_rejected(self):
        with pytest.raises(InvalidInputError):
            LossWeights(-1, 0)
        assert LossWeights.for_kind(POINTCLOUD) == LossWeights(0.01, 0.01)


def signed_objectives(net, x_r, x_n, target, w):
    """Each parameter group together with the scalar its update descends."""
    e_shape = net.manifold_codes(target)

    def encoder_obj():
        e_r, e_n = net.embed(x_r), net.embed(x_n)
        return (net.loss_rec(x_r, target, e_r=e_r) - w.lambda_i * net.loss_img(e_r, e_n)
                - w.lambda_s * net.loss_shape(e_r, e_shape))

    def img_obj():
        return w.lambda_i * net.loss_img(net.embed(x_r), net.embed(x_n))

    def shape_obj():
        return w.lambda_s * net.loss_shape(net.embed(x_r), e_shape)

    return [(list(net.f.parameters()), encoder_obj), (list(net.d_img.parameters()), img_obj),
            (list(net.d_shape.parameters()), shape_obj)]


@pytest.mark.parametrize("kind", [VOXEL, POINTCLOUD])
def test_update_directions_match_signed_objectives(kind):
    net = tiny_net(kind, seed=4)
    assert sum(p.numel() for p in net.parameters()) < 5000
    x_r, x_n, target = tiny_batch(kind, seed=4)
    w = LossWeights(0.3, 0.2)
    net.zero_grad()
    total, _ = net.objective(x_r, target, x_n, net.manifold_codes(target), w)
    total.backward()
    for k, (params, obj) in enumerate(signed_objectives(net, x_r, x_n, target, w)):
        grads = [p.grad.clone() for p in params]
        rows, skipped = finite_difference_check(obj, params, n=10, seed=k, grads=grads)
        assert len(rows) == 10
        assert max(r[-1] for r in rows) < 1e-2, rows
