"""Codec core: GDN, quantizers, rate model, transforms, entropy params."""

import math
from pathlib import Path

import numpy as np
import pytest
import torch

from scicodec.models import (CapabilityError, FactorizedPrior, GDN, MultiTaskCodec,
                             PaddingRequiredError, gaussian_bin_likelihood, gdn,
                             bits_from_likelihood, quantize, round_away)

GOLDEN = Path(__file__).parent / "golden" / "model_tensors.npz"


class TestGdn:
    def test_zero_input_maps_to_zero(self):
        beta = torch.ones(4)
        gamma = torch.rand(4, 4) * 0.1
        x = torch.zeros(1, 4, 5, 5)
        assert torch.all(gdn(x, beta, gamma) == 0)

    def test_identity_when_gamma_zero_beta_one(self, rng):
        x = torch.from_numpy(rng.standard_normal((1, 3, 6, 6)).astype(np.float32))
        out = gdn(x, torch.ones(3), torch.zeros(3, 3))
        assert torch.allclose(out, x)

    def test_matches_scalar_loop(self, rng):
        c = 5
        x = rng.standard_normal((2, c, 3, 4)).astype(np.float64)
        beta = rng.uniform(0.5, 2.0, c)
        gamma = rng.uniform(0.0, 0.3, (c, c))
        got = gdn(torch.from_numpy(x), torch.from_numpy(beta), torch.from_numpy(gamma)).numpy()
        want = np.empty_like(x)
        for b in range(2):
            for i in range(c):
                for h in range(3):
                    for w in range(4):
                        denom = beta[i]
                        for j in range(c):
                            denom += gamma[i, j] * x[b, j, h, w] ** 2
                        want[b, i, h, w] = x[b, i, h, w] / math.sqrt(denom)
        assert np.allclose(got, want, atol=1e-6)

    def test_forward_then_inverse_is_identity(self, rng):
        c = 6
        x = torch.from_numpy(rng.standard_normal((1, c, 8, 8)).astype(np.float64))
        beta = torch.from_numpy(rng.uniform(0.5, 2.0, c))
        gamma = torch.from_numpy(rng.uniform(0.0, 0.2, (c, c)))
        fwd = gdn(x, beta, gamma)
        # the inverse uses the *reconstructed* activations' pool, so apply it
        # with the denominator evaluated at the forward output
        back = gdn(fwd, beta, gamma, inverse=True)
        # not an exact inverse pair (pools differ); the layer-level identity
        # is with the same pool, checked below
        same_pool = fwd * torch.sqrt(
            beta.view(1, c, 1, 1)
            + torch.einsum("ij,bjhw->bihw", gamma, x * x))
        assert torch.allclose(same_pool, x, atol=1e-5)
        assert back.shape == x.shape

    def test_layer_enforces_positive_params(self):
        layer = GDN(4)
        assert torch.all(layer.beta > 0)
        assert torch.all(layer.gamma >= 0)

    def test_functional_rejects_bad_params(self):
        x = torch.zeros(1, 2, 2, 2)
        with pytest.raises(ValueError):
            gdn(x, torch.tensor([0.0, 1.0]), torch.zeros(2, 2))
        with pytest.raises(ValueError):
            gdn(x, torch.ones(2), torch.full((2, 2), -0.1))


class TestQuantize:
    def test_round_ties_away_from_zero(self):
        x = torch.tensor([0.4, -1.5, 1.5, 2.5, -0.5, 0.0])
        out = round_away(x)
        assert out.tolist() == [0.0, -2.0, 2.0, 3.0, -1.0, 0.0]

    def test_noise_support(self):
        g = torch.Generator().manual_seed(0)
        y = torch.full((100_000,), 1.3)
        out = quantize(y, "noise", g)
        assert torch.all(out >= y - 0.5)
        assert torch.all(out < y + 0.5)

    def test_noise_mean_monte_carlo(self):
        g = torch.Generator().manual_seed(1)
        y = torch.full((100_000,), 1.3, dtype=torch.float64)
        out = quantize(y, "noise", g)
        assert float(out.mean()) == pytest.approx(1.3, abs=0.01)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            quantize(torch.zeros(3), "stochastic")


class TestRateModel:
    def test_unit_gaussian_center_bin(self):
        from scipy.stats import norm
        ones = torch.ones(1, dtype=torch.float64)
        p = gaussian_bin_likelihood(torch.zeros(1, dtype=torch.float64),
                                    torch.zeros(1, dtype=torch.float64), ones)
        want = norm.cdf(0.5) - norm.cdf(-0.5)
        assert float(p) == pytest.approx(want, abs=1e-9)
        bits = bits_from_likelihood(p)
        assert float(bits) == pytest.approx(-math.log2(want), abs=5e-4)
        assert float(bits) == pytest.approx(1.3848, abs=5e-4)

    def test_bits_nonnegative(self, rng):
        x = torch.from_numpy(rng.integers(-20, 20, 1000).astype(np.float64))
        mu = torch.from_numpy(rng.standard_normal(1000))
        sigma = torch.from_numpy(rng.uniform(0.11, 30, 1000))
        bits = bits_from_likelihood(gaussian_bin_likelihood(x, mu, sigma))
        assert torch.all(bits >= 0)
        assert torch.all(bits <= 50.0 + 1e-9)  # likelihood floor

    def test_rate_additive_over_concatenation(self, rng):
        x = torch.from_numpy(rng.integers(-5, 5, 64).astype(np.float64))
        mu = torch.zeros(64)
        sigma = torch.full((64,), 2.0, dtype=torch.float64)
        bits = bits_from_likelihood(gaussian_bin_likelihood(x, mu, sigma))
        total = float(bits.sum())
        part = float(bits[:20].sum()) + float(bits[20:].sum())
        assert total == pytest.approx(part, rel=1e-12)

    def test_sigma_floor_enforced(self):
        with pytest.raises(ValueError):
            gaussian_bin_likelihood(torch.zeros(1), torch.zeros(1), torch.tensor([0.05]))


class TestFactorizedPrior:
    def test_cdf_monotone_and_bounded(self):
        prior = FactorizedPrior(4)
        xs = torch.linspace(-30, 30, 201).view(1, 1, -1).repeat(4, 1, 1)
        cdf = prior.cdf(xs)
        assert torch.all(cdf[:, :, 1:] >= cdf[:, :, :-1])
        assert torch.all(cdf >= 0) and torch.all(cdf <= 1)

    def test_likelihood_positive_and_normalized(self):
        prior = FactorizedPrior(3)
        z = torch.arange(-50, 51).float().view(1, 1, 1, -1).repeat(1, 3, 1, 1)
        with torch.no_grad():
            p = prior.bin_likelihood(z)
        assert torch.all(p > 0)
        assert float(p.sum(dim=-1).max()) <= 1.0 + 1e-4


class TestTransformShapes:
    def test_four_stage_shape_contract(self):
        m = MultiTaskCodec(backbone="hyperprior", decoders=1, latent_channels=192,
                           hyper_channels=128, stages=4, seed=0)
        x = torch.rand(1, 3, 512, 512)
        with torch.no_grad():
            y = m.analysis(x)
            assert y.shape == (1, 192, 32, 32)
            z = m.hyper_analysis(y)
            assert z.shape == (1, 128, 8, 8)
            x_hat = m.synthesis(y)
            assert x_hat.shape == (1, 3, 512, 512)

    def test_all_zero_input_zero_latent(self, tiny_model):
        # biases init to zero, so conv(0) = 0 and GDN(0) = 0 stage by stage
        with torch.no_grad():
            y = tiny_model.analysis(torch.zeros(1, 3, 32, 32))
        assert torch.all(y == 0)

    def test_entropy_scale_floor(self, tiny_model):
        lat = tiny_model.quantize_latents(torch.rand(1, 3, 32, 32))
        assert float(lat.sigma.min()) >= 0.11

    def test_indivisible_shape_raises(self, tiny_model):
        with pytest.raises(PaddingRequiredError):
            tiny_model.analysis(torch.rand(1, 3, 33, 32))
        with pytest.raises(PaddingRequiredError):
            tiny_model(torch.rand(1, 3, 40, 40))  # 40 % 4 == 0 but 40 % 16 != 0

    def test_segmentation_output_shape_and_range(self, tiny_model, rng):
        x = torch.rand(1, 3, 32, 32)
        lat = tiny_model.quantize_latents(x)
        x_hat, s_hat = tiny_model.synthesize(lat.y_hat)
        assert s_hat.shape == (1, 1, 32, 32)
        assert torch.all(s_hat >= 0) and torch.all(s_hat <= 1)
        assert torch.all(x_hat >= 0) and torch.all(x_hat <= 1)

    def test_single_decoder_has_no_seg_head(self):
        m = MultiTaskCodec(backbone="hyperprior", decoders=1, latent_channels=16,
                           hyper_channels=8, hidden_channels=8, stages=2, seed=0)
        with pytest.raises(CapabilityError):
            m.synthesize_segmentation(torch.rand(1, 16, 4, 4))

    def test_golden_tensors(self):
        data = np.load(GOLDEN)
        m = MultiTaskCodec(backbone="channel-ar", decoders=2, latent_channels=16,
                           hyper_channels=8, hidden_channels=8, stages=2, slices=2,
                           seed=1234)
        x = torch.from_numpy(data["x"])
        with torch.no_grad():
            y = m.analysis(x)
            z = m.hyper_analysis(y)
            feats = m.hyper_synthesis(torch.round(z))
            mu, sigma = m.base_params(feats)
            x_hat = m.synthesis(y)
        for got, name in [(y, "y"), (z, "z"), (mu, "mu"), (sigma, "sigma"), (x_hat, "x_hat")]:
            assert np.allclose(got.numpy(), data[name], atol=1e-6), name


class TestChannelAR:
    def test_single_slice_reduces_to_hyperprior(self):
        ar = MultiTaskCodec(backbone="channel-ar", decoders=1, latent_channels=16,
                            hyper_channels=8, hidden_channels=8, stages=2, slices=1, seed=5)
        hp = MultiTaskCodec(backbone="hyperprior", decoders=1, latent_channels=16,
                            hyper_channels=8, hidden_channels=8, stages=2, seed=5)
        x = torch.rand(1, 3, 32, 32)
        g1 = torch.Generator().manual_seed(9)
        g2 = torch.Generator().manual_seed(9)
        out_ar = ar(x, g1)
        out_hp = hp(x, g2)
        assert torch.equal(out_ar.y_bits, out_hp.y_bits)
        assert torch.equal(out_ar.x_hat, out_hp.x_hat)

    def test_causality_perturbing_later_slice(self, tiny_ar_model, rng):
        m = tiny_ar_model
        x = torch.rand(1, 3, 32, 32)
        with torch.no_grad():
            y = m.analysis(x)
            z_hat = round_away(m.hyper_analysis(y))
            feats = m.hyper_synthesis(z_hat)
            mu1, sigma1 = m.entropy_params(feats, y)
            y_pert = y.clone()
            lo, _ = m._slice_bounds(2)
            y_pert[:, lo:] += 3.0  # perturb slices 2 and 3
            mu2, sigma2 = m.entropy_params(feats, y_pert)
        cut = m._slice_bounds(2)[0]
        assert torch.equal(mu1[:, :cut], mu2[:, :cut])
        assert torch.equal(sigma1[:, :cut], sigma2[:, :cut])
        assert not torch.equal(mu1[:, cut:], mu2[:, cut:])

    def test_slice_count_must_divide_channels(self):
        with pytest.raises(ValueError):
            MultiTaskCodec(backbone="channel-ar", latent_channels=16, slices=3,
                           hyper_channels=8, stages=2)


class TestDeterministicInit:
    def test_shared_modules_identical_across_decoder_counts(self):
        m1 = MultiTaskCodec(backbone="hyperprior", decoders=1, latent_channels=16,
                            hyper_channels=8, hidden_channels=8, stages=2, seed=77)
        m2 = MultiTaskCodec(backbone="hyperprior", decoders=2, latent_channels=16,
                            hyper_channels=8, hidden_channels=8, stages=2, seed=77)
        p1 = dict(m1.named_parameters())
        p2 = dict(m2.named_parameters())
        for name, t1 in p1.items():
            assert torch.equal(t1, p2[name]), name

    def test_same_seed_same_init(self):
        kw = dict(backbone="hyperprior", decoders=2, latent_channels=16,
                  hyper_channels=8, hidden_channels=8, stages=2)
        a = MultiTaskCodec(seed=3, **kw)
        b = MultiTaskCodec(seed=3, **kw)
        for (n1, t1), (n2, t2) in zip(a.named_parameters(), b.named_parameters()):
            assert n1 == n2 and torch.equal(t1, t2)

    def test_different_seed_different_init(self):
        kw = dict(backbone="hyperprior", decoders=1, latent_channels=16,
                  hyper_channels=8, hidden_channels=8, stages=2)
        a = MultiTaskCodec(seed=3, **kw)
        b = MultiTaskCodec(seed=4, **kw)
        assert any(not torch.equal(t1, t2)
                   for (_, t1), (_, t2) in zip(a.named_parameters(), b.named_parameters()))
