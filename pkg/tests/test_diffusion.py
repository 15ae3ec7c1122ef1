import math

import numpy as np
import pytest
import torch

from ltrajdiff.core import ValidationError
from ltrajdiff.diffusion import (
    NoisePredictor,
    NoiseSchedule,
    denoise_step,
    diffusion_loss,
    forward_diffuse,
    linear_schedule,
    sample_sequence,
)
from ltrajdiff.encoders import EncoderConfig

SCHEDULE4 = linear_schedule(4, 0.1, 0.4)  # betas exactly [0.1, 0.2, 0.3, 0.4]
CFG = EncoderConfig(embed_dim=16, num_heads=2, num_layers=1, feedforward_dim=32, max_len=64)


class TestSchedule:
    def test_hand_cumulative_product(self):
        assert np.allclose(SCHEDULE4.betas, [0.1, 0.2, 0.3, 0.4])
        assert np.allclose(SCHEDULE4.alpha_bars, [0.9, 0.72, 0.504, 0.3024])

    def test_single_step(self):
        sched = linear_schedule(1, 0.5, 0.5)
        assert np.allclose(sched.alpha_bars, [0.5])

    def test_default_terminal_level(self):
        # independent plain-python product over the same linear grid
        sched = linear_schedule(100, 1e-4, 0.05)
        betas = [1e-4 + i * (0.05 - 1e-4) / 99 for i in range(100)]
        expected = math.prod(1.0 - b for b in betas)
        assert sched.alpha_bars[-1] == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(0.0782, abs=5e-4)

    def test_recurrence_exact(self):
        sched = linear_schedule(50, 1e-3, 0.2)
        for k in range(1, 50):
            assert sched.alpha_bars[k] == pytest.approx(
                sched.alpha_bars[k - 1] * sched.alphas[k], rel=1e-15
            )
        assert np.all(np.diff(sched.alpha_bars) < 0)

    def test_bounds_validation(self):
        with pytest.raises(ValidationError):
            linear_schedule(0, 0.1, 0.2)
        with pytest.raises(ValidationError):
            linear_schedule(5, 0.0, 0.2)
        with pytest.raises(ValidationError):
            linear_schedule(5, 0.3, 0.2)
        with pytest.raises(ValidationError):
            NoiseSchedule(betas=np.array([0.4, 0.1]), alphas=np.array([0.6, 0.9]),
                          alpha_bars=np.array([0.6, 0.54]))


class TestForwardDiffuse:
    def test_zero_noise_branch(self):
        y0 = np.random.default_rng(0).normal(size=(6, 5))
        out = forward_diffuse(y0, 3, np.zeros_like(y0), SCHEDULE4)
        assert np.allclose(out, math.sqrt(0.504) * y0, atol=1e-15)

    def test_zero_signal_branch(self):
        eps = np.random.default_rng(1).normal(size=(6, 5))
        out = forward_diffuse(np.zeros_like(eps), 3, eps, SCHEDULE4)
        assert np.allclose(out, math.sqrt(1 - 0.504) * eps, atol=1e-15)

    def test_hand_value(self):
        out = forward_diffuse(np.ones((1, 1)), 2, np.ones((1, 1)), SCHEDULE4)
        assert out[0, 0] == pytest.approx(math.sqrt(0.72) + math.sqrt(0.28), abs=1e-9)
        assert out[0, 0] == pytest.approx(1.37768, abs=1e-5)

    def test_out_of_range_step(self):
        y0 = np.zeros((2, 5))
        for k in (0, 5):
            with pytest.raises(ValidationError):
                forward_diffuse(y0, k, y0, SCHEDULE4)

    def test_vector_steps_match_scalars(self):
        rng = np.random.default_rng(2)
        y0 = rng.normal(size=(3, 4, 5))
        eps = rng.normal(size=(3, 4, 5))
        batched = forward_diffuse(y0, np.array([1, 2, 4]), eps, SCHEDULE4)
        for i, k in enumerate([1, 2, 4]):
            assert np.allclose(batched[i], forward_diffuse(y0[i], k, eps[i], SCHEDULE4))

    def test_torch_tensors_same_path(self):
        rng = np.random.default_rng(3)
        y0 = rng.normal(size=(4, 5))
        eps = rng.normal(size=(4, 5))
        out_np = forward_diffuse(y0, 2, eps, SCHEDULE4)
        out_t = forward_diffuse(torch.as_tensor(y0), 2, torch.as_tensor(eps), SCHEDULE4)
        assert np.allclose(out_np, out_t.numpy(), atol=1e-15)

    def test_marginal_statistics(self):
        # Drawn forward marginals match sqrt(abar) y0 mean and 1 - abar variance.
        rng = np.random.default_rng(4)
        y0 = np.full((1, 5), 10.0)
        for k in (1, 2, 4):
            draws = np.stack(
                [forward_diffuse(y0, k, rng.standard_normal((1, 5)), SCHEDULE4) for _ in range(4000)]
            )
            abar = SCHEDULE4.alpha_bars[k - 1]
            assert np.abs(draws.mean(axis=0) - math.sqrt(abar) * y0).max() < 0.02 * math.sqrt(abar) * 10
            assert abs(draws.var() - (1 - abar)) < 0.05 * (1 - abar)


class TestLoss:
    def test_zero_on_match(self):
        eps = np.random.default_rng(0).normal(size=(5, 5))
        assert diffusion_loss(eps, eps) == 0.0

    def test_mean_of_ones(self):
        assert diffusion_loss(np.ones((3, 5)), np.zeros((3, 5)), 1.0) == pytest.approx(1.0)

    def test_weight_linearity(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
        assert diffusion_loss(a, b, 2.0) == pytest.approx(2 * diffusion_loss(a, b, 1.0))

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(6, 5)), rng.normal(size=(6, 5))
        perm = rng.permutation(6)
        assert diffusion_loss(a[perm], b[perm]) == pytest.approx(diffusion_loss(a, b))

    def test_weight_positive(self):
        with pytest.raises(ValidationError):
            diffusion_loss(np.zeros((2, 5)), np.zeros((2, 5)), 0.0)


class TestDenoiseStep:
    def test_final_step_deterministic(self):
        y = np.random.default_rng(0).normal(size=(4, 5))
        eps_hat = np.random.default_rng(1).normal(size=(4, 5))
        a = denoise_step(y, eps_hat, 1, SCHEDULE4, rng=np.random.default_rng(2))
        b = denoise_step(y, eps_hat, 1, SCHEDULE4, rng=np.random.default_rng(99))
        assert np.array_equal(a, b)

    def test_hand_value(self):
        # k=3, y=1, eps_hat=0 -> mean = 1/sqrt(0.7)
        out = denoise_step(np.ones((1, 1)), np.zeros((1, 1)), 3, SCHEDULE4, deterministic=True)
        assert out[0, 0] == pytest.approx(1 / math.sqrt(0.7), abs=1e-9)
        assert out[0, 0] == pytest.approx(1.19523, abs=1e-5)

    def test_noise_scale(self):
        y = np.zeros((2000, 5))
        eps_hat = np.zeros_like(y)
        rng = np.random.default_rng(3)
        out = denoise_step(y, eps_hat, 3, SCHEDULE4, rng=rng)
        assert out.std() == pytest.approx(math.sqrt(0.3), rel=0.05)

    def test_requires_rng_when_stochastic(self):
        with pytest.raises(ValidationError):
            denoise_step(np.zeros((2, 5)), np.zeros((2, 5)), 3, SCHEDULE4)

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            denoise_step(np.zeros((2, 5)), np.zeros((2, 5)), 5, SCHEDULE4)

    @pytest.mark.parametrize("K", [1, 4, 60])
    def test_chain_inversion_with_noise_oracle(self, K):
        # Supplying the true noise content of the current iterate at every
        # step and suppressing the injected noise must walk back to y0.
        sched = linear_schedule(K, 1e-4, 0.05) if K > 4 else linear_schedule(K, 0.1, 0.4)
        rng = np.random.default_rng(5)
        y0 = rng.normal(size=(7, 5)) * 3
        y = forward_diffuse(y0, K, rng.standard_normal((7, 5)), sched)
        for k in range(K, 0, -1):
            abar = sched.alpha_bars[k - 1]
            eps_true = (y - math.sqrt(abar) * y0) / math.sqrt(1 - abar)
            y = denoise_step(y, eps_true, k, sched, deterministic=True)
        assert np.abs(y - y0).max() < 1e-6


class TestNoisePredictor:
    def make(self, seed=0):
        torch.manual_seed(seed)
        return NoisePredictor(CFG, dtype=torch.float64)

    def test_shape_contract(self):
        net = self.make()
        y = torch.randn(3, 10, 5, dtype=torch.float64)
        z = torch.randn(3, 10, CFG.embed_dim, dtype=torch.float64)
        assert net(y, z, 2).shape == (3, 10, 5)
        assert net(y[0], z[0], 2).shape == (10, 5)

    def test_step_embedding_distinguishes_steps(self):
        net = self.make(1)
        y = torch.randn(1, 8, 5, dtype=torch.float64)
        z = torch.randn(1, 8, CFG.embed_dim, dtype=torch.float64)
        sched = linear_schedule(100)
        assert (net(y, z, 1) - net(y, z, sched.K)).norm() > 1e-8

    def test_zero_cross_attention_ignores_conditioning(self):
        net = self.make(2)
        with torch.no_grad():
            for layer in net.layers:
                torch.nn.init.zeros_(layer.multihead_attn.out_proj.weight)
                torch.nn.init.zeros_(layer.multihead_attn.out_proj.bias)
        y = torch.randn(2, 6, 5, dtype=torch.float64)
        z1 = torch.randn(2, 6, CFG.embed_dim, dtype=torch.float64)
        z2 = torch.randn(2, 6, CFG.embed_dim, dtype=torch.float64)
        assert torch.allclose(net(y, z1, 3), net(y, z2, 3), atol=1e-12)

    def test_per_sample_steps(self):
        net = self.make(3)
        y = torch.randn(3, 6, 5, dtype=torch.float64)
        z = torch.randn(3, 6, CFG.embed_dim, dtype=torch.float64)
        batched = net(y, z, torch.tensor([1, 5, 9]))
        for i, k in enumerate([1, 5, 9]):
            assert torch.allclose(batched[i], net(y[i : i + 1], z[i : i + 1], k)[0], atol=1e-12)

    def test_deterministic(self):
        net = self.make(4)
        y = torch.randn(1, 6, 5, dtype=torch.float64)
        z = torch.randn(1, 6, CFG.embed_dim, dtype=torch.float64)
        assert torch.equal(net(y, z, 3), net(y, z, 3))


class TestSampling:
    def test_loop_runs_exactly_K_predictions(self):
        calls = []

        def predict_fn(y, k):
            calls.append(k)
            return torch.zeros_like(y)

        z = torch.zeros(6, CFG.embed_dim, dtype=torch.float64)
        sample_sequence(predict_fn, z, SCHEDULE4, np.random.default_rng(0))
        assert calls == [4, 3, 2, 1]

    def test_zero_predictor_telescopes(self):
        def predict_fn(y, k):
            return torch.zeros_like(y)

        z = torch.zeros(6, CFG.embed_dim, dtype=torch.float64)
        out = sample_sequence(predict_fn, z, SCHEDULE4, np.random.default_rng(7), deterministic=True)
        start = np.random.default_rng(7).standard_normal((1, 6, 5))[0]
        expected = start / math.sqrt(SCHEDULE4.alpha_bars[-1])
        assert np.allclose(out.numpy(), expected, atol=1e-12)

    def test_fixed_seed_reproducible(self):
        torch.manual_seed(5)
        net = NoisePredictor(CFG, dtype=torch.float64)
        z = torch.randn(2, 6, CFG.embed_dim, dtype=torch.float64)
        a = sample_sequence(lambda y, k: net(y, z, k), z, SCHEDULE4, np.random.default_rng(3))
        b = sample_sequence(lambda y, k: net(y, z, k), z, SCHEDULE4, np.random.default_rng(3))
        assert torch.equal(a, b)


class TestGradients:
    def test_finite_difference_through_the_stack(self):
        # Deterministic mini training loss over decoder + fusion params.
        torch.manual_seed(6)
        net = NoisePredictor(CFG, dtype=torch.float64)
        sched = linear_schedule(5, 1e-3, 0.3)
        rng = np.random.default_rng(8)
        y0 = torch.as_tensor(rng.normal(size=(2, 6, 5)))
        eps = torch.as_tensor(rng.normal(size=(2, 6, 5)))
        z = torch.as_tensor(rng.normal(size=(2, 6, CFG.embed_dim)))

        def loss_value():
            y_k = forward_diffuse(y0, 3, eps, sched)
            return diffusion_loss(net(y_k, z, 3), eps)

        loss = loss_value()
        loss.backward()
        checked = 0
        g = torch.Generator().manual_seed(0)
        for name, p in net.named_parameters():
            if p.grad is None or p.numel() == 0:
                continue
            flat = p.grad.flatten()
            idx = int(torch.randint(flat.numel(), (1,), generator=g))
            if abs(flat[idx]) < 1e-7:
                idx = int(flat.abs().argmax())
            step = 1e-5
            with torch.no_grad():
                orig = p.flatten()[idx].item()
                p.flatten()[idx] = orig + step
                up = loss_value().item()
                p.flatten()[idx] = orig - step
                down = loss_value().item()
                p.flatten()[idx] = orig
            fd = (up - down) / (2 * step)
            ad = flat[idx].item()
            if abs(fd) + abs(ad) < 1e-10:
                continue
            assert abs(fd - ad) / max(abs(fd), abs(ad)) < 1e-4, name
            checked += 1
        assert checked >= 5
