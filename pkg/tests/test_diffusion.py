"""Schedule construction, forward diffusion, and the deterministic DDIM sampler."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from geodiffusion.diffusion import (
    DiffusionSchedule,
    build_schedule,
    ddim_sample,
    ddim_timesteps,
    forward_diffuse,
)


def oracle_alpha_bars(betas):
    """Cumulative product via plain Python floats, no numpy."""
    out = []
    acc = 1.0
    for b in betas:
        acc *= 1.0 - float(b)
        out.append(acc)
    return out


class TestBuildSchedule:
    def test_single_step(self):
        sched = build_schedule(1, 0.5, 0.5)
        assert sched.num_steps == 1
        assert sched.alpha_bars.shape == (1,)
        assert sched.alpha_bars[0] == pytest.approx(0.5, abs=1e-15)
        assert sched.alphas[0] == pytest.approx(math.sqrt(0.5), abs=1e-15)
        assert sched.sigmas[0] == pytest.approx(math.sqrt(0.5), abs=1e-15)

    def test_default_matches_cumprod_oracle(self):
        sched = build_schedule()
        assert sched.num_steps == 1000
        assert sched.betas[0] == pytest.approx(1e-4, abs=0)
        assert sched.betas[-1] == pytest.approx(0.02, abs=0)
        oracle = oracle_alpha_bars(sched.betas)
        np.testing.assert_allclose(sched.alpha_bars, oracle, rtol=1e-14, atol=0)

    def test_default_endpoint_nearly_pure_noise(self):
        sched = build_schedule()
        assert sched.alpha_bars[-1] < 0.01
        assert np.all(np.diff(sched.alpha_bars) < 0)

    def test_alpha_sigma_unit_energy(self):
        sched = build_schedule()
        energy = sched.alphas**2 + sched.sigmas**2
        assert np.max(np.abs(energy - 1.0)) <= 1e-12

    @pytest.mark.parametrize(
        "steps,start,end",
        [
            (0, 1e-4, 0.02),
            (10, 0.0, 0.02),
            (10, -1e-4, 0.02),
            (10, 0.02, 1e-4),
            (10, 1e-4, 1.0),
        ],
    )
    def test_invalid_arguments(self, steps, start, end):
        with pytest.raises(ValueError):
            build_schedule(steps, start, end)

    @given(
        steps=st.integers(min_value=1, max_value=200),
        start=st.floats(min_value=1e-6, max_value=0.01),
        spread=st.floats(min_value=0.0, max_value=0.5),
    )
    @settings(max_examples=50, deadline=None)
    def test_properties_hold_for_any_valid_schedule(self, steps, start, spread):
        end = min(start * (1.0 + spread) + spread * 0.1, 0.9)
        sched = build_schedule(steps, start, end)
        assert np.all(sched.alpha_bars > 0)
        assert np.all(sched.alpha_bars < 1)
        assert np.all(np.diff(sched.alpha_bars) <= 0)
        assert np.max(np.abs(sched.alphas**2 + sched.sigmas**2 - 1.0)) <= 1e-12


class TestForwardDiffuse:
    def setup_method(self):
        self.sched = build_schedule(100)

    def test_zero_noise_scales_by_alpha(self):
        z = torch.randn(2, 3, 4, 4, dtype=torch.float64)
        out = forward_diffuse(z, 50, torch.zeros_like(z), self.sched)
        expected = self.sched.alphas[50] * z
        assert torch.allclose(out, expected, atol=1e-15)

    def test_zero_signal_scales_by_sigma(self):
        eps = torch.randn(2, 3, 4, 4, dtype=torch.float64)
        out = forward_diffuse(torch.zeros_like(eps), 50, eps, self.sched)
        expected = self.sched.sigmas[50] * eps
        assert torch.allclose(out, expected, atol=1e-15)

    def test_t0_stays_near_signal(self):
        # At the first timestep almost no noise has been mixed in, so the
        # output deviates from z by at most sigma_0 ||eps|| plus the tiny
        # (1 - alpha_0) shrinkage.
        z = torch.randn(8, 3, 8, 8, dtype=torch.float64)
        eps = torch.randn_like(z)
        out = forward_diffuse(z, 0, eps, self.sched)
        bound = self.sched.sigmas[0] * eps.norm() + (1 - self.sched.alphas[0]) * z.norm()
        assert (out - z).norm() <= bound + 1e-12

    def test_per_batch_timesteps_match_scalar_calls(self):
        z = torch.randn(4, 3, 4, 4, dtype=torch.float64)
        eps = torch.randn_like(z)
        t = torch.tensor([0, 17, 50, 99])
        batched = forward_diffuse(z, t, eps, self.sched)
        for i in range(4):
            single = forward_diffuse(z[i : i + 1], int(t[i]), eps[i : i + 1], self.sched)
            assert torch.equal(batched[i : i + 1], single)

    def test_shape_mismatch_rejected(self):
        z = torch.zeros(2, 3, 4, 4)
        with pytest.raises(ValueError, match="shape"):
            forward_diffuse(z, 0, torch.zeros(2, 3, 4, 5), self.sched)

    @pytest.mark.parametrize("t", [-1, 100, 1000])
    def test_timestep_out_of_range(self, t):
        z = torch.zeros(1, 3, 4, 4)
        with pytest.raises(ValueError, match="timestep"):
            forward_diffuse(z, t, torch.zeros_like(z), self.sched)


class TestDdimTimesteps:
    def test_canonical_grid(self):
        taus = ddim_timesteps(1000, 100)
        assert len(taus) == 100
        assert taus[0] == 999
        assert taus[-1] == 9
        oracle = sorted((((i + 1) * 1000) // 100 - 1 for i in range(100)), reverse=True)
        assert taus == oracle

    def test_full_grid_visits_every_step(self):
        assert ddim_timesteps(10, 10) == list(range(9, -1, -1))

    def test_single_step_grid(self):
        assert ddim_timesteps(1000, 1) == [999]

    @given(
        num_steps=st.integers(min_value=1, max_value=500),
        data=st.data(),
    )
    @settings(max_examples=50, deadline=None)
    def test_grid_is_valid_descending_subsequence(self, num_steps, data):
        sample_steps = data.draw(st.integers(min_value=1, max_value=num_steps))
        taus = ddim_timesteps(num_steps, sample_steps)
        assert len(taus) == sample_steps
        assert taus[0] == num_steps - 1
        assert all(0 <= t < num_steps for t in taus)
        assert all(a > b for a, b in zip(taus, taus[1:]))

    def test_too_many_steps_rejected(self):
        with pytest.raises(ValueError, match="exceeds"):
            ddim_timesteps(50, 51)

    def test_zero_steps_rejected(self):
        with pytest.raises(ValueError):
            ddim_timesteps(50, 0)


def single_point_eps(sched: DiffusionSchedule, target: torch.Tensor):
    """Ideal denoiser when the whole data distribution is a single point.

    If x = alpha_t z* + sigma_t eps then eps = (x - alpha_t z*) / sigma_t;
    with this predictor every DDIM step lands x0_hat exactly on z*.
    """

    def eps_fn(x, tau):
        a = float(sched.alphas[tau])
        s = float(sched.sigmas[tau])
        return (x - a * target) / s

    return eps_fn


class TestDdimSample:
    def test_recovers_single_point_exactly(self):
        sched = build_schedule(200)
        target = torch.randn(1, 3, 8, 8, dtype=torch.float64)
        x_init = torch.randn_like(target)
        out = ddim_sample(single_point_eps(sched, target), sched, x_init, sample_steps=20)
        assert (out - target).abs().max() <= 1e-12

    def test_recovery_independent_of_start_noise(self):
        sched = build_schedule(100)
        target = torch.randn(2, 3, 4, 4, dtype=torch.float64)
        eps_fn = single_point_eps(sched, target)
        a = ddim_sample(eps_fn, sched, torch.randn_like(target), sample_steps=10)
        b = ddim_sample(eps_fn, sched, torch.randn_like(target) * 5, sample_steps=10)
        assert (a - target).abs().max() <= 1e-12
        assert (b - target).abs().max() <= 1e-12

    def test_guidance_one_skips_unconditional_branch(self):
        sched = build_schedule(100)
        target = torch.randn(1, 3, 4, 4, dtype=torch.float64)
        eps_fn = single_point_eps(sched, target)
        x_init = torch.randn_like(target)

        def tripwire(x, tau):
            raise AssertionError("unconditional branch must not run at guidance 1.0")

        plain = ddim_sample(eps_fn, sched, x_init, sample_steps=10)
        guided = ddim_sample(
            eps_fn, sched, x_init, sample_steps=10, guidance=1.0, uncond_eps_fn=tripwire
        )
        assert torch.equal(plain, guided)

    def test_guidance_blend_formula(self):
        # One-step schedule: output is x0_hat under the blended prediction,
        # eps_hat = eps_u + g (eps_c - eps_u), checked by hand.
        sched = build_schedule(1, 0.3, 0.3)
        x = torch.full((1, 1, 2, 2), 2.0, dtype=torch.float64)
        eps_c = torch.full_like(x, 0.5)
        eps_u = torch.full_like(x, -0.25)
        g = 2.5
        out = ddim_sample(
            lambda xi, tau: eps_c.clone(),
            sched,
            x,
            sample_steps=1,
            guidance=g,
            uncond_eps_fn=lambda xi, tau: eps_u.clone(),
        )
        eps_hat = eps_u + g * (eps_c - eps_u)
        a0, s0 = float(sched.alphas[0]), float(sched.sigmas[0])
        expected = (x - s0 * eps_hat) / a0
        assert torch.allclose(out, expected, atol=1e-15)

    def test_same_inputs_bitwise_deterministic(self):
        sched = build_schedule(100)
        target = torch.randn(1, 3, 4, 4, dtype=torch.float64)
        eps_fn = single_point_eps(sched, target)
        x_init = torch.randn_like(target)
        a = ddim_sample(eps_fn, sched, x_init, sample_steps=25)
        b = ddim_sample(eps_fn, sched, x_init, sample_steps=25)
        assert torch.equal(a, b)

    def test_more_steps_than_schedule_rejected(self):
        sched = build_schedule(50)
        x = torch.zeros(1, 1, 2, 2)
        with pytest.raises(ValueError, match="exceeds"):
            ddim_sample(lambda xi, tau: xi, sched, x, sample_steps=51)
