"""Forward noising schedule and the deterministic DDIM sampler.

The schedule is the standard linear-beta variance-preserving chain; all
schedule arithmetic is float64 and the sampler is a pure function of an
epsilon-predictor callable, so tests can drive it with closed-form predictors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch


@dataclass(frozen=True)
class DiffusionSchedule:
    """Linear-beta schedule; alpha[t] = sqrt(prod(1-beta)), sigma[t] = sqrt(1-alpha^2)."""

    betas: np.ndarray
    alpha_bars: np.ndarray
    alphas: np.ndarray  # sqrt(alpha_bar)
    sigmas: np.ndarray  # sqrt(1 - alpha_bar)

    @property
    def num_steps(self) -> int:
        return len(self.betas)


def build_schedule(
    num_steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02
) -> DiffusionSchedule:
    if num_steps < 1:
        raise ValueError(f"num_steps must be >= 1, got {num_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
    alpha_bars = np.cumprod(1.0 - betas)
    return DiffusionSchedule(
        betas=betas,
        alpha_bars=alpha_bars,
        alphas=np.sqrt(alpha_bars),
        sigmas=np.sqrt(1.0 - alpha_bars),
    )


def forward_diffuse(
    z: torch.Tensor, t: torch.Tensor | int, eps: torch.Tensor, schedule: DiffusionSchedule
) -> torch.Tensor:
    """z_t = alpha[t] * z + sigma[t] * eps, with t scalar or per-batch."""
    if z.shape != eps.shape:
        raise ValueError(f"z shape {tuple(z.shape)} != eps shape {tuple(eps.shape)}")
    t_idx = torch.as_tensor(t, dtype=torch.long)
    if (t_idx < 0).any() or (t_idx >= schedule.num_steps).any():
        raise ValueError(f"timestep out of range [0, {schedule.num_steps})")
    alpha = torch.as_tensor(schedule.alphas, dtype=z.dtype)[t_idx]
    sigma = torch.as_tensor(schedule.sigmas, dtype=z.dtype)[t_idx]
    while alpha.dim() < z.dim():
        alpha = alpha.unsqueeze(-1)
        sigma = sigma.unsqueeze(-1)
    return alpha * z + sigma * eps


def ddim_timesteps(num_steps: int, sample_steps: int) -> list[int]:
    """Evenly spaced descending timestep subsequence ending at the low end.

    tau_i = ((i+1) * T) // S - 1 for i = S-1 .. 0, e.g. T=1000, S=100 gives
    999, 989, ..., 9. sample_steps must be in [1, T].
    """
    if sample_steps < 1:
        raise ValueError(f"sample_steps must be >= 1, got {sample_steps}")
    if sample_steps > num_steps:
        raise ValueError(f"sample_steps {sample_steps} exceeds schedule length {num_steps}")
    taus = [((i + 1) * num_steps) // sample_steps - 1 for i in range(sample_steps)]
    return taus[::-1]


EpsPredictor = Callable[[torch.Tensor, int], torch.Tensor]


def ddim_sample(
    eps_fn: EpsPredictor,
    schedule: DiffusionSchedule,
    x_init: torch.Tensor,
    sample_steps: int,
    guidance: float = 1.0,
    uncond_eps_fn: EpsPredictor | None = None,
) -> torch.Tensor:
    """Deterministic DDIM trajectory from x_init (noise at the top timestep).

    Each step forms x0_hat = (x - sigma_t * eps) / alpha_t and re-noises it to
    the previous timestep; the final step targets (alpha=1, sigma=0), i.e.
    returns x0_hat itself. guidance g blends eps_u + g * (eps_c - eps_u); at
    exactly g == 1.0 the unconditional branch is never evaluated and the
    result is bitwise identical to the guidance-free path.
    """
    taus = ddim_timesteps(schedule.num_steps, sample_steps)
    use_guidance = guidance != 1.0 and uncond_eps_fn is not None
    x = x_init
    for pos, tau in enumerate(taus):
        eps = eps_fn(x, tau)
        if use_guidance:
            eps_u = uncond_eps_fn(x, tau)
            eps = eps_u + guidance * (eps - eps_u)
        alpha_t = float(schedule.alphas[tau])
        sigma_t = float(schedule.sigmas[tau])
        x0_hat = (x - sigma_t * eps) / alpha_t
        if pos + 1 < len(taus):
            tau_prev = taus[pos + 1]
            alpha_p = float(schedule.alphas[tau_prev])
            sigma_p = float(schedule.sigmas[tau_prev])
            x = alpha_p * x0_hat + sigma_p * eps
        else:
            # Final target is (alpha=1, sigma=0): the clean estimate itself.
            x = x0_hat
    return x
