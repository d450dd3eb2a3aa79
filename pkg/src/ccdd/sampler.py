"""Joint reverse sampler.

Each step runs the denoiser once (twice under guidance), updates tokens with
the Bayes posterior of the forward chain, and updates latents with a DDIM
mean plus optional DDPM noise. Two variance conventions are provided: the
forward-kernel std written literally in the update rule, and the
conjugate-Gaussian posterior std whose one-step law is exactly correct.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .embedder import Codebook, decode_nn
from .errors import ConfigError, DomainError, InputError
from .schedules import ContinuousSchedule, DiscreteSchedule

logger = logging.getLogger(__name__)

T_CLAMP = 1.0 - 1e-6  # keeps alpha_t > 0 in the z0 reconstruction


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = 64
    t_floor: float = 1e-4
    eta_ddpm: float = 0.0
    cfg_w: float = 1.0
    variance_mode: str = "exact_posterior"
    temperature: float = 1.0
    decode_source: str = "discrete_tokens"
    argmax_tokens: bool = False
    grid_shape: str = "uniform_angle"

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigError("n_steps must be >= 1")
        if not 0.0 <= self.eta_ddpm <= 1.0:
            raise ConfigError("eta_ddpm must lie in [0, 1]")
        if self.variance_mode not in ("alg2_literal", "exact_posterior"):
            raise ConfigError(f"unknown variance_mode {self.variance_mode!r}")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.decode_source not in ("discrete_tokens", "nn_from_latent"):
            raise ConfigError(f"unknown decode_source {self.decode_source!r}")
        if self.grid_shape not in ("uniform_angle", "uniform_t"):
            raise ConfigError(f"unknown grid_shape {self.grid_shape!r}")

    def time_grid(self, schedule: Optional[ContinuousSchedule] = None) -> list[float]:
        """Strictly decreasing times from 1 down to t_floor.

        uniform_t spaces times evenly. uniform_angle spaces the noise angle
        asin(sigma_t) evenly, which equidistributes the per-step rotation of
        the (alpha, sigma) frame and minimizes the reverse integrator's
        variance contraction for a fixed step count.
        """
        k = self.n_steps
        if self.grid_shape == "uniform_t" or schedule is None:
            grid = [max(1.0 - i / k, self.t_floor) for i in range(k + 1)]
        else:
            grid = _angle_grid(schedule, k, self.t_floor)
        if any(b >= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("time grid must be strictly decreasing; lower n_steps")
        return grid


def _angle_grid(schedule: ContinuousSchedule, n_steps: int, t_floor: float) -> list[float]:
    def sigma(t: float) -> float:
        return schedule.alpha_sigma(t)[1]

    theta_hi = math.asin(min(sigma(1.0 - 1e-9), 1.0))
    theta_lo = math.asin(sigma(t_floor))
    grid = [1.0]
    for i in range(1, n_steps):
        target = math.sin(theta_hi - i * (theta_hi - theta_lo) / n_steps)
        lo, hi = t_floor, 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if sigma(mid) < target:
                lo = mid
            else:
                hi = mid
        grid.append(0.5 * (lo + hi))
    grid.append(t_floor)
    return grid


def predict_z0(
    z_t: torch.Tensor, eps_hat: torch.Tensor, t: float, schedule: ContinuousSchedule
) -> torch.Tensor:
    """Invert the forward marginal: z0 = (z_t - sigma_t * eps_hat) / alpha_t."""
    alpha, sigma = schedule.alpha_sigma(min(t, T_CLAMP))
    if alpha == 0.0:
        raise DomainError(f"alpha_t vanishes at t={t}; the grid must avoid it")
    return (z_t - sigma * eps_hat) / alpha


def step_continuous(
    z_t: torch.Tensor,
    eps_hat: torch.Tensor,
    t: float,
    s: float,
    schedule: ContinuousSchedule,
    config: SamplerConfig,
    rng: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Move latents from time t to s < t."""
    if s >= t:
        raise InputError(f"reverse step requires s < t, got s={s}, t={t}")
    alpha_t, sigma_t = schedule.alpha_sigma(min(t, T_CLAMP))
    alpha_s, sigma_s = schedule.alpha_sigma(s)
    z0_hat = predict_z0(z_t, eps_hat, t, schedule)
    mean = alpha_s * z0_hat + sigma_s * eps_hat
    if config.eta_ddpm == 0.0:
        return mean
    sigma_fwd = float(np.sqrt(max(sigma_t**2 - (alpha_t / alpha_s) ** 2 * sigma_s**2, 0.0)))
    if config.variance_mode == "alg2_literal":
        sigma_pos = sigma_fwd
    else:
        sigma_pos = sigma_s * sigma_fwd / sigma_t
        residual = float(np.sqrt(max(sigma_s**2 - sigma_pos**2, 0.0)))
        mean = alpha_s * z0_hat + residual * eps_hat
    noise = torch.randn(z_t.shape, generator=rng, dtype=z_t.dtype)
    return mean + config.eta_ddpm * sigma_pos * noise


def posterior_discrete(
    x_t_pos: int,
    probs_hat: np.ndarray,
    t: float,
    s: float,
    schedule: DiscreteSchedule,
    vocab_size: int,
    generic: bool = False,
) -> np.ndarray:
    """Reverse kernel for one position, over the augmented vocabulary.

    The closed form covers masked schedules; generic=True evaluates the Bayes
    quotient by direct enumeration and works for any interpolation schedule
    (it doubles as the oracle for the closed form).
    """
    probs_hat = np.asarray(probs_hat, dtype=np.float64)
    if abs(probs_hat.sum() - 1.0) > 1e-6 or probs_hat.shape != (vocab_size,):
        raise InputError("probs_hat must be a distribution over non-mask tokens")
    mask_id = vocab_size
    eta_s = float(schedule.eta(s))
    eta_t = float(schedule.eta(t))
    if x_t_pos == mask_id and eta_t >= 1.0:
        raise InputError("inconsistent input: mask observed while eta_t = 1")
    if s >= t:
        raise InputError(f"reverse step requires s < t, got s={s}, t={t}")

    if generic or not schedule.is_masked:
        pi = schedule.pi(vocab_size)
        prior_s = eta_s * np.append(probs_hat, 0.0) + (1.0 - eta_s) * pi
        ratio = eta_t / eta_s
        kernel = (1.0 - ratio) * pi[x_t_pos] * np.ones(vocab_size + 1)
        kernel[x_t_pos] += ratio
        post = kernel * prior_s
        return post / post.sum()

    out = np.zeros(vocab_size + 1, dtype=np.float64)
    if x_t_pos != mask_id:
        out[x_t_pos] = 1.0
        return out
    out[mask_id] = (1.0 - eta_s) / (1.0 - eta_t)
    out[:vocab_size] = (eta_s - eta_t) / (1.0 - eta_t) * probs_hat
    return out


def cfg_logits(logits_c: torch.Tensor, logits_u: torch.Tensor, w: float) -> torch.Tensor:
    if logits_c.shape != logits_u.shape:
        raise InputError("guided and unguided logits must share a shape")
    return w * logits_c + (1.0 - w) * logits_u


@dataclass
class SampleResult:
    tokens: torch.Tensor  # (B, L) per decode_source
    latents: torch.Tensor  # (B, L, d) final continuous state
    raw_tokens: torch.Tensor  # (B, L) the discrete chain's terminal state
    forced_unmask: int  # positions resolved by the terminal fallback draw


def _draw_tokens(probs: torch.Tensor, argmax: bool, rng: torch.Generator) -> torch.Tensor:
    if argmax:
        return probs.argmax(dim=-1)
    return torch.multinomial(probs, 1, generator=rng).squeeze(-1)


def _model_probs(model, x, z, t_vec, config: SamplerConfig, vocab_size: int) -> torch.Tensor:
    out_c = model(x, z, t_vec, drop_continuous=False)
    logits = out_c.logits
    if config.cfg_w != 1.0:
        out_u = model(x, z, t_vec, drop_continuous=True)
        logits = cfg_logits(logits, out_u.logits, config.cfg_w)
    logits = logits / config.temperature
    return logits[..., :vocab_size].softmax(dim=-1)


def sample(
    model,
    config: SamplerConfig,
    schedule_cont: ContinuousSchedule,
    schedule_disc: DiscreteSchedule,
    vocab_size: int,
    length: int,
    batch: int,
    d_latent: int,
    rng: torch.Generator,
    codebook: Optional[Codebook] = None,
) -> SampleResult:
    """Run the reverse loop from the terminal prior down to t_floor."""
    mask_id = vocab_size
    grid = config.time_grid(schedule_cont)
    # terminal prior: every position masked for absorbing noise, a uniform
    # base-vocabulary draw otherwise
    if schedule_disc.is_masked:
        x = torch.full((batch, length), mask_id, dtype=torch.int64)
    else:
        x = torch.randint(0, vocab_size, (batch, length), generator=rng)
    z = torch.randn(batch, length, d_latent, generator=rng)

    for k in range(config.n_steps):
        t_k, t_s = grid[k], grid[k + 1]
        t_vec = torch.full((batch,), t_k, dtype=z.dtype)
        out_c = model(x, z, t_vec, drop_continuous=False)
        logits = out_c.logits
        if config.cfg_w != 1.0:
            out_u = model(x, z, t_vec, drop_continuous=True)
            logits = cfg_logits(logits, out_u.logits, config.cfg_w)
        logits = logits / config.temperature
        probs_hat = logits[..., :vocab_size].softmax(dim=-1)

        if schedule_disc.is_masked:
            x = _masked_token_update(x, probs_hat, t_k, t_s, schedule_disc, mask_id, config, rng)
        else:
            x = _generic_token_update(x, probs_hat, t_k, t_s, schedule_disc, vocab_size, config, rng)
        z = step_continuous(z, out_c.eps_hat, t_k, t_s, schedule_cont, config, rng)

    forced = 0
    still_masked = x == mask_id
    if schedule_disc.is_masked and bool(still_masked.any()):
        forced = int(still_masked.sum())
        logger.warning("forcing unmask of %d positions left at the terminal step", forced)
        t_vec = torch.full((batch,), grid[-1], dtype=z.dtype)
        probs_hat = _model_probs(model, x, z, t_vec, config, vocab_size)
        draws = _draw_tokens(probs_hat[still_masked], config.argmax_tokens, rng)
        x = x.clone()
        x[still_masked] = draws

    if config.decode_source == "nn_from_latent":
        if codebook is None:
            raise InputError("nn_from_latent decoding requires the codebook")
        tokens = decode_nn(z, codebook)
    else:
        tokens = x
    return SampleResult(tokens=tokens, latents=z, raw_tokens=x, forced_unmask=forced)


def _masked_token_update(x, probs_hat, t, s, schedule, mask_id, config, rng):
    eta_s = float(schedule.eta(s))
    eta_t = float(schedule.eta(t))
    stay_prob = (1.0 - eta_s) / (1.0 - eta_t)
    masked = x == mask_id
    coins = torch.rand(x.shape, generator=rng, dtype=torch.float64)
    unmask = masked & (coins >= stay_prob)
    if not bool(unmask.any()):
        return x
    draws = _draw_tokens(probs_hat[unmask], config.argmax_tokens, rng)
    out = x.clone()
    out[unmask] = draws
    return out


def generic_posterior_batch(x, probs_hat, t, s, schedule, vocab_size) -> torch.Tensor:
    """Vectorized Bayes-quotient posterior over the augmented vocabulary,
    (B, L, V+1); works for any interpolation schedule."""
    eta_s = float(schedule.eta(s))
    eta_t = float(schedule.eta(t))
    pi = torch.from_numpy(schedule.pi(vocab_size))
    prior_s = eta_s * torch.cat(
        [probs_hat.double(), torch.zeros(*probs_hat.shape[:2], 1, dtype=torch.float64)], dim=-1
    ) + (1.0 - eta_s) * pi
    ratio = eta_t / eta_s
    kernel = (1.0 - ratio) * pi[x]
    posterior = kernel.unsqueeze(-1) * prior_s
    posterior.scatter_add_(
        -1, x.unsqueeze(-1), (ratio * prior_s.gather(-1, x.unsqueeze(-1))).to(posterior.dtype)
    )
    return posterior / posterior.sum(dim=-1, keepdim=True)


def _generic_token_update(x, probs_hat, t, s, schedule, vocab_size, config, rng):
    posterior = generic_posterior_batch(x, probs_hat, t, s, schedule, vocab_size)
    flat = posterior.view(-1, vocab_size + 1)
    draws = _draw_tokens(flat.float(), config.argmax_tokens, rng)
    return draws.view(x.shape)
