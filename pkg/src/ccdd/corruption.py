"""Factored joint forward corruption.

Tokens are corrupted per position by the keep/resample marginal of the
absorbing (or uniform) chain; latents get independent Gaussian corruption.
The two branches share nothing but the per-sequence time vector, so the
joint kernel is an exact product. Representation masking zeroes the latent
rows at discretely masked positions before the Gaussian branch runs, which
is how evaluation prevents the continuous input from leaking masked tokens.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .embedder import Codebook, encode_corrupted
from .errors import InputError
from .schedules import ContinuousSchedule, DiscreteSchedule, SchedulePair


@dataclass
class JointCorruptedBatch:
    x_t: torch.Tensor  # (B, L) int64 over the augmented vocabulary
    z_t: torch.Tensor  # (B, L, d)
    eps: torch.Tensor  # (B, L, d) Gaussian draw used to build z_t
    t: torch.Tensor  # (B,) per-sequence times
    mask_indicator: torch.Tensor  # (B, L) bool, true where x_t is the mask
    rep_masked: torch.Tensor  # (B,) bool, true where representation masking was applied


def corrupt_continuous(
    z0: torch.Tensor,
    t: torch.Tensor,
    schedule: ContinuousSchedule,
    rng: torch.Generator,
) -> tuple[torch.Tensor, torch.Tensor]:
    """z_t = alpha_t * z0 + sigma_t * eps with fresh standard-normal eps."""
    if not torch.isfinite(z0).all():
        raise InputError("z0 must be finite")
    alpha, sigma = schedule.alpha_sigma(t.detach().cpu().numpy().astype(np.float64))
    alpha = torch.as_tensor(alpha, dtype=z0.dtype).view(-1, 1, 1)
    sigma = torch.as_tensor(sigma, dtype=z0.dtype).view(-1, 1, 1)
    eps = torch.randn(z0.shape, generator=rng, dtype=z0.dtype)
    return alpha * z0 + sigma * eps, eps


def corrupt_discrete(
    x0: torch.Tensor,
    t: torch.Tensor,
    schedule: DiscreteSchedule,
    vocab_size: int,
    rng: torch.Generator,
) -> torch.Tensor:
    """Keep each token with probability eta_t, otherwise draw from pi."""
    mask_id = vocab_size
    if x0.numel() and (x0.min().item() < 0 or x0.max().item() >= mask_id):
        raise InputError("clean tokens must be non-mask vocabulary ids")
    eta = torch.as_tensor(
        schedule.eta(t.detach().cpu().numpy().astype(np.float64)), dtype=torch.float64
    ).view(-1, 1)
    keep = torch.rand(x0.shape, generator=rng, dtype=torch.float64) < eta
    if schedule.is_masked:
        replacement = torch.full_like(x0, mask_id)
    else:
        replacement = torch.randint(0, vocab_size, x0.shape, generator=rng)
    return torch.where(keep, x0, replacement)


def mask_representation(
    z0: torch.Tensor, mask_indicator: torch.Tensor, apply: bool = True
) -> torch.Tensor:
    """Zero the embedding rows at masked positions (all channels)."""
    if mask_indicator.shape != z0.shape[:2]:
        raise InputError(
            f"mask indicator shape {tuple(mask_indicator.shape)} does not match "
            f"latent grid {tuple(z0.shape[:2])}"
        )
    if not apply:
        return z0
    return z0 * (~mask_indicator).unsqueeze(-1).to(z0.dtype)


def corrupt_joint(
    x0: torch.Tensor,
    z0: torch.Tensor,
    t: torch.Tensor,
    pair: SchedulePair,
    vocab_size: int,
    p_r_draw,
    rng: torch.Generator,
    rep_mask_mode: str = "zero",
    codebook: Optional[Codebook] = None,
) -> JointCorruptedBatch:
    """Run the full joint forward step for one batch.

    p_r_draw is the per-sequence probability (scalar or (B,) tensor) that the
    representation-masking perturbation is applied. Tokens are corrupted
    first so their mask pattern can drive the perturbation; the Gaussian
    branch then starts from the perturbed latents.
    """
    x_t = corrupt_discrete(x0, t, pair.discrete, vocab_size, rng)
    mask_indicator = x_t == vocab_size

    p = torch.as_tensor(p_r_draw, dtype=torch.float64).expand(x0.shape[0])
    if p.numel() and (p.min().item() < 0.0 or p.max().item() > 1.0):
        raise InputError("p_r_draw must lie in [0, 1]")
    rep_masked = torch.rand(x0.shape[0], generator=rng, dtype=torch.float64) < p

    if rep_mask_mode == "zero":
        z0_eff = mask_representation(z0, mask_indicator & rep_masked.view(-1, 1), apply=True)
    elif rep_mask_mode == "reembed":
        if codebook is None:
            raise InputError("reembed mode requires the codebook")
        z0_eff = torch.where(rep_masked.view(-1, 1, 1), encode_corrupted(x_t, codebook), z0)
    else:
        raise InputError(f"unknown rep_mask_mode {rep_mask_mode!r}")

    z_t, eps = corrupt_continuous(z0_eff, t, pair.continuous, rng)
    return JointCorruptedBatch(
        x_t=x_t, z_t=z_t, eps=eps, t=t, mask_indicator=mask_indicator, rep_masked=rep_masked
    )
