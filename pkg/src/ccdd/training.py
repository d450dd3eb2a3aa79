"""Losses, optimizer, and the joint training step.

The continuous loss is a per-element mean-squared error on the noise
prediction; the discrete loss is weighted cross entropy on masked positions,
normalized by all positions so it reads as nats per token. The step weight
1/t is the bound-tightening weight for the linear keep schedule eta = 1 - t,
making the averaged discrete loss a negative evidence lower bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import torch
import torch.nn.functional as F

from .corruption import corrupt_joint
from .embedder import Codebook, encode
from .errors import ConfigError, InputError, NumericError
from .schedules import SchedulePair

LambdaSpec = Union[str, Callable[[torch.Tensor], torch.Tensor]]


def _lambda_weights(spec: LambdaSpec, t: torch.Tensor) -> torch.Tensor:
    if callable(spec):
        return spec(t)
    if spec == "one":
        return torch.ones_like(t)
    if spec == "inv_t":
        return 1.0 / t
    raise ConfigError(f"unknown loss weight spec {spec!r}")


@dataclass
class LossBreakdown:
    l_cont: float
    l_disc: float
    total: float
    gamma_cont: float
    gamma_disc: float
    lambda_cont: str = "one"
    lambda_disc: str = "inv_t"


def loss_continuous(
    eps: torch.Tensor,
    eps_hat: torch.Tensor,
    t: torch.Tensor,
    lambda_spec: LambdaSpec = "one",
    include: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Weighted per-element MSE, averaged over the included sequences."""
    if eps.shape != eps_hat.shape:
        raise InputError(f"shape mismatch: {tuple(eps.shape)} vs {tuple(eps_hat.shape)}")
    weights = _lambda_weights(lambda_spec, t).to(eps.dtype)
    per_seq = ((eps - eps_hat) ** 2).mean(dim=(1, 2)) * weights
    if include is None:
        return per_seq.mean()
    kept = include.to(eps.dtype)
    denom = kept.sum().clamp_min(1.0)
    return (per_seq * kept).sum() / denom


def loss_discrete(
    logits: torch.Tensor,
    x0: torch.Tensor,
    mask_indicator: torch.Tensor,
    t: torch.Tensor,
    lambda_spec: LambdaSpec = "inv_t",
) -> torch.Tensor:
    """Weighted cross entropy on masked positions, per token over all positions."""
    b, length, vocab_aug = logits.shape
    if x0.shape != (b, length) or mask_indicator.shape != (b, length):
        raise InputError("logits, tokens, and mask grid disagree on batch/length")
    if bool((mask_indicator & (x0 >= vocab_aug - 1)).any()):
        raise InputError("clean tokens at masked positions must not be the mask symbol")
    if not mask_indicator.any():
        return logits.new_zeros(())
    weights = _lambda_weights(lambda_spec, t).to(logits.dtype).view(-1, 1)
    logp = F.log_softmax(logits, dim=-1).gather(-1, x0.unsqueeze(-1)).squeeze(-1)
    weighted = -weights * logp * mask_indicator.to(logits.dtype)
    return weighted.sum() / (b * length)


def total_loss(
    l_cont: torch.Tensor,
    l_disc: torch.Tensor,
    gamma_cont: float = 1.0,
    gamma_disc: float = 1.0,
    lambda_cont: str = "one",
    lambda_disc: str = "inv_t",
) -> tuple[torch.Tensor, LossBreakdown]:
    if gamma_cont < 0 or gamma_disc < 0:
        raise ConfigError("loss weights gamma_cont and gamma_disc must be non-negative")
    total = gamma_cont * l_cont + gamma_disc * l_disc
    breakdown = LossBreakdown(
        l_cont=float(l_cont.detach()) if torch.is_tensor(l_cont) else float(l_cont),
        l_disc=float(l_disc.detach()) if torch.is_tensor(l_disc) else float(l_disc),
        total=float(total.detach()) if torch.is_tensor(total) else float(total),
        gamma_cont=gamma_cont,
        gamma_disc=gamma_disc,
        lambda_cont=lambda_cont if isinstance(lambda_cont, str) else "custom",
        lambda_disc=lambda_disc if isinstance(lambda_disc, str) else "custom",
    )
    return total, breakdown


class AdamW:
    """Decoupled weight-decay Adam with linear warmup to a constant rate.

    Owns named first/second moments so the whole state round-trips through
    checkpoints; update order follows parameter registration order, which
    keeps runs bit-reproducible.
    """

    def __init__(
        self,
        named_params: dict[str, torch.Tensor],
        lr: float = 3e-4,
        warmup_steps: int = 100,
        weight_decay: float = 0.02,
        clip_norm: float = 1.0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = dict(named_params)
        self.lr = lr
        self.warmup_steps = warmup_steps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: torch.zeros_like(p) for k, p in self.params.items()}
        self.v = {k: torch.zeros_like(p) for k, p in self.params.items()}

    def current_lr(self) -> float:
        if self.warmup_steps > 0 and self.step_count < self.warmup_steps:
            return self.lr * (self.step_count + 1) / self.warmup_steps
        return self.lr

    def clip_gradients(self, grads: dict[str, torch.Tensor]) -> float:
        total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if self.clip_norm > 0 and total > self.clip_norm:
            scale = self.clip_norm / total
            for g in grads.values():
                g.mul_(scale)
        return total

    def step(self, grads: dict[str, torch.Tensor]) -> float:
        lr = self.current_lr()
        self.step_count += 1
        beta1, beta2 = self.betas
        bc1 = 1.0 - beta1**self.step_count
        bc2 = 1.0 - beta2**self.step_count
        with torch.no_grad():
            for name, p in self.params.items():
                g = grads[name]
                self.m[name].mul_(beta1).add_(g, alpha=1.0 - beta1)
                self.v[name].mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
                m_hat = self.m[name] / bc1
                v_hat = self.v[name] / bc2
                p.add_(m_hat / (v_hat.sqrt() + self.eps), alpha=-lr)
                if self.weight_decay:
                    p.add_(p, alpha=-lr * self.weight_decay)
        return lr

    def state_tensors(self) -> dict[str, torch.Tensor]:
        out = {}
        for name in self.params:
            out[f"adamw.m.{name}"] = self.m[name]
            out[f"adamw.v.{name}"] = self.v[name]
        return out

    def load_state_tensors(self, table: dict[str, torch.Tensor], step_count: int) -> None:
        for name in self.params:
            self.m[name] = table[f"adamw.m.{name}"].clone()
            self.v[name] = table[f"adamw.v.{name}"].clone()
        self.step_count = step_count


@dataclass
class TrainSettings:
    """Everything train_step needs besides model, optimizer, batch, and RNG."""

    pair: SchedulePair
    codebook: Codebook
    vocab_size: int
    p_drop: float = 0.15
    p_r_min: float = 0.0
    p_r_max: float = 0.9
    rep_mask_mode: str = "zero"
    t_floor: float = 1e-4
    gamma_cont: float = 1.0
    gamma_disc: float = 1.0
    lambda_cont: LambdaSpec = "one"
    lambda_disc: LambdaSpec = "inv_t"


@dataclass
class StepStats:
    breakdown: LossBreakdown
    grad_norm: float
    lr: float
    t_mean: float


def train_step(
    model,
    optimizer: AdamW,
    x0: torch.Tensor,
    rng: torch.Generator,
    settings: TrainSettings,
    step_index: int = 0,
) -> StepStats:
    """One full update: corrupt, predict, weigh both losses, clip, apply."""
    batch = x0.shape[0]
    u = torch.rand(batch, generator=rng, dtype=torch.float64)
    t = settings.t_floor + (1.0 - settings.t_floor) * u

    z0 = encode(x0, settings.codebook)
    p_r = settings.p_r_min + (settings.p_r_max - settings.p_r_min) * torch.rand(
        batch, generator=rng, dtype=torch.float64
    )
    joint = corrupt_joint(
        x0,
        z0,
        t,
        settings.pair,
        settings.vocab_size,
        p_r,
        rng,
        rep_mask_mode=settings.rep_mask_mode,
        codebook=settings.codebook,
    )
    drop = torch.rand(batch, generator=rng, dtype=torch.float64) < settings.p_drop

    out = model(joint.x_t, joint.z_t, t, drop_continuous=drop)
    l_cont = loss_continuous(joint.eps, out.eps_hat, t, settings.lambda_cont, include=~drop)
    l_disc = loss_discrete(out.logits, x0, joint.mask_indicator, t, settings.lambda_disc)
    total, breakdown = total_loss(
        l_cont, l_disc, settings.gamma_cont, settings.gamma_disc,
        settings.lambda_cont, settings.lambda_disc,
    )
    if not torch.isfinite(total):
        raise NumericError(
            f"non-finite loss at step {step_index}: parts cont={float(l_cont)} "
            f"disc={float(l_disc)}, t={t.tolist()}"
        )

    model.zero_grad(set_to_none=True)
    total.backward()
    grads = {
        name: (p.grad.clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }
    grad_norm = optimizer.clip_gradients(grads)
    lr = optimizer.step(grads)
    return StepStats(breakdown=breakdown, grad_norm=grad_norm, lr=lr, t_mean=float(t.mean()))
