"""Joint denoiser: one time-conditioned network, two modality heads.

The forward contract is shared by all variants: inputs are corrupted tokens
(B, L), corrupted latents (B, L, d), per-sequence times (B,), and a drop flag
implementing guidance conditioning. Dropping the continuous modality zeroes
the latent pathway input and the noise-prediction head output, so the token
logits become a function of (x_t, t) alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn

from ..errors import ConfigError, InputError
from .layers import init_parameters
from .mdit import MDiT
from .mmdit import MMDiT
from .moedit import MoEDiT

ARCHS = ("mdit", "mmdit", "moedit")


@dataclass(frozen=True)
class DenoiserConfig:
    arch: str = "mdit"
    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_latent: int = 32
    vocab_augmented: int = 9  # base vocabulary plus the mask symbol
    n_experts: int = 4
    fuse: str = "concat"
    use_rotary: bool = True

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.arch == "moedit" and self.n_experts < 2:
            raise ConfigError("moedit requires n_experts >= 2")
        if self.fuse not in ("add", "concat"):
            raise ConfigError(f"fuse must be 'add' or 'concat', got {self.fuse!r}")
        if min(self.n_layers, self.d_model, self.n_heads, self.d_latent) < 1:
            raise ConfigError("model dimensions must be positive")


@dataclass
class DenoiserOutput:
    eps_hat: torch.Tensor  # (B, L, d_latent)
    logits: torch.Tensor  # (B, L, vocab_augmented)
    moe_gates: Optional[list] = None


class Denoiser(nn.Module):
    """Wrapper handling guidance dropout around a concrete architecture."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        if config.arch == "mdit":
            self.net = MDiT(config)
        elif config.arch == "mmdit":
            self.net = MMDiT(config)
        else:
            self.net = MoEDiT(config)

    def forward(
        self,
        x_t: torch.Tensor,
        z_t: torch.Tensor,
        t: torch.Tensor,
        drop_continuous=False,
        collect_gates: bool = False,
    ) -> DenoiserOutput:
        cfg = self.config
        if x_t.ndim != 2 or z_t.ndim != 3 or x_t.shape != z_t.shape[:2]:
            raise InputError(
                f"inconsistent shapes: tokens {tuple(x_t.shape)}, latents {tuple(z_t.shape)}"
            )
        if z_t.shape[-1] != cfg.d_latent:
            raise InputError(f"latent dim {z_t.shape[-1]} != configured {cfg.d_latent}")
        if x_t.max().item() >= cfg.vocab_augmented or x_t.min().item() < 0:
            raise InputError("token id outside augmented vocabulary")
        if t.shape != (x_t.shape[0],):
            raise InputError("t must be one scalar per sequence")

        if isinstance(drop_continuous, bool):
            drop = torch.full((x_t.shape[0],), drop_continuous, dtype=torch.bool)
        else:
            drop = drop_continuous.to(torch.bool)
        dtype = self.net.latent_proj.weight.dtype
        keep = (~drop).to(dtype).view(-1, 1, 1)
        eps_hat, logits, gates = self.net(x_t, z_t.to(dtype) * keep, t.to(dtype), collect_gates)
        return DenoiserOutput(eps_hat=eps_hat * keep, logits=logits, moe_gates=gates)


def build_denoiser(config: DenoiserConfig, seed: int = 0) -> Denoiser:
    model = Denoiser(config)
    init_parameters(model, seed)
    return model


def backward(
    model: Denoiser, output: DenoiserOutput, cot_eps: torch.Tensor, cot_logits: torch.Tensor
) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of a scalar pairing <cotangent, output>.

    Returns one gradient tensor per named parameter; parameters the output
    does not depend on get zeros.
    """
    if cot_eps.shape != output.eps_hat.shape or cot_logits.shape != output.logits.shape:
        raise InputError("cotangent shapes must match the output heads")
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(
        outputs=(output.eps_hat, output.logits),
        inputs=params,
        grad_outputs=(cot_eps.to(output.eps_hat.dtype), cot_logits.to(output.logits.dtype)),
        allow_unused=True,
        retain_graph=False,
    )
    return {
        name: (g if g is not None else torch.zeros_like(p))
        for name, p, g in zip(names, params, grads)
    }
