"""Building blocks shared by the denoiser variants.

Blocks are standard pre-norm diffusion-transformer blocks: the timestep
vector enters through a zero-initialized modulation MLP producing per-block
scale/shift/gate, attention is bidirectional with rotary phases on q/k, and
feed-forwards are either a plain MLP or a soft mixture of experts.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10_000.0) -> torch.Tensor:
    """Sinusoidal features of continuous times in [0, 1]."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=t.dtype) / half
    )
    args = t[:, None] * 1000.0 * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


class TimeEmbed(nn.Module):
    def __init__(self, d_model: int):
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Linear(d_model, d_model),
            nn.SiLU(),
            nn.Linear(d_model, d_model),
        )
        self.d_model = d_model

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.mlp(timestep_embedding(t, self.d_model))


def rotary_angles(positions: torch.Tensor, head_dim: int, dtype: torch.dtype) -> tuple:
    half = head_dim // 2
    freqs = 10_000.0 ** (-torch.arange(half, dtype=dtype) / half)
    angles = positions.to(dtype)[:, None] * freqs[None, :]  # (T, half)
    return angles.cos(), angles.sin()


def apply_rotary(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    """Rotate (B, H, T, Dh) query/key pairs by the per-position phases."""
    x1, x2 = x.chunk(2, dim=-1)
    return torch.cat([x1 * cos - x2 * sin, x1 * sin + x2 * cos], dim=-1)


class Attention(nn.Module):
    """Bidirectional multi-head self-attention with optional rotary phases."""

    def __init__(self, d_model: int, n_heads: int, use_rotary: bool = True):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.use_rotary = use_rotary
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)
        k = k.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)
        if self.use_rotary:
            cos, sin = rotary_angles(positions, self.head_dim, x.dtype)
            q = apply_rotary(q, cos, sin)
            k = apply_rotary(k, cos, sin)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        att = att.softmax(dim=-1)
        out = (att @ v).transpose(1, 2).reshape(b, t, -1)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, d_model: int, ratio: float = 4.0):
        super().__init__()
        hidden = int(d_model * ratio)
        self.fc1 = nn.Linear(d_model, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class MoeMlp(nn.Module):
    """Dense soft-routing mixture: every token gets a softmax-weighted blend
    of all experts, so routing stays deterministic and differentiable."""

    def __init__(self, d_model: int, n_experts: int, ratio: float = 4.0):
        super().__init__()
        self.gate = nn.Linear(d_model, n_experts)
        self.experts = nn.ModuleList([Mlp(d_model, ratio) for _ in range(n_experts)])

    def forward(self, x: torch.Tensor, collect: list | None = None) -> torch.Tensor:
        weights = self.gate(x).softmax(dim=-1)  # (B, T, E)
        if collect is not None:
            collect.append(weights)
        stacked = torch.stack([expert(x) for expert in self.experts], dim=-1)  # (B, T, D, E)
        return (stacked * weights.unsqueeze(-2)).sum(dim=-1)


def modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1.0 + scale.unsqueeze(1)) + shift.unsqueeze(1)


class DiTBlock(nn.Module):
    """Pre-norm transformer block with adaLN timestep conditioning."""

    def __init__(self, d_model: int, n_heads: int, use_rotary: bool = True,
                 n_experts: int = 0, ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model, elementwise_affine=False, eps=1e-6)
        self.attn = Attention(d_model, n_heads, use_rotary)
        self.norm2 = nn.LayerNorm(d_model, elementwise_affine=False, eps=1e-6)
        self.ffn = MoeMlp(d_model, n_experts, ratio) if n_experts else Mlp(d_model, ratio)
        self.adaln = nn.Sequential(nn.SiLU(), nn.Linear(d_model, 6 * d_model))

    def forward(self, x: torch.Tensor, t_vec: torch.Tensor, positions: torch.Tensor,
                collect: list | None = None) -> torch.Tensor:
        sh_a, sc_a, g_a, sh_m, sc_m, g_m = self.adaln(t_vec).chunk(6, dim=-1)
        x = x + g_a.unsqueeze(1) * self.attn(modulate(self.norm1(x), sh_a, sc_a), positions)
        h = modulate(self.norm2(x), sh_m, sc_m)
        if isinstance(self.ffn, MoeMlp):
            h = self.ffn(h, collect)
        else:
            h = self.ffn(h)
        return x + g_m.unsqueeze(1) * h


class FinalHead(nn.Module):
    """adaLN-modulated linear readout, zero-initialized like DiT's final layer."""

    def __init__(self, d_model: int, d_out: int):
        super().__init__()
        self.norm = nn.LayerNorm(d_model, elementwise_affine=False, eps=1e-6)
        self.adaln = nn.Sequential(nn.SiLU(), nn.Linear(d_model, 2 * d_model))
        self.linear = nn.Linear(d_model, d_out)

    def forward(self, x: torch.Tensor, t_vec: torch.Tensor) -> torch.Tensor:
        shift, scale = self.adaln(t_vec).chunk(2, dim=-1)
        return self.linear(modulate(self.norm(x), shift, scale))


def _trunc_normal_(tensor: torch.Tensor, std: float, gen: torch.Generator) -> None:
    """Truncated normal on [-2*std, 2*std] via inverse-CDF sampling."""
    lo = 0.5 * (1.0 + math.erf(-2.0 / math.sqrt(2.0)))
    u = torch.rand(tensor.shape, generator=gen, dtype=torch.float32)
    u = lo + (1.0 - 2.0 * lo) * u
    samples = math.sqrt(2.0) * torch.erfinv(2.0 * u - 1.0) * std
    with torch.no_grad():
        tensor.copy_(samples.to(tensor.dtype))


def init_parameters(model: nn.Module, seed: int) -> None:
    """Deterministic init: trunc-normal projections, identity-at-start blocks."""
    gen = torch.Generator().manual_seed(seed)
    for module in model.modules():
        if isinstance(module, nn.Linear):
            _trunc_normal_(module.weight, 0.02, gen)
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.Embedding):
            _trunc_normal_(module.weight, 0.02, gen)
    for module in model.modules():
        if isinstance(module, (DiTBlock, FinalHead)):
            nn.init.zeros_(module.adaln[-1].weight)
            nn.init.zeros_(module.adaln[-1].bias)
        if isinstance(module, FinalHead):
            nn.init.zeros_(module.linear.weight)
            nn.init.zeros_(module.linear.bias)
