"""Two-stream denoiser with modality-specific parameters and joint attention.

Each block keeps separate projections, modulation, and feed-forwards per
modality; queries/keys/values from both streams attend jointly over the
concatenated 2L tokens, then the halves are routed back to their own output
projections.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from ..errors import NumericError
from .layers import FinalHead, Mlp, TimeEmbed, apply_rotary, modulate, rotary_angles


class JointStreamBlock(nn.Module):
    def __init__(self, d_model: int, n_heads: int, use_rotary: bool):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.use_rotary = use_rotary
        self.norm1 = nn.ModuleList(
            [nn.LayerNorm(d_model, elementwise_affine=False, eps=1e-6) for _ in range(2)]
        )
        self.norm2 = nn.ModuleList(
            [nn.LayerNorm(d_model, elementwise_affine=False, eps=1e-6) for _ in range(2)]
        )
        self.qkv = nn.ModuleList([nn.Linear(d_model, 3 * d_model) for _ in range(2)])
        self.proj = nn.ModuleList([nn.Linear(d_model, d_model) for _ in range(2)])
        self.mlp = nn.ModuleList([Mlp(d_model) for _ in range(2)])
        self.adaln = nn.ModuleList(
            [nn.Sequential(nn.SiLU(), nn.Linear(d_model, 6 * d_model)) for _ in range(2)]
        )

    def forward(self, streams: list, t_vec: torch.Tensor, positions: torch.Tensor) -> list:
        b, length, _ = streams[0].shape
        mods = [self.adaln[m](t_vec).chunk(6, dim=-1) for m in range(2)]
        qkvs = []
        for m in range(2):
            sh_a, sc_a, _, _, _, _ = mods[m]
            h = modulate(self.norm1[m](streams[m]), sh_a, sc_a)
            qkvs.append(self.qkv[m](h))
        q, k, v = torch.cat(qkvs, dim=1).chunk(3, dim=-1)
        t2 = 2 * length
        q = q.view(b, t2, self.n_heads, self.head_dim).transpose(1, 2)
        k = k.view(b, t2, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.view(b, t2, self.n_heads, self.head_dim).transpose(1, 2)
        if self.use_rotary:
            cos, sin = rotary_angles(positions, self.head_dim, q.dtype)
            q = apply_rotary(q, cos, sin)
            k = apply_rotary(k, cos, sin)
        att = ((q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)).softmax(dim=-1)
        joint = (att @ v).transpose(1, 2).reshape(b, t2, -1)
        out = []
        for m in range(2):
            _, _, g_a, sh_m, sc_m, g_m = mods[m]
            part = joint[:, m * length : (m + 1) * length]
            x = streams[m] + g_a.unsqueeze(1) * self.proj[m](part)
            x = x + g_m.unsqueeze(1) * self.mlp[m](modulate(self.norm2[m](x), sh_m, sc_m))
            out.append(x)
        return out


class MMDiT(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        d = config.d_model
        self.token_emb = nn.Embedding(config.vocab_augmented, d)
        self.latent_proj = nn.Linear(config.d_latent, d)
        self.time_embed = TimeEmbed(d)
        self.blocks = nn.ModuleList(
            [JointStreamBlock(d, config.n_heads, config.use_rotary) for _ in range(config.n_layers)]
        )
        self.head_eps = FinalHead(d, config.d_latent)
        self.head_logits = FinalHead(d, config.vocab_augmented)

    def forward(self, x_t: torch.Tensor, z_in: torch.Tensor, t: torch.Tensor,
                collect_gates: bool = False):
        length = x_t.shape[1]
        streams = [self.token_emb(x_t), self.latent_proj(z_in)]
        t_vec = self.time_embed(t)
        positions = torch.cat([torch.arange(length), torch.arange(length)])
        for i, block in enumerate(self.blocks):
            streams = block(streams, t_vec, positions)
            if not all(torch.isfinite(s).all() for s in streams):
                raise NumericError(f"non-finite activations after block {i}")
        return self.head_eps(streams[1], t_vec), self.head_logits(streams[0], t_vec), None
