"""Single-stream denoiser: token and latent inputs fused into L tokens."""

from __future__ import annotations

import torch
import torch.nn as nn

from ..errors import NumericError
from .layers import DiTBlock, FinalHead, TimeEmbed


class MDiT(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        d = config.d_model
        self.token_emb = nn.Embedding(config.vocab_augmented, d)
        self.latent_proj = nn.Linear(config.d_latent, d)
        self.fuse_proj = nn.Linear(2 * d, d) if config.fuse == "concat" else None
        self.time_embed = TimeEmbed(d)
        self.blocks = nn.ModuleList(
            [DiTBlock(d, config.n_heads, config.use_rotary) for _ in range(config.n_layers)]
        )
        self.head_eps = FinalHead(d, config.d_latent)
        self.head_logits = FinalHead(d, config.vocab_augmented)

    def forward(self, x_t: torch.Tensor, z_in: torch.Tensor, t: torch.Tensor,
                collect_gates: bool = False):
        tok = self.token_emb(x_t)
        lat = self.latent_proj(z_in)
        if self.fuse_proj is not None:
            h = self.fuse_proj(torch.cat([tok, lat], dim=-1))
        else:
            h = tok + lat
        t_vec = self.time_embed(t)
        positions = torch.arange(x_t.shape[1])
        for i, block in enumerate(self.blocks):
            h = block(h, t_vec, positions)
            if not torch.isfinite(h).all():
                raise NumericError(f"non-finite activations after block {i}")
        return self.head_eps(h, t_vec), self.head_logits(h, t_vec), None
