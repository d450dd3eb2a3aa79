"""Two-stream denoiser sharing attention over 2L tokens, with expert routing.

Attention and modulation parameters are shared by both modalities; a learned
modality embedding keeps the streams distinguishable, and the feed-forward is
a soft mixture of experts so tokens from different modalities can pick
different expert blends without doubling the parameter count.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from ..errors import NumericError
from .layers import DiTBlock, FinalHead, TimeEmbed


class MoEDiT(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        d = config.d_model
        self.token_emb = nn.Embedding(config.vocab_augmented, d)
        self.latent_proj = nn.Linear(config.d_latent, d)
        self.modality_emb = nn.Parameter(torch.zeros(2, d))
        self.time_embed = TimeEmbed(d)
        self.blocks = nn.ModuleList(
            [
                DiTBlock(d, config.n_heads, config.use_rotary, n_experts=config.n_experts)
                for _ in range(config.n_layers)
            ]
        )
        self.head_eps = FinalHead(d, config.d_latent)
        self.head_logits = FinalHead(d, config.vocab_augmented)

    def forward(self, x_t: torch.Tensor, z_in: torch.Tensor, t: torch.Tensor,
                collect_gates: bool = False):
        length = x_t.shape[1]
        tok = self.token_emb(x_t) + self.modality_emb[0]
        lat = self.latent_proj(z_in) + self.modality_emb[1]
        h = torch.cat([tok, lat], dim=1)  # (B, 2L, D)
        t_vec = self.time_embed(t)
        positions = torch.cat([torch.arange(length), torch.arange(length)])
        gates: list | None = [] if collect_gates else None
        for i, block in enumerate(self.blocks):
            h = block(h, t_vec, positions, collect=gates)
            if not torch.isfinite(h).all():
                raise NumericError(f"non-finite activations after block {i}")
        tok_out, lat_out = h[:, :length], h[:, length:]
        return self.head_eps(lat_out, t_vec), self.head_logits(tok_out, t_vec), gates
