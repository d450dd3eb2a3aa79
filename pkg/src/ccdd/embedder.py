"""Fixed token encoders mapping ids to unit-norm continuous embeddings.

Three codebook modes mirror the spectrum of continuous generation spaces:
one-hot rows on the simplex, a random orthonormal codebook, and a synthetic
contextual mode that mixes each position with its neighbours through an
exponentially decaying window before renormalizing. Decoding is nearest
neighbour by inner product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, InputError

MODES = ("onehot_simplex", "random_orthonormal", "contextual")


@dataclass(frozen=True)
class Codebook:
    vectors: torch.Tensor  # (V, d) float64, unit-norm rows
    mode: str
    mix_weight: float = 0.0  # contextual neighbour weight w in [0, 1)
    mix_radius: int = 0  # contextual window radius r
    seed: int = 0

    @property
    def vocab_size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def build_codebook(
    mode: str,
    vocab_size: int,
    dim: int,
    seed: int = 0,
    mix_weight: float = 0.5,
    mix_radius: int = 1,
) -> Codebook:
    if mode not in MODES:
        raise ConfigError(f"unknown codebook mode {mode!r}")
    if vocab_size < 1:
        raise ConfigError("vocab_size must be >= 1")
    if mode == "onehot_simplex":
        vectors = torch.eye(vocab_size, dtype=torch.float64)
        return Codebook(vectors, mode)
    if vocab_size > dim:
        raise ConfigError(
            f"orthonormal codebook needs dim >= vocab_size, got dim={dim}, V={vocab_size}"
        )
    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal((dim, vocab_size))
    q, r = np.linalg.qr(gauss)
    q = q * np.sign(np.diag(r))  # fix QR sign ambiguity for reproducibility
    vectors = torch.from_numpy(np.ascontiguousarray(q.T))
    if mode == "random_orthonormal":
        return Codebook(vectors, mode, seed=seed)
    if not 0.0 <= mix_weight < 1.0:
        raise ConfigError("contextual mix_weight must lie in [0, 1)")
    if mix_radius < 0:
        raise ConfigError("contextual mix_radius must be >= 0")
    return Codebook(vectors, mode, mix_weight=mix_weight, mix_radius=mix_radius, seed=seed)


def encode(x0: torch.Tensor, codebook: Codebook) -> torch.Tensor:
    """Embed clean tokens (B, L) into latents (B, L, d)."""
    if x0.numel() and (x0.min().item() < 0 or x0.max().item() >= codebook.vocab_size):
        raise InputError(
            f"token id out of range: expected ids in [0, {codebook.vocab_size}), "
            f"saw [{x0.min().item()}, {x0.max().item()}]"
        )
    base = codebook.vectors[x0]
    if codebook.mode != "contextual" or codebook.mix_weight == 0.0:
        return base
    return _mix_context(base, codebook.mix_weight, codebook.mix_radius)


def encode_corrupted(x_t: torch.Tensor, codebook: Codebook) -> torch.Tensor:
    """Embed a partially masked sequence; the mask id maps to the zero vector."""
    mask_id = codebook.vocab_size
    if x_t.numel() and (x_t.min().item() < 0 or x_t.max().item() > mask_id):
        raise InputError("token id out of augmented range")
    table = torch.cat(
        [codebook.vectors, torch.zeros(1, codebook.dim, dtype=codebook.vectors.dtype)], dim=0
    )
    base = table[x_t]
    if codebook.mode != "contextual" or codebook.mix_weight == 0.0:
        return base
    return _mix_context(base, codebook.mix_weight, codebook.mix_radius)


def _mix_context(base: torch.Tensor, w: float, r: int) -> torch.Tensor:
    mixed = base.clone()
    for offset in range(1, r + 1):
        coeff = w**offset
        mixed[:, offset:] += coeff * base[:, :-offset]
        mixed[:, :-offset] += coeff * base[:, offset:]
    norm = mixed.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    return mixed / norm


def decode_nn(z: torch.Tensor, codebook: Codebook) -> torch.Tensor:
    """Nearest-neighbour decode by inner product; ties go to the lowest id."""
    if not torch.isfinite(z).all():
        raise InputError("latents must be finite")
    scores = z.detach().to(torch.float64) @ codebook.vectors.to(torch.float64).T
    # numpy argmax picks the first (lowest-id) index on exact ties
    ids = np.argmax(scores.numpy(), axis=-1)
    return torch.from_numpy(np.ascontiguousarray(ids)).to(torch.int64)
