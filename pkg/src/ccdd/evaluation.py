"""Likelihood-style evaluation.

The bound estimate Monte-Carlo averages the weighted two-part loss over
stratified time draws, under the same joint corruption the trainer uses.
With representation masking switched on (p_r = 1) the continuous input
carries no direct copy of masked tokens, which is the proper setting for
reporting. Generative quality of samples is scored against a smoothed
n-gram reference fit on held-out data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .corruption import corrupt_joint
from .embedder import Codebook, encode
from .errors import ConfigError, InputError
from .schedules import SchedulePair
from .training import loss_continuous, loss_discrete

Z_95 = 1.959964


@dataclass
class EvalReport:
    elbo_nats_per_token: float
    ppl: float
    n_mc_times: int
    p_r: float
    loss_cont: float
    loss_disc: float
    half_width: float
    discrete_only: bool

    def lines(self) -> list[str]:
        return [
            f"bound (nats/token): {self.elbo_nats_per_token:.6f} +- {self.half_width:.6f}",
            f"perplexity:         {self.ppl:.4f}",
            f"  continuous part:  {self.loss_cont:.6f}",
            f"  discrete part:    {self.loss_disc:.6f}",
            f"  mc draws: {self.n_mc_times}  p_r: {self.p_r}  "
            f"headline: {'discrete only' if self.discrete_only else 'weighted sum'}",
        ]


def elbo(
    model,
    dataset: torch.Tensor,
    n_mc_times: int,
    p_r: float,
    pair: SchedulePair,
    codebook: Codebook,
    vocab_size: int,
    seed: int = 0,
    batch_size: int = 64,
    t_floor: float = 1e-4,
    gamma_cont: float = 1.0,
    gamma_disc: float = 1.0,
    lambda_cont="one",
    lambda_disc="inv_t",
    rep_mask_mode: str = "zero",
    discrete_only: bool = True,
) -> EvalReport:
    """Stratified Monte-Carlo estimate of the bound in nats per token."""
    if dataset.numel() == 0:
        raise InputError("empty dataset")
    if not 0.0 <= p_r <= 1.0:
        raise InputError("p_r must lie in [0, 1]")
    if n_mc_times < 1:
        raise ConfigError("n_mc_times must be >= 1")

    rng = torch.Generator().manual_seed(seed)
    n_seq = dataset.shape[0]
    round_cont = np.zeros(n_mc_times)
    round_disc = np.zeros(n_mc_times)

    with torch.no_grad():
        for i in range(n_mc_times):
            acc_cont = 0.0
            acc_disc = 0.0
            for start in range(0, n_seq, batch_size):
                x0 = dataset[start : start + batch_size]
                b = x0.shape[0]
                u = torch.rand(b, generator=rng, dtype=torch.float64)
                t = t_floor + (1.0 - t_floor) * (i + u) / n_mc_times
                joint = corrupt_joint(
                    x0, encode(x0, codebook), t, pair, vocab_size, p_r, rng,
                    rep_mask_mode=rep_mask_mode, codebook=codebook,
                )
                out = model(joint.x_t, joint.z_t, t, drop_continuous=False)
                lc = loss_continuous(joint.eps, out.eps_hat, t, lambda_cont)
                ld = loss_discrete(out.logits, x0, joint.mask_indicator, t, lambda_disc)
                acc_cont += float(lc) * b
                acc_disc += float(ld) * b
            round_cont[i] = acc_cont / n_seq
            round_disc[i] = acc_disc / n_seq

    headline_rounds = round_disc if discrete_only else gamma_cont * round_cont + gamma_disc * round_disc
    mean = float(headline_rounds.mean())
    if n_mc_times > 1:
        half_width = Z_95 * float(headline_rounds.std(ddof=1)) / math.sqrt(n_mc_times)
    else:
        half_width = float("inf")
    return EvalReport(
        elbo_nats_per_token=mean,
        ppl=math.exp(mean),
        n_mc_times=n_mc_times,
        p_r=p_r,
        loss_cont=float(round_cont.mean()),
        loss_disc=float(round_disc.mean()),
        half_width=half_width,
        discrete_only=discrete_only,
    )


class NGramReference:
    """Additively smoothed n-gram scorer used as the generative-NLL reference.

    Counts are kept sparsely; smoothing makes every conditional proper, so
    unseen contexts fall back to the uniform distribution.
    """

    def __init__(self, order: int, vocab_size: int, smoothing: float = 1.0, corpus_id: str = ""):
        if order not in (2, 3):
            raise ConfigError("reference order must be 2 or 3")
        if smoothing <= 0:
            raise ConfigError("smoothing must be positive; zero makes conditionals improper")
        if vocab_size < 1:
            raise ConfigError("vocab_size must be >= 1")
        self.order = order
        self.vocab_size = vocab_size
        self.smoothing = smoothing
        self.corpus_id = corpus_id
        self.counts: dict[tuple, np.ndarray] = {}

    def fit(self, tokens: np.ndarray) -> "NGramReference":
        tokens = np.asarray(tokens).reshape(-1)
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab_size):
            raise InputError("training tokens outside the reference vocabulary")
        k = self.order - 1
        for i in range(k, tokens.size):
            ctx = tuple(int(v) for v in tokens[i - k : i])
            row = self.counts.get(ctx)
            if row is None:
                row = np.zeros(self.vocab_size, dtype=np.int64)
                self.counts[ctx] = row
            row[tokens[i]] += 1
        return self

    def conditional(self, ctx: tuple) -> np.ndarray:
        row = self.counts.get(ctx)
        total = 0 if row is None else int(row.sum())
        num = (row + self.smoothing) if row is not None else np.full(self.vocab_size, self.smoothing)
        return num / (total + self.smoothing * self.vocab_size)

    def log_prob(self, ctx: tuple, token: int) -> float:
        row = self.counts.get(ctx)
        count = 0 if row is None else int(row[token])
        total = 0 if row is None else int(row.sum())
        return math.log(count + self.smoothing) - math.log(
            total + self.smoothing * self.vocab_size
        )


def generative_nll(reference: NGramReference, samples: torch.Tensor) -> float:
    """Mean negative log-probability per scored token of sampled sequences.

    Positions with a full context window are scored; the leading order-1
    tokens of each sequence have no context and are skipped.
    """
    arr = samples.detach().cpu().numpy()
    if arr.size and (arr.min() < 0 or arr.max() >= reference.vocab_size):
        raise InputError("sample token outside the reference vocabulary")
    k = reference.order - 1
    if arr.shape[1] <= k:
        raise InputError("sequences shorter than the reference context")
    total = 0.0
    count = 0
    for row in arr:
        for i in range(k, row.size):
            total -= reference.log_prob(tuple(int(v) for v in row[i - k : i]), int(row[i]))
            count += 1
    return total / count
