"""Forward-noise schedules for both modalities.

Continuous corruption is variance preserving: at time t the latent is
alpha_t * z0 + sigma_t * eps with alpha^2 + sigma^2 = 1. Discrete corruption
keeps the clean token with probability eta_t and otherwise resamples from a
fixed noise distribution pi (the mask point mass, or uniform over the base
vocabulary).

All evaluations accept scalars or numpy arrays of times in [0, 1] and are
pure, so they are safe to call from any number of workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DomainError

# Default constant-beta VP schedule ends at alpha(1) = 1e-4 (near-pure noise).
DEFAULT_VP_BETA = -2.0 * math.log(1e-4)

SIMPSON_PANELS = 1024


def _check_time(t) -> np.ndarray:
    arr = np.asarray(t, dtype=np.float64)
    if arr.size and (np.any(arr < 0.0) or np.any(arr > 1.0)):
        raise DomainError(f"time must lie in [0, 1], got {t!r}")
    return arr


def _simpson_integral(fn: Callable[[np.ndarray], np.ndarray], upper: float) -> float:
    """Composite Simpson integral of fn over [0, upper]."""
    if upper == 0.0:
        return 0.0
    grid = np.linspace(0.0, upper, 2 * SIMPSON_PANELS + 1)
    vals = fn(grid)
    h = upper / (2 * SIMPSON_PANELS)
    return float(h / 3.0 * (vals[0] + vals[-1] + 4.0 * vals[1:-1:2].sum() + 2.0 * vals[2:-1:2].sum()))


@dataclass(frozen=True)
class ContinuousSchedule:
    """Variance-preserving schedule (alpha_t, sigma_t).

    kinds:
      vp_constant_beta  alpha_t = exp(-beta * t / 2)
      concave_sqrt      alpha_t = sqrt(1 - t), hits exactly 0 at t = 1
      linear_alpha      alpha_t = 1 - t
      vp_custom_beta    alpha_t = exp(-0.5 * integral of beta_fn), Simpson quadrature
    """

    kind: str = "vp_constant_beta"
    beta: float = DEFAULT_VP_BETA
    beta_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None

    KINDS = ("vp_constant_beta", "concave_sqrt", "linear_alpha", "vp_custom_beta")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown continuous schedule kind {self.kind!r}")
        if self.kind == "vp_constant_beta" and self.beta <= 0:
            raise ConfigError("vp_constant_beta requires beta > 0")
        if self.kind == "vp_custom_beta" and self.beta_fn is None:
            raise ConfigError("vp_custom_beta requires beta_fn")

    def alpha_sigma(self, t):
        """Return (alpha_t, sigma_t); scalars in, scalars out."""
        arr = _check_time(t)
        scalar = np.isscalar(t) or (isinstance(t, np.ndarray) and t.ndim == 0)
        if self.kind == "vp_constant_beta":
            alpha = np.exp(-0.5 * self.beta * arr)
        elif self.kind == "concave_sqrt":
            alpha = np.sqrt(1.0 - arr)
        elif self.kind == "linear_alpha":
            alpha = 1.0 - arr
        else:
            flat = np.atleast_1d(arr)
            alpha = np.array(
                [math.exp(-0.5 * _simpson_integral(self.beta_fn, float(ti))) for ti in flat]
            ).reshape(arr.shape)
        sigma = np.sqrt(np.clip(1.0 - alpha * alpha, 0.0, 1.0))
        if scalar:
            return float(alpha), float(sigma)
        return alpha, sigma


@dataclass(frozen=True)
class DiscreteSchedule:
    """Keep-probability schedule eta_t plus the noise distribution pi.

    kinds:
      masked_linear   eta_t = 1 - t, pi = point mass on the mask symbol
      masked_custom   user-supplied eta_fn, mask-noise semantics
      uniform         eta_t = (1 - t) ** rate, pi uniform over non-mask tokens
    """

    kind: str = "masked_linear"
    eta_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    rate: float = 1.0

    KINDS = ("masked_linear", "masked_custom", "uniform")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown discrete schedule kind {self.kind!r}")
        if self.kind == "masked_custom":
            if self.eta_fn is None:
                raise ConfigError("masked_custom requires eta_fn")
            grid = np.linspace(0.0, 1.0, 257)
            vals = np.asarray(self.eta_fn(grid), dtype=np.float64)
            if abs(vals[0] - 1.0) > 1e-9 or abs(vals[-1]) > 1e-9:
                raise ConfigError("eta_fn must satisfy eta(0)=1 and eta(1)=0")
            if np.any(np.diff(vals) > 1e-12):
                raise ConfigError("eta_fn must be non-increasing")
        if self.kind == "uniform" and self.rate <= 0:
            raise ConfigError("uniform schedule requires rate > 0")

    @property
    def is_masked(self) -> bool:
        return self.kind in ("masked_linear", "masked_custom")

    def eta(self, t):
        arr = _check_time(t)
        scalar = np.isscalar(t) or (isinstance(t, np.ndarray) and t.ndim == 0)
        if self.kind == "masked_linear":
            out = 1.0 - arr
        elif self.kind == "masked_custom":
            out = np.asarray(self.eta_fn(arr), dtype=np.float64)
        else:
            out = (1.0 - arr) ** self.rate
        return float(out) if scalar else out

    def pi(self, vocab_size: int) -> np.ndarray:
        """Noise distribution over the augmented vocabulary (mask id = vocab_size)."""
        out = np.zeros(vocab_size + 1, dtype=np.float64)
        if self.is_masked:
            out[vocab_size] = 1.0
        else:
            out[:vocab_size] = 1.0 / vocab_size
        return out


@dataclass(frozen=True)
class SchedulePair:
    """Continuous and discrete schedules used jointly in one forward process."""

    continuous: ContinuousSchedule = field(default_factory=lambda: ContinuousSchedule("concave_sqrt"))
    discrete: DiscreteSchedule = field(default_factory=DiscreteSchedule)
    pairing: str = "continuous_ahead"

    PAIRINGS = ("synchronous", "continuous_ahead")

    def __post_init__(self):
        if self.pairing not in self.PAIRINGS:
            raise ConfigError(f"unknown pairing {self.pairing!r}")
        if self.pairing == "continuous_ahead":
            grid = np.linspace(0.0, 1.0, 101)[1:-1]
            alpha, _ = self.continuous.alpha_sigma(grid)
            eta = self.discrete.eta(grid)
            if np.any(alpha * alpha < eta - 1e-12):
                raise ConfigError(
                    "continuous_ahead pairing requires alpha_t^2 >= eta_t on (0, 1); "
                    "the continuous modality must keep at least as much signal"
                )


def eval_continuous(schedule: ContinuousSchedule, t):
    return schedule.alpha_sigma(t)


def eval_discrete(schedule: DiscreteSchedule, t):
    return schedule.eta(t)


def log_snr_slope(pair: SchedulePair, t: float, which: str, h: float = 1e-5) -> float:
    """d/dt of the log signal-to-noise curve at interior time t.

    Continuous: log(alpha^2 / sigma^2). Discrete: log(eta / (1 - eta)).
    Central finite difference with the step clipped to stay inside (0, 1).
    """
    if not 0.0 < t < 1.0:
        raise DomainError(f"slope requires t strictly inside (0, 1), got {t}")
    if which not in ("continuous", "discrete"):
        raise ConfigError(f"which must be 'continuous' or 'discrete', got {which!r}")
    step = min(h, t / 2.0, (1.0 - t) / 2.0)

    if which == "continuous":
        def f(u: float) -> float:
            alpha, sigma = pair.continuous.alpha_sigma(u)
            return math.log(alpha * alpha) - math.log(sigma * sigma)
    else:
        def f(u: float) -> float:
            eta = pair.discrete.eta(u)
            return math.log(eta) - math.log(1.0 - eta)

    return (f(t + step) - f(t - step)) / (2.0 * step)
