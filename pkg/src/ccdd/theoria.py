"""Executable checks of the constructive theory behind the joint process.

Everything here runs at desk scale with exact or brute-force references:
an Euler integrator that reproduces weight-shared rollouts step by step,
first-order convergence of operator splitting on a Markov-modulated toy
process, atomicity of embedded discrete supports versus continuous draws,
and exact mutual-information decay of the token corruption channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .embedder import Codebook
from .errors import ConfigError
from .schedules import ContinuousSchedule, DiscreteSchedule


# ---------------------------------------------------------------------------
# looped rollouts vs explicit Euler


class LoopedBlock:
    """Residual two-layer map with shared weights, h -> h + scale*tanh(hW1+b)W2."""

    def __init__(self, dim: int, hidden: int = 16, scale: float = 0.1, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.w1 = rng.standard_normal((dim, hidden)) / math.sqrt(dim)
        self.b1 = rng.standard_normal(hidden) * 0.1
        self.w2 = rng.standard_normal((hidden, dim)) / math.sqrt(hidden)
        self.scale = scale

    def __call__(self, h: np.ndarray) -> np.ndarray:
        return h + self.scale * np.tanh(h @ self.w1 + self.b1) @ self.w2


def simulate_looped_via_euler(block: Callable, h0: np.ndarray, T: int):
    """Roll the block directly and via Euler on the scaled vector field.

    The Euler path integrates v(z) = T*(block(z) - z) with step 1/T, which is
    algebraically one block application per step; the returned gap is pure
    floating-point re-association.
    """
    if T < 1:
        raise ConfigError("T must be >= 1")
    looped = [np.array(h0, dtype=np.float64)]
    euler = [np.array(h0, dtype=np.float64)]
    gap = 0.0
    for _ in range(T):
        looped.append(block(looped[-1]))
        z = euler[-1]
        v = T * (block(z) - z)
        euler.append(z + (1.0 / T) * v)
        gap = max(gap, float(np.abs(looped[-1] - euler[-1]).max()))
    return looped, euler, gap


def looped_emulates_integrator(
    vector_field: Callable[[np.ndarray, float], np.ndarray],
    n_steps: int,
    h0: np.ndarray,
    horizon: float = 1.0,
    reference_steps: int = 1024,
    block_builder: Optional[Callable[[float, float], Callable]] = None,
) -> float:
    """Terminal error of per-step blocks that implement one integrator step.

    block_builder(dt, t_k) must return the step map z -> z + dt*v(z, t_k);
    by default that map is built directly from the vector field. The
    reference is the same explicit Euler scheme on a much finer mesh.
    """
    if block_builder is None:
        def block_builder(dt, t_k):
            return lambda z: z + dt * vector_field(z, t_k)

    def rollout(steps: int) -> np.ndarray:
        z = np.array(h0, dtype=np.float64)
        dt = horizon / steps
        for k in range(steps):
            z = block_builder(dt, k * dt)(z)
        return z

    terminal = rollout(n_steps)
    reference = rollout(reference_steps)
    return float(np.abs(terminal - reference).max())


def fit_order(mesh_sizes: Sequence[int], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(step size)."""
    dts = np.log([1.0 / n for n in mesh_sizes])
    errs = np.log(errors)
    slope, _ = np.polyfit(dts, errs, 1)
    return float(slope)


# ---------------------------------------------------------------------------
# operator splitting on a Markov-modulated scalar diffusion


@dataclass
class CoupledToyProcess:
    """Two-state jump process modulating the target mean of a scalar OU law.

    The joint density lives on a 1-D grid per discrete state; rows of the
    jump generator sum to zero. The reference integrator applies both
    generators in every fine step, the split integrator alternates them.
    """

    g01: float = 1.0
    g10: float = 1.0
    kappa: float = 1.0
    noise_sigma: float = 0.5
    n_cells: int = 512
    z_max: float = 4.0
    horizon: float = 1.0
    ref_dt: float = 1e-4
    means: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        dz = 2.0 * self.z_max / self.n_cells
        diff = 0.5 * self.noise_sigma**2
        drift_max = self.kappa * (self.z_max + max(abs(m) for m in self.means))
        if self.ref_dt > dz * dz / (2.0 * diff) or self.ref_dt > dz / drift_max:
            raise ConfigError("reference step violates the grid stability bound")

    def grid(self) -> tuple[np.ndarray, float]:
        dz = 2.0 * self.z_max / self.n_cells
        centers = -self.z_max + dz * (np.arange(self.n_cells) + 0.5)
        return centers, dz

    def initial_density(self) -> np.ndarray:
        centers, dz = self.grid()
        bump = np.exp(-0.5 * (centers / 0.5) ** 2)
        bump /= bump.sum() * dz
        return np.stack([0.5 * bump, 0.5 * bump])

    def _fokker_planck_rate(self, p: np.ndarray, centers: np.ndarray, dz: float) -> np.ndarray:
        diff = 0.5 * self.noise_sigma**2
        out = np.zeros_like(p)
        for x in range(2):
            drift = self.kappa * (self.means[x] - centers)
            flux = drift * p[x]
            dflux = np.zeros_like(flux)
            dflux[1:-1] = (flux[2:] - flux[:-2]) / (2.0 * dz)
            dflux[0] = flux[1] / (2.0 * dz)
            dflux[-1] = -flux[-2] / (2.0 * dz)
            lap = np.zeros_like(flux)
            lap[1:-1] = (p[x, 2:] - 2.0 * p[x, 1:-1] + p[x, :-2]) / (dz * dz)
            lap[0] = (p[x, 1] - 2.0 * p[x, 0]) / (dz * dz)
            lap[-1] = (p[x, -2] - 2.0 * p[x, -1]) / (dz * dz)
            out[x] = -dflux + diff * lap
        return out

    def _jump_rate(self, p: np.ndarray) -> np.ndarray:
        return np.stack(
            [-self.g01 * p[0] + self.g10 * p[1], self.g01 * p[0] - self.g10 * p[1]]
        )

    def _jump_exact(self, p: np.ndarray, dt: float) -> np.ndarray:
        total_rate = self.g01 + self.g10
        if total_rate == 0.0:
            return p
        mass = p[0] + p[1]
        target0 = self.g10 / total_rate * mass
        decay = math.exp(-total_rate * dt)
        p0 = target0 + (p[0] - target0) * decay
        return np.stack([p0, mass - p0])

    def reference_terminal(self) -> np.ndarray:
        centers, dz = self.grid()
        p = self.initial_density()
        n = round(self.horizon / self.ref_dt)
        dt = self.horizon / n
        for _ in range(n):
            p = p + dt * (self._fokker_planck_rate(p, centers, dz) + self._jump_rate(p))
        return p

    def split_terminal(self, macro_dt: float) -> np.ndarray:
        centers, dz = self.grid()
        p = self.initial_density()
        n_macro = round(self.horizon / macro_dt)
        sub = max(1, round(macro_dt / self.ref_dt))
        dt_sub = macro_dt / sub
        for _ in range(n_macro):
            p = self._jump_exact(p, macro_dt)
            for _ in range(sub):
                p = p + dt_sub * self._fokker_planck_rate(p, centers, dz)
        return p


def trotter_error(process: CoupledToyProcess, macro_dt: float) -> float:
    """Total-variation gap at the horizon between split and coupled evolution."""
    _, dz = process.grid()
    diff = process.split_terminal(macro_dt) - process.reference_terminal()
    return 0.5 * float(np.abs(diff).sum()) * dz


# ---------------------------------------------------------------------------
# support atomicity


def support_atomicity_check(
    vocab_size: int,
    length: int,
    codebook: Codebook,
    t: float,
    n_samples: int,
    seed: int = 0,
    schedule: Optional[DiscreteSchedule] = None,
    cont_schedule: Optional[ContinuousSchedule] = None,
) -> tuple[int, int]:
    """Distinct embedded discrete states vs distinct continuous draws at time t."""
    if vocab_size * length > 16:
        raise ConfigError("enumeration bound V*L <= 16 exceeded")
    schedule = schedule or DiscreteSchedule("masked_linear")
    cont_schedule = cont_schedule or ContinuousSchedule("concave_sqrt")
    rng = np.random.default_rng(seed)
    x0 = rng.integers(0, vocab_size, size=length)

    eta = schedule.eta(t)
    keep = rng.random((n_samples, length)) < eta
    x_t = np.where(keep, x0[None, :], vocab_size)
    table = np.concatenate(
        [codebook.vectors.numpy().astype(np.float64), np.zeros((1, codebook.dim))], axis=0
    )
    embedded = table[x_t].reshape(n_samples, -1)
    n_discrete = len({row.tobytes() for row in embedded})

    alpha, sigma = cont_schedule.alpha_sigma(t)
    z0 = table[x0].reshape(-1)
    z_t = alpha * z0[None, :] + sigma * rng.standard_normal((n_samples, z0.size))
    n_continuous = len({row.tobytes() for row in z_t})
    return n_discrete, n_continuous


# ---------------------------------------------------------------------------
# exact information decay


def forward_channel(schedule: DiscreteSchedule, vocab_size: int, t: float) -> np.ndarray:
    """Rows q(x_t | x0) over the augmented vocabulary, one row per clean token."""
    eta = schedule.eta(t)
    pi = schedule.pi(vocab_size)
    rows = np.tile((1.0 - eta) * pi, (vocab_size, 1))
    rows[np.arange(vocab_size), np.arange(vocab_size)] += eta
    return rows


def mutual_information(source: np.ndarray, channel: np.ndarray) -> float:
    """Plug-in I(x0; x_t) for an exactly known source and channel."""
    joint = source[:, None] * channel
    marginal = joint.sum(axis=0)
    mask = joint > 0.0
    ratio = np.where(mask, channel / np.where(marginal > 0, marginal, 1.0), 1.0)
    return float((joint[mask] * np.log(ratio[mask])).sum())


def info_decay_suite(
    vocab_size: int,
    schedule: DiscreteSchedule,
    t_grid: Sequence[float],
    source: Optional[np.ndarray] = None,
    logit_ensemble: Optional[np.ndarray] = None,
) -> dict:
    """Exact MI along the grid plus the token-sampling information bounds."""
    if vocab_size > 8:
        raise ConfigError("brute-force regime requires V <= 8")
    if source is None:
        source = np.full(vocab_size, 1.0 / vocab_size)
    mi = np.array(
        [mutual_information(source, forward_channel(schedule, vocab_size, t)) for t in t_grid]
    )
    monotone = bool(np.all(np.diff(mi) <= 1e-12))

    if logit_ensemble is None:
        rng = np.random.default_rng(0)
        logit_ensemble = rng.standard_normal((32, vocab_size)) * 2.0
    probs = np.exp(logit_ensemble - logit_ensemble.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    weights = np.full(len(probs), 1.0 / len(probs))
    marginal = weights @ probs

    def entropy(p):
        p = p[p > 0]
        return float(-(p * np.log(p)).sum())

    h_token = entropy(marginal)
    h_cond = float(sum(w * entropy(p) for w, p in zip(weights, probs)))
    return {
        "t_grid": list(t_grid),
        "mi": mi.tolist(),
        "monotone": monotone,
        "token_entropy": h_token,
        "log_vocab": math.log(vocab_size),
        "mi_logits_token": h_token - h_cond,
    }


# ---------------------------------------------------------------------------
# the runnable suite


@dataclass
class CheckRow:
    name: str
    value: float
    threshold: str
    passed: bool


def run_verification_suite(checks: Optional[Sequence[str]] = None) -> list[CheckRow]:
    """Run every theory check (or a named subset) and return pass/fail rows."""
    from .embedder import build_codebook
    from .schedules import SchedulePair, log_snr_slope

    available = {
        "euler_loop",
        "integrator_emulation",
        "trotter",
        "mi_decay",
        "support",
        "schedule_match",
    }
    selected = set(checks) if checks else available
    unknown = selected - available
    if unknown:
        raise ConfigError(f"unknown verification checks: {sorted(unknown)}")
    rows: list[CheckRow] = []

    if "euler_loop" in selected:
        rng = np.random.default_rng(11)
        h0 = rng.standard_normal((4, 8)) * 0.5
        worst = 0.0
        for T in (1, 16, 64, 128):
            block = LoopedBlock(8, seed=3)
            _, _, gap = simulate_looped_via_euler(block, h0, T)
            worst = max(worst, gap)
        rows.append(CheckRow("euler_loop_gap", worst, "<= 1e-12", worst <= 1e-12))

    if "integrator_emulation" in selected:
        field_fn = lambda z, t: -z
        h0 = np.ones(4)
        meshes = [16, 32, 64, 128]
        errors = [looped_emulates_integrator(field_fn, n, h0) for n in meshes]
        slope = fit_order(meshes, errors)
        rows.append(
            CheckRow("integrator_emulation_order", slope, "in [0.8, 1.2]", 0.8 <= slope <= 1.2)
        )
        bound = abs((1.0 - 1.0 / 16.0) ** 16 - math.exp(-1.0))
        factor = errors[0] / bound
        rows.append(
            CheckRow("integrator_error_vs_euler_bound", factor, "<= 3", factor <= 3.0)
        )

    if "trotter" in selected:
        process = CoupledToyProcess()
        meshes = [16, 32, 64, 128]
        gaps = [trotter_error(process, 1.0 / n) for n in meshes]
        slope = fit_order(meshes, gaps)
        rows.append(CheckRow("trotter_order", slope, "in [0.8, 1.2]", 0.8 <= slope <= 1.2))
        coarse = trotter_error(process, 1.0)
        rows.append(
            CheckRow(
                "trotter_refinement_monotone",
                coarse - gaps[0],
                "> 0",
                coarse > gaps[0],
            )
        )
        decoupled = trotter_error(CoupledToyProcess(g01=0.0, g10=0.0), 1.0 / 16.0)
        rows.append(CheckRow("trotter_decoupled_gap", decoupled, "< 1e-3", decoupled < 1e-3))

    if "mi_decay" in selected:
        suite = info_decay_suite(
            4, DiscreteSchedule("masked_linear"), [i / 10 for i in range(11)]
        )
        rows.append(
            CheckRow("mi_monotone", float(suite["monotone"]), "== 1", suite["monotone"])
        )
        erasure_gap = abs(suite["mi"][5] - 0.5 * math.log(4.0))
        rows.append(CheckRow("mi_erasure_value_gap", erasure_gap, "<= 1e-12", erasure_gap <= 1e-12))
        info_ok = suite["mi_logits_token"] <= suite["token_entropy"] + 1e-12 and suite[
            "token_entropy"
        ] <= suite["log_vocab"] + 1e-12
        rows.append(
            CheckRow("token_sampling_info_bound", suite["mi_logits_token"], "<= H <= log V", info_ok)
        )

    if "support" in selected:
        codebook = build_codebook("random_orthonormal", 2, 4, seed=5)
        n_disc, n_cont = support_atomicity_check(2, 2, codebook, 0.5, 10_000, seed=9)
        rows.append(CheckRow("support_discrete_distinct", n_disc, "<= 9", n_disc <= 9))
        rows.append(
            CheckRow("support_continuous_distinct", n_cont, "== 10000", n_cont == 10_000)
        )

    if "schedule_match" in selected:
        pair = SchedulePair()
        worst = max(
            abs(
                log_snr_slope(pair, t, "continuous") - log_snr_slope(pair, t, "discrete")
            )
            for t in [0.1 * k for k in range(1, 10)]
        )
        rows.append(CheckRow("schedule_slope_match", worst, "< 1e-3", worst < 1e-3))

    return rows
