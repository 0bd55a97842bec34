"""Reverse-process samplers: ancestral DDPM and sub-sequence DDIM."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import ExpressionMatrix, truncate_negatives
from .errors import InputError, InvalidEta, InvalidSteps, NegativeRadicand, NonFinite, StepOutOfRange
from .rng import Xoshiro256
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

DEFAULT_SAMPLE_BATCH = 256


@dataclass(frozen=True)
class TauSchedule:
    tau: tuple[int, ...]
    eta: float = 0.0

    def __post_init__(self):
        tau = tuple(int(t) for t in self.tau)
        object.__setattr__(self, "tau", tau)
        if not tau:
            raise InvalidSteps("tau must not be empty")
        if tau[0] < 1 or any(b <= a for a, b in zip(tau, tau[1:])):
            raise InvalidSteps(f"tau must be strictly increasing positive steps, got {tau[:5]}...")
        if not 0.0 <= self.eta <= 1.0:
            raise InvalidEta(f"eta must lie in [0, 1], got {self.eta}")

    @property
    def T(self) -> int:
        return self.tau[-1]

    def __len__(self) -> int:
        return len(self.tau)


def make_tau(T: int, n_steps: int, mode: str = "equidistant", eta: float = 0.0) -> TauSchedule:
    if not 1 <= n_steps <= T:
        raise InvalidSteps(f"n_steps must lie in [1, {T}], got {n_steps}")
    k = np.arange(1, n_steps + 1, dtype=np.float64)
    if mode == "equidistant":
        raw = np.rint(k * T / n_steps)
    elif mode == "quadratic":
        raw = np.maximum(np.rint(T * (k / n_steps) ** 2), 1)
    else:
        raise InvalidSteps(f"unknown tau mode {mode!r}")
    tau = sorted(set(int(v) for v in raw))
    tau[-1] = T
    return TauSchedule(tuple(tau), eta)


def ddpm_step(x_t, t: int, eps_hat, z, s: NoiseSchedule, sigma: str = "beta") -> np.ndarray:
    """One ancestral step ``x_t -> x_{t-1}``.

    ``sigma="beta"`` uses ``sqrt(beta_t)``; ``"beta_tilde"`` the posterior
    standard deviation. No noise is added at ``t == 1``.
    """
    a, ab = s.alpha_at(t), s.alpha_bar_at(t)
    mean = (x_t - (1.0 - a) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
    if t == 1:
        return mean
    if sigma == "beta":
        sd = np.sqrt(s.beta_at(t))
    elif sigma == "beta_tilde":
        sd = np.sqrt(s.beta_tilde_at(t))
    else:
        raise InputError(f"unknown sigma choice {sigma!r}")
    return mean + sd * z


def ddim_sigma(alpha_bar_prev: float, alpha_bar: float, eta: float) -> float:
    if not 0.0 <= eta <= 1.0:
        raise InvalidEta(f"eta must lie in [0, 1], got {eta}")
    if not alpha_bar_prev > alpha_bar:
        raise InputError(f"need alpha_bar_prev > alpha_bar, got {alpha_bar_prev} <= {alpha_bar}")
    return eta * np.sqrt((1.0 - alpha_bar_prev) / (1.0 - alpha_bar)) * np.sqrt(1.0 - alpha_bar / alpha_bar_prev)


def predict_x0(x_t, t: int, eps_hat, s: NoiseSchedule) -> np.ndarray:
    ab = s.alpha_bar_at(t)
    return (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def ddim_step(x_t, t: int, t_prev: int, eps_hat, z, eta: float, s: NoiseSchedule) -> np.ndarray:
    """Jump from step ``t`` to ``t_prev < t``; ``t_prev == 0`` lands in data space."""
    if not 0 <= t_prev < t:
        raise StepOutOfRange(f"need 0 <= t_prev < t, got t_prev={t_prev}, t={t}")
    ab, ab_prev = s.alpha_bar_at(t), s.alpha_bar_at(t_prev)
    sig = ddim_sigma(ab_prev, ab, eta)
    radicand = 1.0 - ab_prev - sig * sig
    if radicand < 0:
        if radicand < -1e-12:
            raise NegativeRadicand(f"sigma^2 exceeds 1 - alpha_bar at step {t_prev}")
        radicand = 0.0
    out = np.sqrt(ab_prev) * predict_x0(x_t, t, eps_hat, s) + np.sqrt(radicand) * eps_hat
    if sig > 0:
        out = out + sig * z
    return out


@dataclass
class SampleRequest:
    n_samples: int
    method: str = "ddpm"
    tau: TauSchedule | None = None
    seed: int = 0
    postprocess: bool = True
    batch_size: int = DEFAULT_SAMPLE_BATCH

    def __post_init__(self):
        if self.n_samples < 1:
            raise InputError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.method not in ("ddpm", "ddim"):
            raise InputError(f"method must be 'ddpm' or 'ddim', got {self.method!r}")
        if self.method == "ddim" and self.tau is None:
            raise InvalidSteps("ddim sampling needs a tau schedule")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")


@dataclass
class SampleResult:
    matrix: ExpressionMatrix
    denoiser_calls: int  # sequential denoiser evaluations per chain
    wallclock_s: float
    steps: list[int] = field(default_factory=list)
    n_batches: int = 1


def _sample_batch(model, s: NoiseSchedule, req: SampleRequest, rng: Xoshiro256, n: int) -> tuple[np.ndarray, int]:
    genes = model.config.n_genes
    x = rng.normal((n, genes))
    calls = 0
    if req.method == "ddpm":
        for t in range(s.T, 0, -1):
            eps_hat = model.predict(x, np.full(n, t))
            calls += 1
            z = rng.normal((n, genes)) if t > 1 else 0.0
            x = ddpm_step(x, t, eps_hat, z, s)
            if not np.isfinite(x).all():
                raise NonFinite(f"ddpm sampling produced non-finite values at step {t}")
    else:
        tau = req.tau
        steps = list(tau.tau)
        for i in range(len(steps) - 1, -1, -1):
            t = steps[i]
            t_prev = steps[i - 1] if i > 0 else 0
            eps_hat = model.predict(x, np.full(n, t))
            calls += 1
            z = rng.normal((n, genes)) if tau.eta > 0 and t_prev > 0 else 0.0
            x = ddim_step(x, t, t_prev, eps_hat, z, tau.eta, s)
            if not np.isfinite(x).all():
                raise NonFinite(f"ddim sampling produced non-finite values at step {t}")
    return x, calls


def sample(model, s: NoiseSchedule, req: SampleRequest, gene_names=None) -> SampleResult:
    """Generate ``req.n_samples`` rows from pure noise.

    Rows are produced in batches of ``req.batch_size``; batch ``b`` draws from
    ``Xoshiro256(seed ^ b)`` so the output does not depend on how batches are
    scheduled. Negative values are truncated once, after the last step.
    """
    if req.method == "ddim" and req.tau.T != s.T:
        raise InvalidSteps(f"tau ends at {req.tau.T} but the schedule has T={s.T}")
    root = Xoshiro256(req.seed)
    start = time.perf_counter()
    chunks, calls = [], 0
    for b, lo in enumerate(range(0, req.n_samples, req.batch_size)):
        n = min(req.batch_size, req.n_samples - lo)
        x, calls = _sample_batch(model, s, req, root.split(b), n)
        chunks.append(x)
    values = np.concatenate(chunks, axis=0)
    if req.postprocess:
        values = truncate_negatives(values)
    elapsed = time.perf_counter() - start
    names = list(gene_names) if gene_names is not None else [f"gene{i}" for i in range(values.shape[1])]
    ids = [f"synth{i}" for i in range(values.shape[0])]
    steps = list(range(1, s.T + 1)) if req.method == "ddpm" else list(req.tau.tau)
    log.info("sampled %d rows with %s in %.2fs (%d denoiser calls)", req.n_samples, req.method, elapsed, calls)
    return SampleResult(ExpressionMatrix(values, names, ids), calls, elapsed, steps, len(chunks))
