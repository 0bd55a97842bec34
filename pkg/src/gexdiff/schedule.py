"""Linear beta schedule and closed-form forward-process quantities.

Vectors are indexed by timestep: ``s.alpha_bar_at(t)`` for ``t`` in ``1..T``,
with ``alpha_bar_at(0) == 1`` by convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidRange, StepOutOfRange

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta_start: float
    beta_end: float
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)
    beta_tilde: np.ndarray = field(repr=False)

    def _check(self, t: int, lowest: int = 1) -> int:
        t = int(t)
        if not lowest <= t <= self.T:
            raise StepOutOfRange(f"timestep {t} outside [{lowest}, {self.T}]")
        return t

    def beta_at(self, t: int) -> float:
        return float(self.beta[self._check(t) - 1])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[self._check(t) - 1])

    def alpha_bar_at(self, t: int) -> float:
        t = self._check(t, lowest=0)
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def beta_tilde_at(self, t: int) -> float:
        return float(self.beta_tilde[self._check(t) - 1])

    def rows(self):
        """``(t, beta, alpha, alpha_bar, beta_tilde)`` tuples for t = 1..T."""
        for i in range(self.T):
            yield (i + 1, float(self.beta[i]), float(self.alpha[i]),
                   float(self.alpha_bar[i]), float(self.beta_tilde[i]))

    def to_csv(self) -> str:
        lines = ["t,beta,alpha,alpha_bar,beta_tilde"]
        lines += [",".join([str(r[0])] + [repr(v) for v in r[1:]]) for r in self.rows()]
        return "\n".join(lines) + "\n"


def linear_schedule(T: int = DEFAULT_T, beta_start: float = DEFAULT_BETA_START,
                    beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    T = int(T)
    if T < 1:
        raise InvalidRange(f"T must be >= 1, got {T}")
    if T == 1:
        if not 0 < beta_start < 1:
            raise InvalidRange(f"need 0 < beta_start < 1, got {beta_start}")
    elif not 0 < beta_start < beta_end < 1:
        raise InvalidRange(f"need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([float(beta_start)])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    beta_tilde = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta
    for arr in (beta, alpha, alpha_bar, beta_tilde):
        arr.setflags(write=False)
    return NoiseSchedule(T, float(beta_start), float(beta_end), beta, alpha, alpha_bar, beta_tilde)


def q_sample(x0, t: int, eps, s: NoiseSchedule) -> np.ndarray:
    """Noised sample ``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``."""
    x0, eps = np.asarray(x0, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise InvalidRange(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    ab = s.alpha_bar_at(s._check(t))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def q_sample_batch(x0: np.ndarray, t: np.ndarray, eps: np.ndarray, s: NoiseSchedule) -> np.ndarray:
    """Row-wise :func:`q_sample` with one timestep per row."""
    t = np.asarray(t, dtype=np.int64)
    if t.min() < 1 or t.max() > s.T:
        raise StepOutOfRange(f"timesteps must lie in [1, {s.T}]")
    ab = s.alpha_bar[t - 1][:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def posterior_coefficients(t: int, s: NoiseSchedule) -> tuple[float, float]:
    """Weights ``(c0, ct)`` with posterior mean ``c0 x0 + ct x_t``."""
    t = s._check(t)
    ab, ab_prev = s.alpha_bar_at(t), s.alpha_bar_at(t - 1)
    beta, alpha = s.beta_at(t), s.alpha_at(t)
    return np.sqrt(ab_prev) * beta / (1.0 - ab), np.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab)


def posterior_mean(x0, xt, t: int, s: NoiseSchedule) -> np.ndarray:
    """Mean of q(x_{t-1} | x_t, x0)."""
    x0, xt = np.asarray(x0, dtype=np.float64), np.asarray(xt, dtype=np.float64)
    if x0.shape != xt.shape:
        raise InvalidRange(f"x0 shape {x0.shape} != x_t shape {xt.shape}")
    c0, ct = posterior_coefficients(t, s)
    return c0 * x0 + ct * xt
