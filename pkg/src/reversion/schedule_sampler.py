"""Timestep distributions for the denoising loss.

``importance`` mode skews sampling toward large (high-noise) timesteps using
the raised-cosine density ``f(t) = (1 - alpha*cos(pi*t/T)) / T``; ``uniform``
is the usual reconstruction baseline. Support is the discrete grid ``1..T``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidAlpha, InvalidT, OutOfRange

DEFAULT_ALPHA = 0.5


class Mode(str, enum.Enum):
    IMPORTANCE = "importance"
    UNIFORM = "uniform"


def density(t: float, T: float, alpha: float = DEFAULT_ALPHA) -> float:
    if not T > 0:
        raise OutOfRange(f"T must be positive, got {T}")
    if not 0 < alpha <= 1:
        raise OutOfRange(f"alpha must lie in (0, 1], got {alpha}")
    if not 0 <= t <= T:
        raise OutOfRange(f"t={t} outside [0, {T}]")
    return (1.0 - alpha * math.cos(math.pi * t / T)) / T


@dataclass(frozen=True)
class TimestepDistribution:
    T: int
    alpha: float | None
    mode: Mode
    probabilities: np.ndarray = field(repr=False)
    cdf: np.ndarray = field(repr=False)

    def prob(self, t: int) -> float:
        return float(self.probabilities[t - 1])

    def tail_mass(self, t: int) -> float:
        """P(timestep > t)."""
        return math.fsum(self.probabilities[t:])

    def mean(self) -> float:
        return float(np.arange(1, self.T + 1) @ self.probabilities)


def build_distribution(T: int, alpha: float | None = DEFAULT_ALPHA, mode: Mode | str = Mode.IMPORTANCE) -> TimestepDistribution:
    mode = Mode(mode)
    if isinstance(T, bool) or not isinstance(T, (int, np.integer)) or T < 2:
        raise InvalidT(f"T must be an integer >= 2, got {T!r}")
    T = int(T)
    if mode is Mode.IMPORTANCE:
        if alpha is None or not 0 < alpha <= 1:
            raise InvalidAlpha(f"alpha must lie in (0, 1] for importance sampling, got {alpha}")
        t = np.arange(1, T + 1, dtype=np.float64)
        weights = (1.0 - alpha * np.cos(np.pi * t / T)) / T
        probs = weights / weights.sum()
    else:
        alpha = None
        probs = np.full(T, 1.0 / T)
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    probs.setflags(write=False)
    cdf.setflags(write=False)
    return TimestepDistribution(T, alpha, mode, probs, cdf)


def sample(dist: TimestepDistribution, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` i.i.d. timesteps in ``1..T`` by inverse-CDF lookup."""
    if n < 1:
        raise OutOfRange(f"n must be positive, got {n}")
    u = rng.random(n)
    return np.searchsorted(dist.cdf, u, side="right").astype(np.int64) + 1
