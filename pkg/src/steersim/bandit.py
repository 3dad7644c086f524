"""EXP3.P adversarial bandit learner with a non-uniform initial distribution.

Weights are kept in log space: ``log w_i = log pi_i + eta * G_i`` where ``G_i``
is the cumulative importance-weighted gain estimate. Mixing with the uniform
exploration term gives the sampling distribution::

    p_i = (1 - gamma) * w_i / sum_k w_k + gamma / K

With a uniform prior this is the textbook EXP3.P update.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

SIMPLEX_TOL = 1e-12


@njit(cache=True, nogil=True)
def mix_probabilities(log_prior, cum_gains, eta, gamma, out):
    """Write the exploration-mixed exponential-weights distribution into ``out``."""
    k = log_prior.shape[0]
    top = -np.inf
    for i in range(k):
        v = log_prior[i] + eta * cum_gains[i]
        out[i] = v
        if v > top:
            top = v
    total = 0.0
    for i in range(k):
        out[i] = math.exp(out[i] - top)
        total += out[i]
    for i in range(k):
        out[i] = (1.0 - gamma) * out[i] / total + gamma / k


@njit(cache=True, nogil=True)
def accumulate_estimates(probs, chosen, gain, bias, cum_gains):
    """Add ``(gain * 1{i == chosen} + bias) / p_i`` to every arm's cumulative estimate."""
    for i in range(probs.shape[0]):
        num = bias
        if i == chosen:
            num += gain
        if num != 0.0:
            cum_gains[i] += num / probs[i]


@njit(cache=True, nogil=True)
def draw_arm(probs, u):
    """Inverse-CDF draw of an arm from a single uniform ``u`` in [0, 1)."""
    acc = 0.0
    last = 0
    for i in range(probs.shape[0]):
        if probs[i] > 0.0:
            last = i
            acc += probs[i]
            if u < acc:
                return i
    return last


@dataclass(frozen=True)
class Exp3pConfig:
    num_arms: int = 2
    learning_rate: float = 0.05
    exploration: float = 0.0
    bias: float = 0.0
    initial_dist: tuple[float, ...] | None = None
    theory_mode: bool = False

    def __post_init__(self):
        if self.num_arms < 1:
            raise ValueError("num_arms must be positive")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.exploration <= 1.0:
            raise ValueError(f"exploration must lie in [0, 1], got {self.exploration}")
        if not 0.0 <= self.bias <= 1.0:
            raise ValueError(f"bias must lie in [0, 1], got {self.bias}")
        if self.bias > 0 and self.exploration == 0:
            # Estimates divide by every p_i; without exploration p_i may underflow to 0.
            raise ValueError("bias > 0 requires exploration > 0")
        if self.initial_dist is None:
            object.__setattr__(self, "initial_dist", (1.0 / self.num_arms,) * self.num_arms)
        dist = tuple(float(v) for v in self.initial_dist)
        object.__setattr__(self, "initial_dist", dist)
        validate_distribution(dist, self.num_arms)
        if self.theory_mode:
            k, eta, gamma = self.num_arms, self.learning_rate, self.exploration
            if gamma > 0.5 or (1 + self.bias) * k * eta > gamma * (1 + 1e-12):
                raise ValueError(
                    "theory mode needs gamma <= 1/2 and (1 + bias) * K * eta <= gamma"
                )

    def with_initial(self, dist) -> "Exp3pConfig":
        return Exp3pConfig(
            self.num_arms, self.learning_rate, self.exploration, self.bias, tuple(dist), self.theory_mode
        )


def validate_distribution(dist, k: int, allow_zero: bool = False) -> None:
    if len(dist) != k:
        raise ValueError(f"initial distribution has {len(dist)} entries, expected {k}")
    if allow_zero:
        bad = any(v < 0 for v in dist)
    else:
        bad = any(not v > 0 for v in dist)
    if bad:
        raise ValueError(f"initial distribution entries must be positive, got {dist}")
    if abs(math.fsum(dist) - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"initial distribution must sum to 1, got {math.fsum(dist)}")


@dataclass
class LearnerState:
    log_prior: np.ndarray
    cum_gains: np.ndarray
    probabilities: np.ndarray
    learning_rate: float
    round: int = 0

    @property
    def weights(self) -> np.ndarray:
        """Exponential weights rescaled so the largest is 1."""
        lw = self.log_prior + self.learning_rate * self.cum_gains
        return np.exp(lw - lw.max())

    def copy(self) -> "LearnerState":
        return LearnerState(
            self.log_prior.copy(),
            self.cum_gains.copy(),
            self.probabilities.copy(),
            self.learning_rate,
            self.round,
        )


def init(config: Exp3pConfig) -> LearnerState:
    log_prior = np.log(np.asarray(config.initial_dist, dtype=np.float64))
    cum = np.zeros(config.num_arms)
    probs = np.empty(config.num_arms)
    mix_probabilities(log_prior, cum, config.learning_rate, config.exploration, probs)
    return LearnerState(log_prior, cum, probs, config.learning_rate, 0)


def sample_action(state: LearnerState, rng: np.random.Generator) -> int:
    return int(draw_arm(state.probabilities, rng.random()))


def update(state: LearnerState, chosen: int, gain: float, config: Exp3pConfig) -> LearnerState:
    """Return the learner state after observing ``gain`` for the pulled arm."""
    if not 0.0 <= gain <= 1.0:
        raise ValueError(f"gain must lie in [0, 1], got {gain}")
    if not 0 <= chosen < config.num_arms:
        raise ValueError(f"arm index {chosen} out of range")
    new = state.copy()
    accumulate_estimates(state.probabilities, chosen, gain, config.bias, new.cum_gains)
    mix_probabilities(new.log_prior, new.cum_gains, config.learning_rate, config.exploration, new.probabilities)
    new.round += 1
    return new


def normalize_gain(v: float, v_min: float, v_max: float) -> float:
    if not v_max > v_min:
        raise ValueError(f"empty gain range [{v_min}, {v_max}]")
    if not v_min <= v <= v_max:
        raise ValueError(f"utility {v} outside declared bounds [{v_min}, {v_max}]")
    return (v - v_min) / (v_max - v_min)


def theory_params(horizon: int, num_arms: int, delta: float, pi_star: float) -> tuple[float, float, float]:
    """Tuned ``(bias, eta, gamma)`` for the high-probability bound.

    ``pi_star`` is the initial probability of the best arm in hindsight.
    """
    if horizon < 1 or num_arms < 2:
        raise ValueError("need horizon >= 1 and at least two arms")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not 0.0 < pi_star <= 1.0:
        raise ValueError(f"pi_star must lie in (0, 1], got {pi_star}")
    kt = num_arms * horizon
    bias = math.sqrt(math.log(num_arms / delta) / kt)
    eta = math.sqrt(math.log(1.0 / pi_star) / kt)
    gamma = (1 + bias) * num_arms * eta
    if eta == 0.0:
        warnings.warn("pi_star = 1 gives eta = 0: the learner never moves", stacklevel=2)
    if gamma > 0.5:
        raise ValueError(
            f"horizon {horizon} too short: tuned exploration {gamma:.4g} exceeds 1/2"
        )
    if bias > 1.0:
        raise ValueError(f"horizon {horizon} too short: tuned bias {bias:.4g} exceeds 1")
    return bias, eta, gamma


def regret_bound(horizon: float, num_arms: int, delta: float, pi_star: float) -> float:
    return math.sqrt(horizon * num_arms) * (
        4.0 * math.sqrt(math.log(1.0 / pi_star)) + 2.0 * math.sqrt(math.log(num_arms / delta))
    )
