"""Stage game of the two-player investment game.

Each round both players choose to invest (``I``) or not (``N``). The payoff
depends on a hidden state ``G``/``B``::

                 other I          other N
    self I    z + y_theta            z
    self N         0                 0

A mediator can add a per-round payment ``M`` whenever a player's own action
matches its component of the target profile.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

INVEST = "I"
NOT_INVEST = "N"
ACTIONS = (INVEST, NOT_INVEST)
STATES = ("G", "B")
SIGNALS = ("g", "b")


# Monotone externality maps. Every entry maps R -> R_+ and is non-decreasing.
def _identity(x: float) -> float:
    return max(x, 0.0)


def _affine(x: float, slope: float = 1.0, offset: float = 0.0) -> float:
    return max(slope * x, 0.0) + offset


def _logistic(x: float, scale: float = 1.0, slope: float = 1.0) -> float:
    return scale / (1.0 + math.exp(-slope * x))


PHI_REGISTRY: dict[str, Callable[..., float]] = {
    "identity": _identity,
    "affine": _affine,
    "logistic": _logistic,
}


@dataclass(frozen=True)
class Features:
    """Player feature vectors plus the name of a registered monotone map."""

    f1: tuple[float, ...]
    f2: tuple[float, ...]
    phi: str = "identity"
    phi_params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "f1", tuple(float(v) for v in self.f1))
        object.__setattr__(self, "f2", tuple(float(v) for v in self.f2))
        object.__setattr__(self, "phi_params", dict(self.phi_params))

    def __hash__(self):
        return hash((self.f1, self.f2, self.phi, tuple(sorted(self.phi_params.items()))))


@dataclass(frozen=True)
class GameParams:
    psi: float
    y_good: float
    y_bad: float
    externality: float | Features = 0.0

    def __post_init__(self):
        if not 0.0 < self.psi < 1.0:
            raise ValueError(f"psi must lie in (0, 1), got {self.psi}")
        if not self.y_bad < 0.0 < self.y_good:
            raise ValueError(
                f"need y_bad < 0 < y_good, got y_bad={self.y_bad}, y_good={self.y_good}"
            )
        object.__setattr__(self, "_z", resolve_externality(self))

    @property
    def z(self) -> float:
        return self._z  # type: ignore[attr-defined]

    def y(self, state: str) -> float:
        if state == "G":
            return self.y_good
        if state == "B":
            return self.y_bad
        raise ValueError(f"unknown state {state!r}")


def resolve_externality(params: GameParams) -> float:
    """Return the externality ``z``, evaluating ``phi(<f1, f2>)`` if features are given."""
    ext = params.externality
    if isinstance(ext, Features):
        if len(ext.f1) != len(ext.f2):
            raise ValueError(
                f"feature dimension mismatch: {len(ext.f1)} vs {len(ext.f2)}"
            )
        if ext.phi not in PHI_REGISTRY:
            raise ValueError(
                f"unknown externality map {ext.phi!r}; expected one of {sorted(PHI_REGISTRY)}"
            )
        p = ext.phi_params
        if p.get("slope", 1.0) <= 0 or p.get("scale", 1.0) <= 0 or p.get("offset", 0.0) < 0:
            raise ValueError(f"map {ext.phi!r} with {p} is not monotone increasing into R_+")
        inner = float(np.dot(ext.f1, ext.f2)) if ext.f1 else 0.0
        z = PHI_REGISTRY[ext.phi](inner, **p)
    else:
        z = float(ext)
    if not z >= 0.0:
        raise ValueError(f"externality must be non-negative, got {z}")
    return z


@dataclass(frozen=True)
class ActionProfile:
    a1: str = INVEST
    a2: str = INVEST

    def __post_init__(self):
        for a in (self.a1, self.a2):
            if a not in ACTIONS:
                raise ValueError(f"action must be one of {ACTIONS}, got {a!r}")

    @classmethod
    def parse(cls, text: str | Sequence[str]) -> "ActionProfile":
        if len(text) != 2:
            raise ValueError(f"target profile needs two actions, got {text!r}")
        return cls(text[0], text[1])

    def __getitem__(self, player: int) -> str:
        return (self.a1, self.a2)[player]

    def __str__(self):
        return self.a1 + self.a2


@dataclass(frozen=True)
class IncentiveScheme:
    """Constant per-round payment ``payment_m`` for matching the target."""

    payment_m: float = 0.0
    target: ActionProfile = ActionProfile()

    def __post_init__(self):
        if not self.payment_m >= 0.0:
            raise ValueError(f"payment_m must be >= 0, got {self.payment_m}")

    @property
    def cap(self) -> float:
        return self.payment_m


def check_payment_level(params: GameParams, scheme: IncentiveScheme) -> bool:
    """True iff ``M + z + y_B > 0``; warns when the weaker ``M > z + y_B`` reading fails."""
    z = params.z
    if not scheme.payment_m > z + params.y_bad:
        warnings.warn(
            f"M={scheme.payment_m} does not exceed z + y_B = {z + params.y_bad}",
            stacklevel=2,
        )
    return scheme.payment_m + z + params.y_bad > 0.0


def payoff(a_self: str, a_other: str, state: str, params: GameParams) -> float:
    if a_self == NOT_INVEST:
        return 0.0
    if a_other == INVEST:
        return params.z + params.y(state)
    return params.z


def payment(a_self: str, a_other: str, scheme: IncentiveScheme, player: int = 0) -> float:
    """Payment to ``player`` (0 or 1); depends on its own action only."""
    return scheme.payment_m if a_self == scheme.target[player] else 0.0


def modified_utility(
    a_self: str,
    a_other: str,
    state: str,
    params: GameParams,
    scheme: IncentiveScheme,
    player: int = 0,
) -> float:
    return payoff(a_self, a_other, state, params) + payment(a_self, a_other, scheme, player)


def utility_bounds(params: GameParams, scheme: IncentiveScheme) -> tuple[float, float]:
    """Static range of the modified utility, used to map rewards into [0, 1]."""
    return min(0.0, params.z + params.y_bad), params.z + params.y_good + scheme.payment_m


def check_feasible(strategy: Sequence[float], tol: float = 1e-12) -> None:
    """Raise unless each ``(alpha_j, gamma_j)`` pair is a valid symmetric joint law."""
    if len(strategy) != 4:
        raise ValueError("strategy must be (alpha_g, gamma_g, alpha_b, gamma_b)")
    for name, (a, g) in zip(SIGNALS, (strategy[:2], strategy[2:])):
        if not (-tol <= g <= a + tol and a <= 1.0 + tol and 1.0 - 2.0 * a + g >= -tol):
            raise ValueError(
                f"infeasible strategy for signal {name!r}: alpha={a}, gamma={g}"
            )


def expected_utility(strategy: Sequence[float], policy, params: GameParams) -> float:
    """Per-player expected stage utility under a signal-conditioned joint strategy.

    ``strategy`` is ``(alpha_g, gamma_g, alpha_b, gamma_b)``: the probability a
    player invests and the probability both invest, for each signal.
    """
    check_feasible(strategy)
    a_g, g_g, a_b, g_b = strategy
    psi, z = params.psi, params.z
    yg, yb = params.y_good, params.y_bad
    al, be = policy.alpha, policy.beta
    return (
        psi * al * (g_g * yg + a_g * z)
        + psi * (1 - al) * (g_b * yg + a_b * z)
        + (1 - psi) * be * (g_g * yb + a_g * z)
        + (1 - psi) * (1 - be) * (g_b * yb + a_b * z)
    )
