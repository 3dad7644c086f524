"""One-shot information design as a Stackelberg game.

The mediator commits to a signaling policy ``(alpha, beta)`` with
``alpha = P(g | G)`` and ``beta = P(g | B)``. Given the policy, the symmetric
players solve one small linear program per signal over the polygon with
vertices (1, 1), (1/2, 0) and (0, 0). The mediator then maximizes the
probability that a player invests.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .game import GameParams, check_feasible

CASE1, CASE2, CASE3, CASE4 = "Case1", "Case2", "Case3", "Case4"

VERTEX_A = (1.0, 1.0)
VERTEX_B = (0.5, 0.0)
VERTEX_C = (0.0, 0.0)

# Relative slack when comparing vertex values; the closed-form equilibria sit
# exactly on the A/B boundary, which round-off must not flip.
TIE_TOL = 1e-12


class DegenerateThresholdError(ArithmeticError):
    """Raised when ``-y_B - z/2 == 0`` and the sub-threshold policy is undefined."""


@dataclass(frozen=True)
class SignalingPolicy:
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def signal_prob(self, signal: str, state: str) -> float:
        p_g = self.alpha if state == "G" else self.beta
        return p_g if signal == "g" else 1.0 - p_g


@dataclass(frozen=True)
class FollowerCoefficients:
    a_g: float
    b_g: float
    a_b: float
    b_b: float

    def for_signal(self, signal: str) -> tuple[float, float]:
        return (self.a_g, self.b_g) if signal == "g" else (self.a_b, self.b_b)


@dataclass(frozen=True)
class StackelbergSolution:
    policy: SignalingPolicy
    follower: tuple[float, float, float, float]
    case_label: str
    mediator_utility: float
    alternates: tuple["StackelbergSolution", ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "policy": {"alpha": self.policy.alpha, "beta": self.policy.beta},
            "follower": {
                "alpha_g": self.follower[0],
                "gamma_g": self.follower[1],
                "alpha_b": self.follower[2],
                "gamma_b": self.follower[3],
            },
            "case": self.case_label,
            "mediator_utility": self.mediator_utility,
            "alternates": [alt.to_dict() for alt in self.alternates],
        }


def follower_coefficients(policy: SignalingPolicy, params: GameParams) -> FollowerCoefficients:
    psi, z = params.psi, params.z
    al, be = policy.alpha, policy.beta
    return FollowerCoefficients(
        a_g=psi * al * z + (1 - psi) * be * z,
        b_g=psi * al * params.y_good + (1 - psi) * be * params.y_bad,
        a_b=psi * (1 - al) * z + (1 - psi) * (1 - be) * z,
        b_b=psi * (1 - al) * params.y_good + (1 - psi) * (1 - be) * params.y_bad,
    )


def solve_follower_subproblem(a_j: float, b_j: float) -> tuple[float, float]:
    """Closed-form optimum of ``max a_j*alpha + b_j*gamma`` over the feasible polygon.

    Ties between vertices A and B go to A, the profile the mediator prefers.
    """
    if a_j < 0:
        raise ValueError(f"coefficient A_j must be non-negative, got {a_j}")
    slack = TIE_TOL * max(1.0, abs(a_j), abs(b_j))
    if b_j >= -a_j / 2.0 - slack:
        return VERTEX_A
    return VERTEX_B


def follower_response(policy: SignalingPolicy, params: GameParams) -> tuple[float, float, float, float]:
    coef = follower_coefficients(policy, params)
    ag, gg = solve_follower_subproblem(coef.a_g, coef.b_g)
    ab, gb = solve_follower_subproblem(coef.a_b, coef.b_b)
    return (ag, gg, ab, gb)


def mediator_utility(policy: SignalingPolicy, follower: Sequence[float], psi: float) -> float:
    """Probability that a player invests under ``policy`` and the follower strategy."""
    check_feasible(follower)
    al, be = policy.alpha, policy.beta
    p_g = psi * al + (1 - psi) * be
    p_b = psi * (1 - al) + (1 - psi) * (1 - be)
    return follower[0] * p_g + follower[2] * p_b


def case_label(follower: Sequence[float]) -> str:
    good_a = follower[0] == 1.0
    bad_a = follower[2] == 1.0
    return {
        (False, False): CASE1,
        (False, True): CASE2,
        (True, False): CASE3,
        (True, True): CASE4,
    }[(good_a, bad_a)]


def stackelberg_threshold(params: GameParams) -> float:
    """Smallest ``y_B`` for which the mediator can make investing optimal under both signals."""
    return -(params.psi * params.y_good + params.z / 2.0) / (1.0 - params.psi)


def _clamp_unit(value: float, what: str) -> float:
    if 0.0 <= value <= 1.0:
        return value
    clamped = min(max(value, 0.0), 1.0)
    warnings.warn(f"{what}={value:.6g} lies outside [0, 1]; clamped to {clamped}", stacklevel=3)
    return clamped


def solve_stackelberg(
    params: GameParams,
    eta: float = 0.5,
    selection: str = "case2",
) -> StackelbergSolution:
    """Mediator-optimal signaling policy and the induced follower profile.

    Above the threshold the mediator reveals nothing useful (``alpha = beta = eta``)
    and both signals lead to joint investment. Below it there are two optimal
    policies, one per signal that is allowed to fail; ``selection`` picks which is
    returned as primary (``"case2"`` or ``"case3"``), the other goes to ``alternates``.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if selection not in ("case2", "case3"):
        raise ValueError(f"selection must be 'case2' or 'case3', got {selection!r}")

    psi, z = params.psi, params.z
    if params.y_bad >= stackelberg_threshold(params):
        return _build(SignalingPolicy(eta, eta), params)

    denom = (1 - psi) * (-params.y_bad - z / 2.0)
    if denom == 0.0:
        raise DegenerateThresholdError("-y_B - z/2 is zero; sub-threshold policy undefined")
    ratio = psi * (params.y_good + z / 2.0) / denom

    case3 = _build(SignalingPolicy(1.0, _clamp_unit(ratio, "beta")), params)
    case2 = _build(SignalingPolicy(0.0, _clamp_unit(1.0 - ratio, "beta")), params)
    primary, other = (case2, case3) if selection == "case2" else (case3, case2)
    return StackelbergSolution(
        primary.policy, primary.follower, primary.case_label, primary.mediator_utility, (other,)
    )


def _build(policy: SignalingPolicy, params: GameParams) -> StackelbergSolution:
    # The follower is recomputed rather than taken from the case analysis: just
    # below the threshold the "failing" signal can itself sit on the A/B tie, and
    # the mediator-preferred tie-break then lifts it to joint investment.
    follower = follower_response(policy, params)
    return StackelbergSolution(
        policy, follower, case_label(follower), mediator_utility(policy, follower, params.psi)
    )


def _enumerate_vertices(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Value of each vertex; pick the best, preferring A, then B, then C on ties.
    val_a = a + b
    val_b = 0.5 * a
    val_c = np.zeros_like(a)
    slack = TIE_TOL * np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    pick_a = (val_a >= val_b - slack) & (val_a >= val_c - slack)
    pick_b = ~pick_a & (val_b >= val_c - slack)
    alpha = np.where(pick_a, 1.0, np.where(pick_b, 0.5, 0.0))
    gamma = np.where(pick_a, 1.0, 0.0)
    return alpha, gamma


def enumerate_follower(policy: SignalingPolicy, params: GameParams) -> tuple[float, float, float, float]:
    """Follower profile by explicit vertex enumeration (independent of the closed form)."""
    coef = follower_coefficients(policy, params)
    ag, gg = _enumerate_vertices(np.array([coef.a_g]), np.array([coef.b_g]))
    ab, gb = _enumerate_vertices(np.array([coef.a_b]), np.array([coef.b_b]))
    return (float(ag[0]), float(gg[0]), float(ab[0]), float(gb[0]))


def grid_oracle(params: GameParams, resolution: int = 101) -> StackelbergSolution:
    """Brute-force the mediator problem over a ``resolution x resolution`` policy grid."""
    if resolution < 11:
        raise ValueError("resolution must be at least 11")
    psi, z = params.psi, params.z
    grid = np.linspace(0.0, 1.0, resolution)
    al, be = np.meshgrid(grid, grid, indexing="ij")
    a_g = psi * al * z + (1 - psi) * be * z
    b_g = psi * al * params.y_good + (1 - psi) * be * params.y_bad
    a_b = psi * (1 - al) * z + (1 - psi) * (1 - be) * z
    b_b = psi * (1 - al) * params.y_good + (1 - psi) * (1 - be) * params.y_bad
    ag, gg = _enumerate_vertices(a_g, b_g)
    ab, gb = _enumerate_vertices(a_b, b_b)
    util = ag * (psi * al + (1 - psi) * be) + ab * (psi * (1 - al) + (1 - psi) * (1 - be))
    i, j = np.unravel_index(int(np.argmax(util)), util.shape)
    policy = SignalingPolicy(float(grid[i]), float(grid[j]))
    follower = (float(ag[i, j]), float(gg[i, j]), float(ab[i, j]), float(gb[i, j]))
    return StackelbergSolution(policy, follower, case_label(follower), float(util[i, j]))
