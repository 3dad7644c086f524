"""Metrics computed from traces and theory checks on game parameters."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .game import (
    ACTIONS,
    SIGNALS,
    STATES,
    ActionProfile,
    GameParams,
    IncentiveScheme,
    check_feasible,
)
from .stackelberg import SignalingPolicy, follower_coefficients

STRICTLY_DOMINANT = "StrictlyDominant"
NEEDS_DESIGN = "NeedsDesign"

INFO_ONLY = "InfoOnly"
INFO_PLUS_SUBLINEAR = "InfoPlusSublinear"
LINEAR_PAYMENTS = "LinearPayments"
MECHANISMS = (INFO_ONLY, INFO_PLUS_SUBLINEAR, LINEAR_PAYMENTS)


def _target_codes(target: ActionProfile) -> tuple[int, int]:
    return ACTIONS.index(target.a1), ACTIONS.index(target.a2)


def directness_gap(trace, target: ActionProfile | None = None) -> np.ndarray:
    """Running fraction of rounds whose joint action differs from ``target``."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    d1, d2 = _target_codes(target or trace.scheme.target)
    miss = (trace.a1 != d1) | (trace.a2 != d2)
    return np.cumsum(miss) / np.arange(1, len(trace) + 1)


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Joint frequencies indexed ``[state, signal, a1, a2]`` with integer codes."""

    table: np.ndarray
    rounds: int

    def __getitem__(self, key: tuple[str, str, str, str]) -> float:
        th, s, a1, a2 = key
        return float(
            self.table[STATES.index(th), SIGNALS.index(s), ACTIONS.index(a1), ACTIONS.index(a2)]
        )

    @property
    def mass(self) -> dict[tuple[str, str, str, str], float]:
        return {
            (th, s, a1, a2): float(self.table[i, j, k, l])
            for i, th in enumerate(STATES)
            for j, s in enumerate(SIGNALS)
            for k, a1 in enumerate(ACTIONS)
            for l, a2 in enumerate(ACTIONS)
        }

    def state_signal_marginal(self) -> np.ndarray:
        return self.table.sum(axis=(2, 3))


def empirical_distribution(trace, rounds: int | None = None) -> EmpiricalDistribution:
    """Frequencies of (state, signal, a1, a2) over the first ``rounds`` rounds."""
    n = len(trace) if rounds is None else rounds
    if not 1 <= n <= len(trace):
        raise ValueError(f"rounds must lie in [1, {len(trace)}]")
    flat = (
        trace.states[:n].astype(np.int64) * 8
        + trace.signals[:n].astype(np.int64) * 4
        + trace.a1[:n].astype(np.int64) * 2
        + trace.a2[:n].astype(np.int64)
    )
    counts = np.bincount(flat, minlength=16).reshape(2, 2, 2, 2)
    return EmpiricalDistribution(counts / n, n)


def _utility_table(params: GameParams, scheme: IncentiveScheme | None, player: int) -> np.ndarray:
    """``U[state, own, other]`` for ``player``, payments included when a scheme is given."""
    u = np.zeros((2, 2, 2))
    for th, state in enumerate(STATES):
        u[th, 0, 0] = params.z + params.y(state)
        u[th, 0, 1] = params.z
    if scheme is not None:
        own_target = ACTIONS.index(scheme.target[player])
        u[:, own_target, :] += scheme.payment_m
    return u


@dataclass
class EquilibriumReport:
    passed: bool
    worst_margin: float
    epsilon: float
    margins: dict = field(default_factory=dict)
    kind: str = "coarse"


def bcce_check(
    dist: EmpiricalDistribution,
    params: GameParams,
    epsilon: float = 0.0,
    scheme: IncentiveScheme | None = None,
    per_signal: bool = False,
) -> EquilibriumReport:
    """No-deviation margins of an empirical distribution.

    For each player and each swap ``a -> a'`` the margin is the expected gain of
    keeping ``a`` over switching to ``a'`` in every tuple where ``a`` is played,
    with state, signal and the opponent's action held fixed. The default pools
    all signals (coarse, "bcce"); ``per_signal=True`` computes one margin per
    signal (signal-conditional, "bce").
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    margins = {}
    for player in (0, 1):
        u = _utility_table(params, scheme, player)
        # Reorient the table as [state, signal, own, other].
        tab = dist.table if player == 0 else dist.table.transpose(0, 1, 3, 2)
        for a in (0, 1):
            dev = 1 - a
            gain = u[:, a, :] - u[:, dev, :]  # [state, other]
            per = np.einsum("tso,to->s", tab[:, :, a, :], gain)
            if per_signal:
                for s in (0, 1):
                    margins[(player + 1, ACTIONS[a], ACTIONS[dev], SIGNALS[s])] = float(per[s])
            else:
                margins[(player + 1, ACTIONS[a], ACTIONS[dev])] = float(per.sum())
    worst = min(margins.values())
    return EquilibriumReport(
        worst >= -epsilon, worst, epsilon, margins, "signal-conditional" if per_signal else "coarse"
    )


def bce_check(
    strategy: Sequence[float],
    policy: SignalingPolicy,
    params: GameParams,
    epsilon: float = 0.0,
) -> EquilibriumReport:
    """Per-signal compliance ``A_j * alpha_j + B_j * gamma_j >= -epsilon``."""
    check_feasible(strategy)
    coef = follower_coefficients(policy, params)
    margins = {}
    for j, s in enumerate(SIGNALS):
        a_j, b_j = coef.for_signal(s)
        margins[s] = a_j * strategy[2 * j] + b_j * strategy[2 * j + 1]
    worst = min(margins.values())
    return EquilibriumReport(worst >= -epsilon, worst, epsilon, margins, "compliance")


def dominance_classify(params: GameParams) -> str:
    return STRICTLY_DOMINANT if params.z + params.y_bad > 0 else NEEDS_DESIGN


def info_only_condition(params: GameParams) -> float:
    """Expected gain from investing when both players always invest."""
    z, psi = params.z, params.psi
    return psi * (z + params.y_good) + (1 - psi) * (z + params.y_bad)


@dataclass(frozen=True)
class SteerabilityVerdict:
    mechanism: str
    regime: str
    steerable: bool
    condition_value: float
    note: str = ""


def steerability_classify(
    params: GameParams,
    mechanism: str,
    scheme: IncentiveScheme | None = None,
) -> SteerabilityVerdict:
    if mechanism not in MECHANISMS:
        raise ValueError(f"mechanism must be one of {MECHANISMS}, got {mechanism!r}")
    regime = dominance_classify(params)
    cond = info_only_condition(params)
    if regime == STRICTLY_DOMINANT:
        return SteerabilityVerdict(mechanism, regime, True, cond, "investing is strictly dominant")
    if mechanism == INFO_ONLY:
        return SteerabilityVerdict(
            mechanism, regime, cond >= 0, cond, "no-deviation condition for always investing"
        )
    if mechanism == INFO_PLUS_SUBLINEAR:
        return SteerabilityVerdict(
            mechanism, regime, False, cond, "vanishing payments cannot pin a unique equilibrium"
        )
    min_m = -(params.z + params.y_bad)
    if scheme is None:
        return SteerabilityVerdict(mechanism, regime, True, cond, f"any constant M > {min_m:.6g}")
    k = kappa(params, scheme, warn=False)
    return SteerabilityVerdict(
        mechanism, regime, k > 0, cond, f"kappa={k:.6g} with M={scheme.payment_m:.6g}, need M > {min_m:.6g}"
    )


def steerability_table(params: GameParams, scheme: IncentiveScheme | None = None) -> list[SteerabilityVerdict]:
    return [steerability_classify(params, m, scheme) for m in MECHANISMS]


def _counterfactual(trace, player: int, action: int, raw: bool) -> np.ndarray:
    """Utility ``player`` would have received per round by playing ``action``."""
    params, scheme = trace.params, trace.scheme
    other = trace.a2 if player == 0 else trace.a1
    y = np.where(trace.states == 0, params.y_good, params.y_bad)
    if action == 1:
        v = np.zeros(len(trace))
    else:
        v = np.where(other == 0, params.z + y, params.z)
    if not raw and ACTIONS.index(scheme.target[player]) == action:
        v = v + scheme.payment_m
    return v


def _realized(trace, player: int, raw: bool) -> np.ndarray:
    r = trace.r1 if player == 0 else trace.r2
    if raw:
        r = r - (trace.pay1 if player == 0 else trace.pay2)
    return r


def regret_series(trace, player: int, raw: bool = False) -> np.ndarray:
    """Running external regret per signal, shape ``(2, T)`` (rows: g, b)."""
    realized = _realized(trace, player, raw)
    diffs = [_counterfactual(trace, player, a, raw) - realized for a in (0, 1)]
    out = np.empty((2, len(trace)))
    for s in (0, 1):
        mask = trace.signals == s
        best = None
        for d in diffs:
            c = np.cumsum(np.where(mask, d, 0.0))
            best = c if best is None else np.maximum(best, c)
        out[s] = best
    return out


def external_regret(trace, player: int, signal: str, raw: bool = False) -> float:
    """Best fixed action in hindsight minus realized utility, over rounds with ``signal``."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    s = SIGNALS.index(signal)
    mask = trace.signals == s
    realized = _realized(trace, player, raw)[mask]
    return max(
        float(np.sum(_counterfactual(trace, player, a, raw)[mask] - realized)) for a in (0, 1)
    )


def overall_regret(trace, player: int, raw: bool = False) -> float:
    return sum(external_regret(trace, player, s, raw) for s in SIGNALS)


def kappa(params: GameParams, scheme: IncentiveScheme, warn: bool = True) -> float:
    """Smallest per-round loss from not investing when the target is joint investment."""
    m, z = scheme.payment_m, params.z
    k = min(m + z + params.y_good, m + z + params.y_bad)
    if warn and k <= 0:
        warnings.warn(f"kappa={k:.6g} <= 0: payments too small to steer", stacklevel=2)
    return k


def default_gamma_frac(nontarget_fraction: float, pi_star: float) -> float:
    return nontarget_fraction * math.log(1.0 / pi_star)


def gap_bound_curve(
    horizon: int,
    num_arms: int,
    delta: float,
    params: GameParams,
    scheme: IncentiveScheme,
    mode: str = "regular",
    gamma_frac: float = 0.0,
) -> np.ndarray:
    """High-probability directness-gap bound at ``t = 1..horizon``."""
    k = kappa(params, scheme, warn=False)
    if k <= 0:
        raise ValueError(f"kappa={k:.6g} <= 0; the gap bound is undefined")
    t = np.arange(1, horizon + 1, dtype=np.float64)
    head = 2.0 * math.sqrt(2 * num_arms * math.log(2 * num_arms / delta))
    if mode == "regular":
        tail = 4.0 * math.sqrt(2 * num_arms * math.log(num_arms))
    elif mode == "se":
        if gamma_frac < 0:
            raise ValueError("gamma_frac must be non-negative")
        tail = 4.0 * math.sqrt(gamma_frac * num_arms)
    else:
        raise ValueError(f"mode must be 'regular' or 'se', got {mode!r}")
    return (head + tail) / (k * np.sqrt(t))


@dataclass(frozen=True)
class PaymentSummary:
    total: tuple[float, float]
    average_joint: np.ndarray


def payment_accounting(trace) -> PaymentSummary:
    total = (float(np.sum(trace.pay1)), float(np.sum(trace.pay2)))
    joint = np.cumsum(trace.pay1 + trace.pay2) / np.arange(1, len(trace) + 1)
    return PaymentSummary(total, joint)


@dataclass
class MetricSeries:
    directness_gap: np.ndarray
    per_signal_regret: np.ndarray
    overall_regret: np.ndarray
    avg_payment: np.ndarray
    bound_curve: np.ndarray | None = None


def metric_series(trace, player: int = 0, bound: np.ndarray | None = None, raw: bool = False) -> MetricSeries:
    per = regret_series(trace, player, raw)
    return MetricSeries(
        directness_gap(trace),
        per,
        per[0] + per[1],
        payment_accounting(trace).average_joint,
        bound,
    )
