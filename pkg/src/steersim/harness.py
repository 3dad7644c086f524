"""Experiment orchestration: JSON configs, batched runs and CSV/JSON outputs."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import analysis
from .bandit import Exp3pConfig, theory_params
from .engine import RunConfig, build_initial_distributions, map_batch
from .game import ActionProfile, Features, GameParams, IncentiveScheme, check_payment_level
from .stackelberg import (
    SignalingPolicy,
    StackelbergSolution,
    case_label,
    follower_response,
    mediator_utility,
    solve_stackelberg,
    stackelberg_threshold,
)

ARMS = ("regular", "se")
TABLE_COLUMNS = ("t", "delta_mean", "delta_std", "regret_mean", "regret_std", "payment_avg", "bound")

_TOP_KEYS = {
    "name", "psi", "z", "features", "y_G", "y_B", "M", "target", "policy", "se",
    "learner", "delta", "gamma_frac", "horizon", "runs", "floor", "seed", "arms",
    "stride", "workers", "checkpoints",
}
_REQUIRED = ("psi", "y_G", "y_B", "M")
_LEARNER_KEYS = {"eta", "gamma", "bias", "mode"}
_SE_KEYS = {"eta", "selection", "pin"}
_PIN_KEYS = {"alpha", "beta", "follower"}
_FEATURE_KEYS = {"f1", "f2", "phi", "phi_params"}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


@dataclass(frozen=True)
class ExperimentConfig:
    params: GameParams
    scheme: IncentiveScheme
    policy: SignalingPolicy | None = None  # None: derive from the Stackelberg solution
    name: str = "experiment"
    se_eta: float = 0.5
    se_selection: str = "case2"
    se_pin: StackelbergSolution | None = None
    learner_eta: float = 0.05
    learner_gamma: float = 0.0
    learner_bias: float = 0.0
    learner_mode: str = "fixed"
    delta: float = 0.05
    gamma_frac: float | None = None
    horizon: int = 100_000
    runs: int = 50
    floor: float = 0.01
    seed: int = 0
    arms: tuple[str, ...] = ARMS
    stride: int = 1
    workers: int = 1
    checkpoints: tuple[int, ...] = field(default=())

    def semantic_dict(self) -> dict:
        """Everything that can change the numbers; excludes naming and execution knobs."""
        p = self.params
        return {
            "psi": p.psi,
            "z": p.z,
            "y_G": p.y_good,
            "y_B": p.y_bad,
            "M": self.scheme.payment_m,
            "target": str(self.scheme.target),
            "policy": None if self.policy is None else [self.policy.alpha, self.policy.beta],
            "se": {
                "eta": self.se_eta,
                "selection": self.se_selection,
                "pin": None if self.se_pin is None else {
                    "alpha": self.se_pin.policy.alpha,
                    "beta": self.se_pin.policy.beta,
                    "follower": list(self.se_pin.follower),
                },
            },
            "learner": {
                "eta": self.learner_eta,
                "gamma": self.learner_gamma,
                "bias": self.learner_bias,
                "mode": self.learner_mode,
            },
            "delta": self.delta,
            "gamma_frac": self.gamma_frac,
            "horizon": self.horizon,
            "runs": self.runs,
            "floor": self.floor,
            "seed": self.seed,
            "arms": list(self.arms),
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _reject_unknown(doc: dict, allowed: set, where: str) -> None:
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown key {where}{key!r}")


def _num(doc: dict, key: str, where: str = "", default=None, lo=None, hi=None, lo_open=False, integer=False):
    if key not in doc:
        if default is None:
            raise ConfigError(f"missing required field {where}{key!r}")
        return default
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"field {where}{key!r} must be a number, got {v!r}")
    if integer and (not float(v).is_integer()):
        raise ConfigError(f"field {where}{key!r} must be an integer, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(f"field {where}{key!r} must be finite")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(f"field {where}{key!r}={v} below allowed range")
    if hi is not None and v > hi:
        raise ConfigError(f"field {where}{key!r}={v} above allowed range")
    return int(v) if integer else float(v)


def parse_config(text: str | dict) -> ExperimentConfig:
    """Validate a JSON document and apply defaults."""
    if isinstance(text, dict):
        doc = text
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown(doc, _TOP_KEYS, "")
    for key in _REQUIRED:
        if key not in doc:
            raise ConfigError(f"missing required field {key!r}")

    psi = _num(doc, "psi")
    if not 0 < psi < 1:
        raise ConfigError(f"field 'psi'={psi} must lie in (0, 1)")
    y_g = _num(doc, "y_G")
    if not y_g > 0:
        raise ConfigError(f"field 'y_G'={y_g} must be positive")
    y_b = _num(doc, "y_B")
    if not y_b < 0:
        raise ConfigError(f"field 'y_B'={y_b} must be negative")
    m = _num(doc, "M", lo=0.0)

    if ("z" in doc) == ("features" in doc):
        raise ConfigError("exactly one of 'z' or 'features' is required")
    if "z" in doc:
        externality = _num(doc, "z", lo=0.0)
    else:
        feats = doc["features"]
        if not isinstance(feats, dict):
            raise ConfigError("field 'features' must be an object")
        _reject_unknown(feats, _FEATURE_KEYS, "features.")
        try:
            externality = Features(
                tuple(feats["f1"]), tuple(feats["f2"]), feats.get("phi", "identity"), feats.get("phi_params", {})
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"field 'features' is invalid: {exc}") from None

    try:
        params = GameParams(psi, y_g, y_b, externality)
        target = ActionProfile.parse(doc.get("target", "II"))
    except ValueError as exc:
        raise ConfigError(f"field {'features' if 'features' in doc else 'target'!r}: {exc}") from None
    scheme = IncentiveScheme(m, target)

    policy = None
    raw_policy = doc.get("policy", "derive_from_se")
    if raw_policy != "derive_from_se":
        if not isinstance(raw_policy, dict):
            raise ConfigError("field 'policy' must be 'derive_from_se' or {alpha, beta}")
        _reject_unknown(raw_policy, {"alpha", "beta"}, "policy.")
        policy = SignalingPolicy(
            _num(raw_policy, "alpha", "policy.", lo=0.0, hi=1.0),
            _num(raw_policy, "beta", "policy.", lo=0.0, hi=1.0),
        )

    se = doc.get("se", {})
    if not isinstance(se, dict):
        raise ConfigError("field 'se' must be an object")
    _reject_unknown(se, _SE_KEYS, "se.")
    se_eta = _num(se, "eta", "se.", default=0.5, lo=0.0, hi=1.0)
    selection = se.get("selection", "case2")
    if selection not in ("case2", "case3"):
        raise ConfigError(f"field 'se.selection' must be 'case2' or 'case3', got {selection!r}")
    pin = None
    if "pin" in se:
        raw_pin = se["pin"]
        if not isinstance(raw_pin, dict):
            raise ConfigError("field 'se.pin' must be an object")
        _reject_unknown(raw_pin, _PIN_KEYS, "se.pin.")
        pin_policy = SignalingPolicy(
            _num(raw_pin, "alpha", "se.pin.", lo=0.0, hi=1.0),
            _num(raw_pin, "beta", "se.pin.", lo=0.0, hi=1.0),
        )
        follower = raw_pin.get("follower")
        if not (isinstance(follower, list) and len(follower) == 4):
            raise ConfigError("field 'se.pin.follower' must list (alpha_g, gamma_g, alpha_b, gamma_b)")
        try:
            follower = tuple(float(v) for v in follower)
            util = mediator_utility(pin_policy, follower, psi)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"field 'se.pin.follower': {exc}") from None
        pin = StackelbergSolution(pin_policy, follower, case_label(follower), util)

    learner = doc.get("learner", {})
    if not isinstance(learner, dict):
        raise ConfigError("field 'learner' must be an object")
    _reject_unknown(learner, _LEARNER_KEYS, "learner.")
    mode = learner.get("mode", "fixed")
    if mode not in ("fixed", "theory"):
        raise ConfigError(f"field 'learner.mode' must be 'fixed' or 'theory', got {mode!r}")

    arms = doc.get("arms", list(ARMS))
    if isinstance(arms, str):
        arms = [a.strip() for a in arms.split(",") if a.strip()]
    if not arms or any(a not in ARMS for a in arms):
        raise ConfigError(f"field 'arms' must be a non-empty subset of {ARMS}, got {arms!r}")

    horizon = _num(doc, "horizon", default=100_000, lo=1, integer=True)
    checkpoints = doc.get("checkpoints")
    if checkpoints is None:
        checkpoints = sorted({10**k for k in range(3, 12) if 10**k < horizon} | {horizon})
    elif not (isinstance(checkpoints, list) and all(isinstance(c, int) and 1 <= c <= horizon for c in checkpoints)):
        raise ConfigError("field 'checkpoints' must list rounds within [1, horizon]")

    gamma_frac = doc.get("gamma_frac")
    if gamma_frac is not None:
        gamma_frac = _num(doc, "gamma_frac", lo=0.0)

    name = doc.get("name", "experiment")
    if not isinstance(name, str) or not name or os.sep in name:
        raise ConfigError("field 'name' must be a plain file-name stem")

    return ExperimentConfig(
        params=params,
        scheme=scheme,
        policy=policy,
        name=name,
        se_eta=se_eta,
        se_selection=selection,
        se_pin=pin,
        learner_eta=_num(learner, "eta", "learner.", default=0.05, lo=0.0, lo_open=True),
        learner_gamma=_num(learner, "gamma", "learner.", default=0.0, lo=0.0, hi=1.0),
        learner_bias=_num(learner, "bias", "learner.", default=0.0, lo=0.0, hi=1.0),
        learner_mode=mode,
        delta=_num(doc, "delta", default=0.05, lo=0.0, hi=1.0, lo_open=True),
        gamma_frac=gamma_frac,
        horizon=horizon,
        runs=_num(doc, "runs", default=50, lo=1, integer=True),
        floor=_num(doc, "floor", default=0.01, lo=0.0, hi=0.5, lo_open=True),
        seed=_num(doc, "seed", default=0, lo=0, hi=2**64 - 1, integer=True),
        arms=tuple(arms),
        stride=_num(doc, "stride", default=1, lo=1, integer=True),
        workers=_num(doc, "workers", default=1, lo=1, integer=True),
        checkpoints=tuple(checkpoints),
    )


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def builtin_config(name: str) -> ExperimentConfig:
    """Shipped presets: ``fig2``, ``fig3``, ``dominance``."""
    text = resources.files("steersim").joinpath("configs", f"{name}.json").read_text(encoding="utf-8")
    return parse_config(text)


def resolve_se(config: ExperimentConfig) -> StackelbergSolution:
    """Stackelberg profile used to seed the SE arm.

    A pinned solution wins. With an explicit policy the followers best-respond to
    that policy; otherwise the mediator-optimal solution is used.
    """
    if config.se_pin is not None:
        return config.se_pin
    if config.policy is None:
        return solve_stackelberg(config.params, config.se_eta, config.se_selection)
    follower = follower_response(config.policy, config.params)
    return StackelbergSolution(
        config.policy, follower, case_label(follower),
        mediator_utility(config.policy, follower, config.params.psi),
    )


def committed_policy(config: ExperimentConfig, se: StackelbergSolution) -> SignalingPolicy:
    return config.policy if config.policy is not None else se.policy


def _learner_for(config: ExperimentConfig, initial: np.ndarray) -> Exp3pConfig:
    if config.learner_mode == "fixed":
        return Exp3pConfig(2, config.learner_eta, config.learner_gamma, config.learner_bias)
    pi_star = float(initial[0, :, 0].min())
    bias, eta, gamma = theory_params(config.horizon, 2, config.delta, pi_star)
    if eta == 0.0:
        raise ValueError("theory mode with pi_star = 1 leaves the learner frozen")
    return Exp3pConfig(2, eta, gamma, bias, theory_mode=True)


def _se_gamma_frac(config: ExperimentConfig, se: StackelbergSolution, policy: SignalingPolicy) -> float:
    if config.gamma_frac is not None:
        return config.gamma_frac
    init = build_initial_distributions("stackelberg", se, config.floor)
    psi = config.params.psi
    p_signal = (psi * policy.alpha + (1 - psi) * policy.beta, psi * (1 - policy.alpha) + (1 - psi) * (1 - policy.beta))
    invest = (se.follower[0], se.follower[2])
    return sum(
        analysis.default_gamma_frac(p_signal[j], float(init[0, j, 0]))
        for j in range(2)
        if invest[j] < 1.0
    )


@dataclass
class ArmTable:
    arm: str
    t: np.ndarray
    delta_mean: np.ndarray
    delta_std: np.ndarray
    regret_mean: np.ndarray
    regret_std: np.ndarray
    payment_avg: np.ndarray
    bound: np.ndarray
    checkpoint_delta: dict[int, np.ndarray]  # round -> per-run directness gap
    final_regret: np.ndarray  # per-run overall regret at T, averaged over players

    def rows(self):
        for k in range(self.t.shape[0]):
            yield (
                int(self.t[k]),
                float(self.delta_mean[k]),
                float(self.delta_std[k]),
                float(self.regret_mean[k]),
                float(self.regret_std[k]),
                float(self.payment_avg[k]),
                float(self.bound[k]),
            )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    tables: dict[str, ArmTable]
    meta: dict


def _per_run_series(trace):
    gap = analysis.directness_gap(trace)
    regret = 0.5 * (
        analysis.regret_series(trace, 0).sum(axis=0) + analysis.regret_series(trace, 1).sum(axis=0)
    )
    pay = analysis.payment_accounting(trace).average_joint
    return gap, regret, pay


def run_config_for(config: ExperimentConfig, arm: str, se: StackelbergSolution) -> RunConfig:
    mode = "uniform" if arm == "regular" else "stackelberg"
    initial = build_initial_distributions(mode, se, config.floor)
    return RunConfig(
        params=config.params,
        scheme=config.scheme,
        policy=committed_policy(config, se),
        horizon=config.horizon,
        init_mode=mode,
        floor=config.floor,
        learner=_learner_for(config, initial),
        seed=config.seed,
        se=se,
    )


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run every arm over the same seeds and aggregate per-round statistics.

    Both arms use the same per-run seeds, so run ``r`` of each arm sees the same
    states and signals and the two arms can be compared pairwise.
    """
    params, scheme = config.params, config.scheme
    k = analysis.kappa(params, scheme, warn=False)
    if k <= 0:
        raise ValueError(
            f"kappa = min(M+z+y_G, M+z+y_B) = {k:.6g} <= 0: "
            f"M must exceed {-(params.z + params.y_bad):.6g} to steer"
        )
    check_payment_level(params, scheme)
    se = resolve_se(config)
    policy = committed_policy(config, se)

    tables = {}
    idx = np.arange(config.stride - 1, config.horizon, config.stride)
    for arm in config.arms:
        rc = run_config_for(config, arm, se)
        per_run = map_batch(rc, config.runs, _per_run_series, config.workers)
        gaps = np.stack([p[0] for p in per_run])
        regrets = np.stack([p[1] for p in per_run])
        pays = np.stack([p[2] for p in per_run])
        del per_run
        if arm == "regular":
            bound = analysis.gap_bound_curve(config.horizon, 2, config.delta, params, scheme, "regular")
        else:
            frac = _se_gamma_frac(config, se, policy)
            bound = analysis.gap_bound_curve(config.horizon, 2, config.delta, params, scheme, "se", frac)
        tables[arm] = ArmTable(
            arm=arm,
            t=idx + 1,
            delta_mean=gaps.mean(axis=0)[idx],
            delta_std=gaps.std(axis=0)[idx],
            regret_mean=regrets.mean(axis=0)[idx],
            regret_std=regrets.std(axis=0)[idx],
            payment_avg=pays.mean(axis=0)[idx],
            bound=bound[idx],
            checkpoint_delta={c: gaps[:, c - 1].copy() for c in config.checkpoints},
            final_regret=regrets[:, -1].copy(),
        )

    meta = {
        "name": config.name,
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "parameters": config.semantic_dict(),
        "kappa": k,
        "threshold_y_B": stackelberg_threshold(params),
        "regime": analysis.dominance_classify(params),
        "committed_policy": {"alpha": policy.alpha, "beta": policy.beta},
        "stackelberg": se.to_dict(),
        "columns": list(TABLE_COLUMNS),
        "std_convention": "population",
    }
    return ExperimentResult(config, tables, meta)


def _write_table(path: Path, table: ArmTable, with_arm: bool = False, mode: str = "w", header: bool = True):
    with open(path, mode, encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow(("t", "arm", *TABLE_COLUMNS[1:]) if with_arm else TABLE_COLUMNS)
        for row in table.rows():
            vals = [repr(v) for v in row[1:]]
            writer.writerow((row[0], table.arm, *vals) if with_arm else (row[0], *vals))


def emit_plot_data(result: ExperimentResult, out_dir, force: bool = False) -> list[Path]:
    """Write ``<name>_<arm>.csv`` per arm, ``<name>.csv`` combined and ``<name>_meta.json``."""
    if not result.tables:
        raise ValueError("no arm tables to emit")
    out = Path(out_dir)
    name = result.config.name
    targets = [out / f"{name}_{arm}.csv" for arm in result.tables]
    combined = out / f"{name}.csv"
    meta_path = out / f"{name}_meta.json"
    paths = [*targets, combined, meta_path]
    if not force:
        existing = [str(p) for p in paths if p.exists()]
        if existing:
            raise FileExistsError(f"refusing to overwrite {', '.join(existing)} (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    for path, table in zip(targets, result.tables.values()):
        _write_table(path, table)
    for i, table in enumerate(result.tables.values()):
        _write_table(combined, table, with_arm=True, mode="w" if i == 0 else "a", header=(i == 0))
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(result.meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
