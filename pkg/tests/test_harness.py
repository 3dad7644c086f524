import csv
import dataclasses
import json

import numpy as np
import pytest

from steersim import analysis, harness
from steersim.cli import main
from steersim.engine import run_batch
from steersim.harness import ConfigError, emit_plot_data, parse_config, run_experiment

MINIMAL = {"psi": 0.7, "z": 0.2, "y_G": 1.0, "y_B": -0.05, "M": 0.24}


def small(**kw):
    doc = dict(MINIMAL, horizon=300, runs=4, seed=9, name="small")
    doc.update(kw)
    return parse_config(json.dumps(doc))


def test_minimal_defaults():
    cfg = parse_config(json.dumps(MINIMAL))
    assert cfg.horizon == 100_000 and cfg.runs == 50
    assert cfg.learner_eta == 0.05 and cfg.floor == 0.01
    assert cfg.learner_gamma == 0.0 and cfg.arms == ("regular", "se")
    assert cfg.policy is None
    assert cfg.checkpoints == (1000, 10_000, 100_000)


def test_fig2_config_echo():
    cfg = harness.builtin_config("fig2")
    p = cfg.params
    assert (p.psi, p.z, p.y_good, p.y_bad) == (0.7, 0.2, 1.0, -0.05)
    assert (cfg.policy.alpha, cfg.policy.beta) == (0.7, 0.7)
    assert cfg.scheme.payment_m == 0.24 and cfg.learner_eta == 0.05


def test_fig3_config_is_pinned():
    cfg = harness.builtin_config("fig3")
    se = harness.resolve_se(cfg)
    assert se.follower == (0.5, 0.0, 1.0, 1.0) and se.case_label == "Case2"
    assert (se.policy.alpha, se.policy.beta) == (0.0, 0.0)


@pytest.mark.parametrize(
    "doc,field",
    [
        (dict(MINIMAL, psi=1.2), "psi"),
        (dict(MINIMAL, y_B=0.3), "y_B"),
        (dict(MINIMAL, M=-1), "M"),
        (dict(MINIMAL, bogus=1), "bogus"),
        (dict(MINIMAL, learner={"eta": 0.1, "rate": 2}), "rate"),
        (dict(MINIMAL, learner={"mode": "adaptive"}), "learner.mode"),
        (dict(MINIMAL, arms=[]), "arms"),
        (dict(MINIMAL, arms=["regular", "fancy"]), "arms"),
        (dict(MINIMAL, runs=0), "runs"),
        (dict(MINIMAL, horizon=2.5), "horizon"),
        (dict(MINIMAL, policy="random"), "policy"),
        (dict(MINIMAL, se={"pin": {"alpha": 0, "beta": 0, "follower": [1, 1]}}), "se.pin.follower"),
        ({k: v for k, v in MINIMAL.items() if k != "M"}, "M"),
        (dict(MINIMAL, features={"f1": [1], "f2": [1]}), "z"),
        (dict(MINIMAL, psi="0.7"), "psi"),
    ],
)
def test_schema_violations_name_field(doc, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        parse_config(json.dumps(doc))


def test_malformed_json():
    with pytest.raises(ConfigError):
        parse_config("{psi: 0.7")
    with pytest.raises(ConfigError):
        parse_config("[1, 2]")


def test_features_document():
    doc = {k: v for k, v in MINIMAL.items() if k != "z"}
    doc["features"] = {"f1": [0.5, 0.5], "f2": [0.2, 0.2], "phi": "identity"}
    assert parse_config(json.dumps(doc)).params.z == pytest.approx(0.2)


def test_config_hash_tracks_semantics():
    base = small()
    assert base.config_hash() == small(name="other", stride=3, workers=2).config_hash()
    for change in ({"seed": 10}, {"M": 0.25}, {"horizon": 301}, {"learner": {"eta": 0.06}},
                   {"arms": ["se"]}, {"floor": 0.02}, {"policy": {"alpha": 0.7, "beta": 0.7}}):
        assert small(**change).config_hash() != base.config_hash()


def _two_pass(values):
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    return mean, var**0.5


def test_tables_match_two_pass_oracle():
    cfg = small(horizon=200, runs=5)
    result = run_experiment(cfg)
    se = harness.resolve_se(cfg)
    for arm, table in result.tables.items():
        traces = run_batch(harness.run_config_for(cfg, arm, se), cfg.runs)
        gaps = [analysis.directness_gap(tr) for tr in traces]
        regs = [0.5 * (analysis.regret_series(tr, 0).sum(0) + analysis.regret_series(tr, 1).sum(0)) for tr in traces]
        pays = [analysis.payment_accounting(tr).average_joint for tr in traces]
        assert len(table.t) == cfg.horizon
        for k in (0, 57, 199):
            m, s = _two_pass([g[k] for g in gaps])
            assert abs(table.delta_mean[k] - m) <= 1e-10 and abs(table.delta_std[k] - s) <= 1e-10
            m, s = _two_pass([r[k] for r in regs])
            assert abs(table.regret_mean[k] - m) <= 1e-10 and abs(table.regret_std[k] - s) <= 1e-10
            assert abs(table.payment_avg[k] - _two_pass([p[k] for p in pays])[0]) <= 1e-10
        for tr, r in zip(traces, table.final_regret):
            assert r == pytest.approx(0.5 * (analysis.overall_regret(tr, 0) + analysis.overall_regret(tr, 1)))


def test_single_run_has_zero_std():
    result = run_experiment(small(runs=1, arms=["regular"]))
    (table,) = result.tables.values()
    assert np.all(table.delta_std == 0) and np.all(table.regret_std == 0)


def test_stride_thins_after_aggregation():
    full = run_experiment(small(horizon=300))
    thin = run_experiment(small(horizon=300, stride=7))
    for arm in full.tables:
        a, b = full.tables[arm], thin.tables[arm]
        assert len(b.t) == 300 // 7
        assert np.array_equal(b.t, np.arange(7, 301, 7))
        assert np.array_equal(b.delta_mean, a.delta_mean[6::7])


def test_kappa_nonpositive_refused():
    doc = dict(MINIMAL, y_G=0.1, y_B=-0.56, M=0.3, horizon=50, runs=1)
    with pytest.raises(ValueError, match="kappa"):
        run_experiment(parse_config(json.dumps(doc)))


def test_emit_files_and_no_clobber(tmp_path):
    result = run_experiment(small())
    paths = emit_plot_data(result, tmp_path)
    names = sorted(p.name for p in paths)
    assert names == ["small.csv", "small_meta.json", "small_regular.csv", "small_se.csv"]
    with open(tmp_path / "small.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "arm", "delta_mean", "delta_std", "regret_mean", "regret_std", "payment_avg", "bound"]
    assert len(rows) == 1 + 2 * 300
    meta = json.loads((tmp_path / "small_meta.json").read_text())
    assert meta["config_hash"] == result.config.config_hash() and meta["seed"] == 9
    assert meta["parameters"]["psi"] == 0.7
    with pytest.raises(FileExistsError):
        emit_plot_data(result, tmp_path)
    emit_plot_data(result, tmp_path, force=True)


def test_emit_rejects_empty_tables(tmp_path):
    result = run_experiment(small(arms=["regular"]))
    result.tables.clear()
    with pytest.raises(ValueError):
        emit_plot_data(result, tmp_path)


def test_identical_bytes_across_runs_and_workers(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    emit_plot_data(run_experiment(small()), a)
    emit_plot_data(run_experiment(dataclasses.replace(small(), workers=4)), b)
    for name in ("small.csv", "small_regular.csv", "small_se.csv", "small_meta.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_theory_mode_runs():
    cfg = small(horizon=5000, runs=2, learner={"mode": "theory"})
    result = run_experiment(cfg)
    assert set(result.tables) == {"regular", "se"}


def _write(tmp_path, doc):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_cli_run_and_exit_codes(tmp_path, capsys):
    cfg = _write(tmp_path, dict(MINIMAL, name="cli", horizon=100, runs=2))
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out), "--arms", "regular", "--traces"]) == 0
    assert (out / "cli_regular.csv").exists() and (out / "cli_regular_traces.csv").exists()
    assert not (out / "cli_se.csv").exists()
    assert main(["run", "--config", cfg, "--out", str(out), "--arms", "regular"]) == 3
    assert main(["run", "--config", cfg, "--out", str(out), "--arms", "regular", "--force", "--horizon", "50"]) == 0
    with open(out / "cli_regular.csv") as fh:
        assert sum(1 for _ in fh) == 51
    bad = _write(tmp_path, dict(MINIMAL, psi=1.2))
    assert main(["run", "--config", bad]) == 2
    assert "psi" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 3
    with pytest.raises(SystemExit) as exc:
        main(["run", "--config", cfg, "--arms", "nope"])
    assert exc.value.code == 2


def test_cli_solve_and_classify(tmp_path, capsys):
    cfg = _write(tmp_path, dict(MINIMAL, y_B=-2.0, psi=0.5, z=0.2, M=2.0))
    assert main(["solve", "--config", cfg]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["case"] == "Case2" and doc["pinned"] is False
    assert doc["threshold_y_B"] == pytest.approx(-1.2)
    assert main(["classify", "--config", cfg]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r["mechanism"] for r in rows] == ["InfoOnly", "InfoPlusSublinear", "LinearPayments"]
    assert [r["steerable"] for r in rows] == [False, False, True]
