import dataclasses

import numpy as np
import pytest

from ranlb import cli
from ranlb import experiments as ex
from ranlb.config import KPI_NAMES, ConfigError, PPOHyperparams, desk_preset
from ranlb.telemetry import calibrate_percentiles


@pytest.fixture
def tiny_cfg():
    cfg = desk_preset()
    return dataclasses.replace(
        cfg,
        sim=dataclasses.replace(cfg.sim, n_ues=12, episode_length=5, warmup_ticks=2),
        ppo=PPOHyperparams(horizon=8, batch_size=4, minibatches=2, epochs=2, hidden=(8,)),
        seeds=(0,), episodes=2, eval_episodes=1, calibration_seeds=(1000,), calibration_episodes=20,
        sweeps={"ue_count": [6, 12]},
    )


TINY = ["--set", "sim.n_ues=12", "--set", "sim.episode_length=5", "--set", "sim.warmup_ticks=2",
        "--set", "episodes=1", "--set", "calibration_episodes=20", "--set", "calibration_seeds=[1000]"]


def test_csv_roundtrip_and_hash(tmp_path):
    rows = [{"a": 1, "b": np.float64(0.1), "c": "x"}, {"a": 2, "b": float("nan"), "c": "y"}]
    ex.write_csv(tmp_path / "r.csv", rows, ("a", "b", "c"), "abc")
    h, back = ex.read_csv(tmp_path / "r.csv")
    assert h == "abc" and back[0] == rows[0] and np.isnan(back[1]["b"])
    ex.write_csv(tmp_path / "s.csv", rows, ("a", "b", "c"), "def")
    with pytest.raises(ex.ResultsError):
        ex.merge_csvs([tmp_path / "r.csv", tmp_path / "s.csv"])
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ex.ResultsError):
        ex.read_csv(tmp_path / "bad.csv")


def test_mean_ci_and_aggregate():
    m, h = ex.mean_ci([1.0, 2.0, 3.0])
    assert m == 2.0 and h == pytest.approx(4.302652729911275 / np.sqrt(3))
    assert np.isnan(ex.mean_ci([1.0])[1])
    agg = ex.aggregate([{"g": "a", "x": 1.0}, {"g": "a", "x": 3.0}, {"g": "b", "x": 5.0}], ("g",), ("x",))
    assert [(r["g"], r["n"], r["x"]) for r in agg] == [("a", 2, 2.0), ("b", 1, 5.0)]


def test_calibration_anchors_reproducible_from_trace(tiny_cfg, tmp_path):
    refs = ex.calibrate(tiny_cfg, tmp_path)
    assert set(refs.anchors) == set(KPI_NAMES)
    _, rows = ex.read_csv(ex.Paths(tmp_path).calibration_trace)
    again = calibrate_percentiles({k: [r[k] for r in rows] for k in KPI_NAMES})
    for k in KPI_NAMES:
        assert again[k].low == pytest.approx(refs.anchors[k].low, rel=1e-12, abs=1e-15)
        assert again[k].high == pytest.approx(refs.anchors[k].high, rel=1e-12, abs=1e-15)


def test_train_a3_and_zero_budget(tiny_cfg, tmp_path):
    logs = ex.train_method(tiny_cfg, "a3", 0, tmp_path, episodes=1)
    assert len(logs) == 1
    h, rows = ex.read_csv(ex.Paths(tmp_path).train_log("a3", 0))
    assert h == tiny_cfg.config_hash() and len(rows) == 1
    ex.train_method(tiny_cfg, "rebuha", 0, tmp_path, episodes=0)
    text = ex.Paths(tmp_path).train_log("rebuha", 0).read_text().splitlines()
    assert len(text) == 2 and text[1].startswith("episode,")


def test_rerun_is_byte_identical(tiny_cfg, tmp_path):
    for d in ("a", "b"):
        ex.train_method(tiny_cfg, "ppo", 0, tmp_path / d)
    pa, pb = (ex.Paths(tmp_path / d).train_log("ppo", 0) for d in ("a", "b"))
    assert pa.read_bytes() == pb.read_bytes()


def test_eval_requires_checkpoint(tiny_cfg, tmp_path):
    with pytest.raises(ex.ResultsError):
        ex.evaluate(tiny_cfg, "ppo", 0, tmp_path)


def test_sweep_cardinality(tiny_cfg, tmp_path):
    rows = ex.sweep(tiny_cfg, "ue_count", ["a3", "rebuha"], tmp_path)
    assert len(rows) == 2 * 2 * len(tiny_cfg.seeds)
    _, agg = ex.read_csv(tmp_path / "sweeps" / "ue_count_agg.csv")
    assert {(r["method"], r["value"]) for r in agg} == {(m, v) for m in ("a3", "rebuha") for v in (6, 12)}
    with pytest.raises(ConfigError):
        ex.sweep(tiny_cfg, "nonexistent", ["a3"], tmp_path)


def test_ablation_variants(tiny_cfg):
    v = ex.ablation_variants(tiny_cfg)
    w = tiny_cfg.sim.reward
    assert all(getattr(v["uniform"], k) == pytest.approx(1 / 6) for k in KPI_NAMES)
    assert v["no_fairness"].fair == 0 and sum(getattr(v["no_fairness"], k) for k in KPI_NAMES) == pytest.approx(1)
    assert w.ho == pytest.approx(0.05)
    assert v["ho_2x"].ho == pytest.approx(0.10 / 1.05)
    assert v["no_smoothness"].lambda_s == 0 and v[ex.ABLATION_BASE].lambda_s == pytest.approx(0.10)
    assert len(v) == 5 + 12
    with pytest.raises(ConfigError):
        ex.ablate(tiny_cfg, "/nonexistent", ["bogus"])


def test_kpi_profile_direction():
    agg = [{"value": "a", "thr": 1.0, "fair": 0.5, "lat": 0.1, "jit": 1.0, "plr": 0.0, "ho": 3.0},
           {"value": "b", "thr": 2.0, "fair": 0.5, "lat": 0.2, "jit": 1.0, "plr": 0.1, "ho": 1.0}]
    p = ex.kpi_profile(agg)
    assert p[0]["thr"] == 0 and p[1]["thr"] == 1 and p[0]["lat"] == 1 and p[1]["ho"] == 1 and p[0]["fair"] == 0.5


def test_bucket_means():
    rows = [{"episode": e, "x": float(e + 1)} for e in range(30)]
    assert ex.bucket_means(rows, "x", (1, 20), 5) == [np.mean([1, 2, 3, 4, 5, 6]), 20.0]


def test_cli_parsing():
    assert cli.parse_seeds("0..2") == (0, 1, 2) and cli.parse_seeds("3") == (3,) and cli.parse_seeds("1,4") == (1, 4)
    assert cli.parse_set(["sim.n_ues=30", "seeds=[1, 2]"]) == {"sim": {"n_ues": 30}, "seeds": [1, 2]}


def test_cli_errors(tmp_path, capsys):
    assert cli.main(["train", "--out", str(tmp_path), "--set", "sim.bogus=1"]) != 0
    assert "error" in capsys.readouterr().err
    bad = tmp_path / "bad.yaml"
    bad.write_text("ppo: {lr: -1}\n")
    assert cli.main(["calibrate", "--config", str(bad), "--out", str(tmp_path)]) != 0
    assert cli.main(["eval", "--method", "ppo", "--out", str(tmp_path / "none"), "--seed", "0", *TINY]) != 0


def test_cli_end_to_end(tmp_path, capsys):
    out = str(tmp_path / "r")
    assert cli.main(["calibrate", "--out", out, *TINY]) == 0
    assert cli.main(["train", "--method", "a3", "--seeds", "0..1", "--out", out, *TINY]) == 0
    assert cli.main(["report", "--out", out, *TINY]) == 0
    assert (tmp_path / "r" / "report" / "table_training_thr.csv").exists()
    capsys.readouterr()
    assert cli.main(["report", "--out", str(tmp_path / "empty")]) == 0
    assert "warning" in capsys.readouterr().err


def test_pipeline_completes_and_refuses_foreign_config(tiny_cfg, tmp_path):
    files = ex.run_pipeline(tiny_cfg, tmp_path)
    assert files and (tmp_path / "ablation" / "ablation.csv").exists()
    _, rob = ex.read_csv(tmp_path / "sweeps" / "robustness.csv")
    assert sorted({r["value"] for r in rob}) == [0, 1, 2]
    with pytest.raises(ex.ResultsError):
        ex.run_pipeline(dataclasses.replace(tiny_cfg, episodes=3), tmp_path)
