# tests/test_cli.py
# -*- coding: utf-8 -*-
"""
命令行与实验文件：
- generate / run / compare / sweep 的产物与退出码
- 扁平配置文件解析（大小写、lambda、逗号列表、none、未知键）
- 策略名解析；metrics / ledger 的列检查
"""

from __future__ import annotations

import json

import pandas as pd
import pytest

from app import main
from config.run_config import build_configs, load_run_config, split_overrides
from core.errors import EXIT_IO, EXIT_OK, EXIT_USAGE, SchemaMismatchError, StorageError, UsageError
from models.config import Policy, PolicyKind
from services.reporting import (
    LEDGER_COLUMNS,
    METRICS_COLUMNS,
    concentration_by_policy,
    format_summary,
    read_ledger,
    read_metrics,
    regret_by_policy,
    summarize,
)

pytestmark = pytest.mark.integration

CONFIG = """\
# 小世界，几秒内跑完
n_brokers=8
n_requests=32
n_days=2
SIGMA=0.25
feature_dim=4
pretrain_steps=10
history_days=2
finetune_steps=3
layer_sizes=8,4
"""


@pytest.fixture()
def cfg(tmp_path):
    path = tmp_path / "exp.env"
    path.write_text(CONFIG, encoding="utf-8")
    return str(path)


# ================= 命令 =================
def test_run_then_compare(tmp_path, cfg):
    out = tmp_path / "run"
    code = main(["run", "--config", cfg, "--out", str(out), "--policies", "km,lacb,lacb_opt", "--reps", "2", "--timing"])
    assert code == EXIT_OK
    for name in ("metrics.csv", "ledger.csv", "manifest.json", "metrics.prom"):
        assert (out / name).exists()

    metrics = read_metrics(out / "metrics.csv")
    assert list(metrics.columns) == list(METRICS_COLUMNS)
    # 每天 16 单、每批 2 单 → 8 批/天，共 2 天
    assert len(metrics) == 3 * 2 * 16
    totals = metrics.groupby(["policy", "rep"])["batch_utility"].sum()
    for rep in (0, 1):
        assert totals[("lacb", rep)] == pytest.approx(totals[("lacb_opt", rep)], abs=1e-9)

    ledger = read_ledger(out / "ledger.csv")
    assert list(ledger.columns) == list(LEDGER_COLUMNS)
    assert len(ledger) == 3 * 2 * 2 * 8

    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["policies"] == ["km", "lacb", "lacb_opt"]
    assert manifest["repetitions"] == 2
    assert manifest["engine"]["lambda"] == pytest.approx(0.001)
    assert manifest["world"]["n_brokers"] == 8

    summary_path = tmp_path / "summary.json"
    assert main(["compare", str(out / "metrics.csv"), "--out", str(summary_path)]) == EXIT_OK
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    assert set(summary["policies"]) == {"km", "lacb", "lacb_opt"}
    assert summary["policies"]["lacb"]["reps"] == 2
    assert "regret" in summary["policies"]["lacb"]
    assert set(summary["speedup_vs_lacb_opt"]) == {"km", "lacb"}
    assert summary["policies"]["km"]["unserved"] >= 0
    for name in ("km", "lacb", "lacb_opt"):
        assert 0.0 <= summary["policies"][name]["concentration"] <= 1.0


def test_generate_then_run_on_saved_world(tmp_path, cfg):
    world_dir = tmp_path / "world"
    assert main(["generate", "--config", cfg, "--out", str(world_dir), "--seed", "4"]) == EXIT_OK
    assert (world_dir / "world.json").exists()
    out = tmp_path / "run"
    assert main(["run", "--config", cfg, "--world", str(world_dir), "--out", str(out), "--policies", "topk1,rr,ctopk2", "--city", "B"]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["world_dir"] == str(world_dir)
    assert manifest["world"]["rng_seed"] == 4
    assert set(pd.read_csv(out / "metrics.csv")["policy"]) == {"topk1", "rr", "ctopk2"}
    ledger = read_ledger(out / "ledger.csv")
    assert set(ledger.loc[ledger["policy"] == "ctopk2", "capacity"]) == {55}


def test_sweep(tmp_path, cfg):
    out = tmp_path / "sweep"
    code = main(["sweep", "--config", cfg, "--out", str(out), "--factor", "sigma", "--values", "0.25,0.5", "--policies", "km,topk1"])
    assert code == EXIT_OK
    sweep = pd.read_csv(out / "sweep.csv")
    assert len(sweep) == 4
    assert set(sweep["value"]) == {0.25, 0.5}
    assert (out / "sigma=0.5" / "metrics.csv").exists()


def test_exit_codes(tmp_path, cfg):
    assert main(["run", "--config", cfg, "--out", str(tmp_path), "--policies", "nope"]) == EXIT_USAGE
    assert main(["sweep", "--config", cfg, "--factor", "gamma"]) == EXIT_USAGE
    assert main(["run", "--config", str(tmp_path / "missing.env")]) == EXIT_IO
    assert main(["compare", str(tmp_path / "missing.csv")]) == EXIT_IO
    assert main([]) == EXIT_USAGE

    bad_key = tmp_path / "bad.env"
    bad_key.write_text("n_brokerz=3\n", encoding="utf-8")
    assert main(["generate", "--config", str(bad_key), "--out", str(tmp_path / "w")]) == EXIT_USAGE

    bad_csv = tmp_path / "metrics.csv"
    pd.DataFrame({"policy": ["km"], "rep": [0]}).to_csv(bad_csv, index=False)
    assert main(["compare", str(bad_csv)]) == EXIT_USAGE


# ================= 配置文件 =================
def test_config_keys_and_values():
    engine, world = build_configs(
        {
            "LAMBDA": "0.01",
            "candidate_capacities": "5, 10",
            "layer_sizes": "32",
            "rng_seed": "7",
            "preset": "full",
            "requests_per_batch": "none",
            "n_brokers": "50",
        }
    )
    assert engine.lam == pytest.approx(0.01)
    assert engine.candidate_capacities == (5, 10)
    assert engine.layer_sizes == (32,)
    assert engine.rng_seed == world.rng_seed == 7
    assert world.requests_per_batch is None
    assert world.n_brokers == 50


def test_preset_and_seed_override():
    engine, world = build_configs({"preset": "full"}, seed=5)
    assert engine.layer_sizes == (128, 64, 16)
    assert engine.rng_seed == world.rng_seed == 5
    engine, _ = load_run_config(None, seed=3)
    assert engine.layer_sizes == (16, 8)
    assert engine.rng_seed == 3


def test_config_errors(tmp_path):
    with pytest.raises(UsageError):
        split_overrides({"mystery": "1"})
    with pytest.raises(UsageError):
        build_configs({"alpha": "-1"})
    with pytest.raises(UsageError):
        build_configs({"candidate_capacities": "20,10"})
    with pytest.raises(StorageError):
        load_run_config(tmp_path / "none.env")


# ================= 策略名 =================
def test_policy_parse():
    assert Policy.parse("topk3").k == 3
    assert Policy.parse("TopK3").name == "topk3"
    ctopk = Policy.parse("ctopk1", fixed_capacity=55)
    assert ctopk.kind is PolicyKind.CTOP_K and ctopk.fixed_capacity == 55
    assert Policy.parse("lacb_opt").kind is PolicyKind.LACB_OPT
    assert Policy.parse("an").capacity_aware and Policy.parse("an").uses_bandit
    assert not Policy.parse("km").capacity_aware
    for bad in ("lacb2", "foo", ""):
        with pytest.raises(ValueError):
            Policy.parse(bad)


# ================= 汇总 =================
def test_summary_reads_regret_and_skips_speedup_without_timing(tmp_path):
    rows = [
        {"policy": p, "rep": 0, "day": 0, "interval": i, "requests": 1, "matched": 1,
         "batch_utility": u, "cumulative_utility": u * (i + 1), "wallclock_ms": None}
        for p, u in (("km", 0.1), ("lacb_opt", 0.2)) for i in range(3)
    ]
    pd.DataFrame(rows, columns=list(METRICS_COLUMNS)).to_csv(tmp_path / "metrics.csv", index=False)
    ledger = pd.DataFrame(
        [
            {"policy": "lacb_opt", "rep": 0, "broker_id": 0, "day": d, "capacity": 10, "workload": 3,
             "day_utility": 0.3, "reward": 0.1, "oracle_capacity": 20, "reward_at_estimate": 0.1,
             "oracle_reward": 0.15}
            for d in range(2)
        ],
        columns=list(LEDGER_COLUMNS),
    )
    ledger.to_csv(tmp_path / "ledger.csv", index=False)

    summary = summarize([tmp_path / "metrics.csv"])
    assert summary["policies"]["lacb_opt"]["mean_total_utility"] == pytest.approx(0.6)
    assert summary["policies"]["lacb_opt"]["regret"] == pytest.approx(0.1)
    assert "regret" not in summary["policies"]["km"]
    assert "speedup_vs_lacb_opt" not in summary
    assert regret_by_policy(ledger) == {"lacb_opt": pytest.approx(0.1)}
    with pytest.raises(UsageError):
        summarize([])


def test_summary_reports_assignment_concentration(tmp_path):
    rows = [
        {"policy": p, "rep": 0, "day": 0, "interval": i, "requests": 1, "matched": 1,
         "batch_utility": 0.1, "cumulative_utility": 0.1 * (i + 1), "wallclock_ms": None}
        for p in ("topk1", "lacb") for i in range(2)
    ]
    pd.DataFrame(rows, columns=list(METRICS_COLUMNS)).to_csv(tmp_path / "metrics.csv", index=False)
    # 两天合计：topk1 把 12 单全给 0 号经纪人，lacb 每人 6 单
    loads = {"topk1": [6, 0, 0, 0], "lacb": [3, 3, 3, 3]}
    ledger = pd.DataFrame(
        [
            {"policy": p, "rep": 0, "broker_id": b, "day": d, "capacity": 10, "workload": w,
             "day_utility": 0.0, "reward": 0.0, "oracle_capacity": 10, "reward_at_estimate": 0.0,
             "oracle_reward": 0.0}
            for p, ws in loads.items() for b, w in enumerate(ws) for d in range(2)
        ],
        columns=list(LEDGER_COLUMNS),
    )
    ledger.to_csv(tmp_path / "ledger.csv", index=False)

    assert concentration_by_policy(ledger) == {"topk1": pytest.approx(0.75), "lacb": 0.0}
    summary = summarize([tmp_path / "metrics.csv"])
    assert summary["policies"]["topk1"]["concentration"] == pytest.approx(0.75)
    assert summary["policies"]["lacb"]["concentration"] == 0.0
    assert "concentration" in format_summary(summary)


def test_read_ledger_checks_columns(tmp_path):
    path = tmp_path / "ledger.csv"
    pd.DataFrame({"policy": ["km"]}).to_csv(path, index=False)
    with pytest.raises(SchemaMismatchError):
        read_ledger(path)
