# services/reporting.py
# -*- coding: utf-8 -*-
"""
运行产物读写（pandas）：
- metrics.csv：每 (策略, 重复, 批次) 一行，含 batch_utility / cumulative_utility / wallclock_ms
- ledger.csv：每 (策略, 重复, 经纪人, 天) 一行，含容量估计、工作量、当天效用与遗憾所需的期望奖励
- manifest.json：配置回显 + 种子 + 代码版本，单凭它就能复现一次运行
- summarize：多个 metrics 文件汇总成每个策略的平均总效用、提速比、遗憾、接单集中度（基尼系数）
- sweep.csv：参数扫描结果
"""

from __future__ import annotations

import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from core.errors import SchemaMismatchError, StorageError, UsageError
from models.metrics import gini

log = logging.getLogger("lacb.reporting")

METRICS_COLUMNS = (
    "policy", "rep", "day", "interval", "requests", "matched",
    "batch_utility", "cumulative_utility", "wallclock_ms",
)
LEDGER_COLUMNS = (
    "policy", "rep", "broker_id", "day", "capacity", "workload", "day_utility",
    "reward", "oracle_capacity", "reward_at_estimate", "oracle_reward",
)
SWEEP_COLUMNS = ("factor", "value", "policy", "total_utility", "mean_batch_ms")

# compare 时只检查这些列
_REQUIRED_METRICS = ("policy", "rep", "day", "interval", "batch_utility", "cumulative_utility", "wallclock_ms")
# 与 lacb_opt 比较提速的 KM 系策略
_KM_POLICIES = ("lacb", "an", "km")


def _write_csv(rows: Sequence[Mapping[str, Any]], columns: Sequence[str], path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(list(rows), columns=list(columns)).to_csv(path, index=False)
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}") from e
    log.info("wrote %s (%s rows)", path, len(rows))
    return path


def write_metrics(rows: Sequence[Mapping[str, Any]], path: str | Path) -> Path:
    return _write_csv(rows, METRICS_COLUMNS, Path(path))


def write_ledger(rows: Sequence[Mapping[str, Any]], path: str | Path) -> Path:
    return _write_csv(rows, LEDGER_COLUMNS, Path(path))


def write_sweep(rows: Sequence[Mapping[str, Any]], path: str | Path) -> Path:
    return _write_csv(rows, SWEEP_COLUMNS, Path(path))


def build_manifest(
    *,
    engine_config,
    world_config,
    policies: Iterable[str],
    repetitions: int,
    timing: bool,
    code_version: str,
    world_dir: Optional[str] = None,
    unserved: Optional[Mapping[str, int]] = None,
) -> Dict[str, Any]:
    return {
        "code_version": code_version,
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "seed": engine_config.rng_seed,
        "engine": engine_config.model_dump(mode="json", by_alias=True),
        "world": world_config.model_dump(mode="json"),
        "world_dir": world_dir,
        "policies": list(policies),
        "repetitions": int(repetitions),
        "timing": bool(timing),
        "unserved": dict(unserved or {}),
    }


def write_json(data: Mapping[str, Any], path: str | Path) -> Path:
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(data, indent=2, ensure_ascii=False), encoding="utf-8")
    except OSError as e:
        raise StorageError(f"cannot write {p}: {e}") from e
    log.info("wrote %s", p)
    return p


def read_manifest(path: str | Path) -> Dict[str, Any]:
    p = Path(path)
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except OSError as e:
        raise StorageError(f"cannot read {p}: {e}") from e


# ================= 读取 / 汇总 =================
def read_metrics(path: str | Path) -> pd.DataFrame:
    p = Path(path)
    try:
        df = pd.read_csv(p)
    except OSError as e:
        raise StorageError(f"cannot read metrics file {p}: {e}") from e
    for col in _REQUIRED_METRICS:
        if col not in df.columns:
            raise SchemaMismatchError(str(p), col)
    return df


def read_ledger(path: str | Path) -> pd.DataFrame:
    p = Path(path)
    try:
        df = pd.read_csv(p)
    except OSError as e:
        raise StorageError(f"cannot read ledger file {p}: {e}") from e
    for col in LEDGER_COLUMNS:
        if col not in df.columns:
            raise SchemaMismatchError(str(p), col)
    return df


def policy_totals(metrics: pd.DataFrame) -> pd.DataFrame:
    """每 (policy, rep) 的总效用与平均批次耗时。"""
    grouped = metrics.groupby(["policy", "rep"], sort=True)
    out = grouped.agg(
        total_utility=("batch_utility", "sum"),
        mean_batch_ms=("wallclock_ms", "mean"),
        batches=("batch_utility", "size"),
    )
    return out.reset_index()


def regret_by_policy(ledger: pd.DataFrame) -> Dict[str, float]:
    """Σ(oracle_reward − reward_at_estimate)，按重复次数取平均。"""
    gap = ledger["oracle_reward"] - ledger["reward_at_estimate"]
    per_rep = gap.groupby([ledger["policy"], ledger["rep"]]).sum()
    return {str(p): float(v) for p, v in per_rep.groupby(level=0).mean().items()}


def concentration_by_policy(ledger: pd.DataFrame) -> Dict[str, float]:
    """每次重复里各经纪人总接单数的基尼系数，按重复次数取平均。"""
    per_broker = ledger.groupby(["policy", "rep", "broker_id"])["workload"].sum()
    per_rep = per_broker.groupby(level=["policy", "rep"]).agg(lambda s: gini(s.to_numpy()))
    return {str(p): float(v) for p, v in per_rep.groupby(level=0).mean().items()}


def summarize(metrics_paths: Sequence[str | Path]) -> Dict[str, Any]:
    if not metrics_paths:
        raise UsageError("compare needs at least one metrics file")
    frames: List[pd.DataFrame] = []
    regret: Dict[str, float] = {}
    concentration: Dict[str, float] = {}
    unserved: Dict[str, int] = {}
    for i, path in enumerate(metrics_paths):
        df = read_metrics(path)
        df["source"] = i
        frames.append(df)
        ledger_path = Path(path).with_name("ledger.csv")
        if ledger_path.exists():
            ledger = read_ledger(ledger_path)
            regret.update(regret_by_policy(ledger))
            concentration.update(concentration_by_policy(ledger))
        manifest_path = Path(path).with_name("manifest.json")
        if manifest_path.exists():
            for key, n in read_manifest(manifest_path).get("unserved", {}).items():
                name = key.split("/", 1)[0]
                unserved[name] = unserved.get(name, 0) + int(n)
    metrics = pd.concat(frames, ignore_index=True)
    metrics["rep"] = metrics["source"].astype(str) + ":" + metrics["rep"].astype(str)
    totals = policy_totals(metrics)

    policies: Dict[str, Dict[str, Any]] = {}
    for name, group in totals.groupby("policy", sort=True):
        ms = group["mean_batch_ms"].dropna()
        policies[str(name)] = {
            "mean_total_utility": float(group["total_utility"].mean()),
            "std_total_utility": float(group["total_utility"].std(ddof=0)),
            "reps": int(len(group)),
            "mean_batch_ms": float(ms.mean()) if len(ms) else None,
        }
        if str(name) in regret:
            policies[str(name)]["regret"] = regret[str(name)]
        if str(name) in concentration:
            policies[str(name)]["concentration"] = concentration[str(name)]
        if str(name) in unserved:
            policies[str(name)]["unserved"] = unserved[str(name)]

    summary: Dict[str, Any] = {"policies": policies}
    fast = policies.get("lacb_opt", {}).get("mean_batch_ms")
    if len(policies) > 1 and fast:
        speedups = {
            name: policies[name]["mean_batch_ms"] / fast
            for name in _KM_POLICIES
            if name in policies and policies[name]["mean_batch_ms"] is not None
        }
        if speedups:
            summary["speedup_vs_lacb_opt"] = speedups
    return summary


def format_summary(summary: Mapping[str, Any]) -> str:
    rows = []
    for name, item in summary["policies"].items():
        rows.append(
            {
                "policy": name,
                "mean_total_utility": round(item["mean_total_utility"], 4),
                "reps": item["reps"],
                "mean_batch_ms": None if item["mean_batch_ms"] is None else round(item["mean_batch_ms"], 3),
                "regret": round(item["regret"], 4) if "regret" in item else None,
                "concentration": round(item["concentration"], 4) if "concentration" in item else None,
            }
        )
    text = pd.DataFrame(rows).to_string(index=False)
    speedups = summary.get("speedup_vs_lacb_opt")
    if speedups:
        text += "\n\nspeedup vs lacb_opt: " + ", ".join(
            f"{k}={v:.1f}x" for k, v in sorted(speedups.items())
        )
    return text


def median_ms(seconds: Sequence[float]) -> float:
    return float(np.median(np.asarray(seconds)) * 1000.0) if len(seconds) else float("nan")


__all__ = [
    "METRICS_COLUMNS",
    "LEDGER_COLUMNS",
    "SWEEP_COLUMNS",
    "write_metrics",
    "write_ledger",
    "write_sweep",
    "build_manifest",
    "write_json",
    "read_manifest",
    "read_metrics",
    "read_ledger",
    "policy_totals",
    "regret_by_policy",
    "concentration_by_policy",
    "summarize",
    "format_summary",
    "median_ms",
]
