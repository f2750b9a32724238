# models/metrics.py
# -*- coding: utf-8 -*-
"""
全局指标：
- total_utility：Σ_i Σ_{r,b} u_{r,b}·𝓜^(i)_{r,b}
- assert_capacity_feasible：每个经纪人的有效分配数不超过容量
- assert_daily_feasible：按天检查（容量每天重新估计）
- assignment_concentration：分配次数的基尼系数（马太效应）

纯函数，可并发调用。
"""

from __future__ import annotations

from typing import Dict, Iterable, Mapping, Tuple

import numpy as np

from core.errors import MissingUtilityError
from models.domain import MatchResult, Pair


def total_utility(result: MatchResult, utilities: Mapping[Pair, float]) -> float:
    total = 0.0
    for interval, r, b in result.pairs():
        if (interval, r, b) in result.reassigned:
            continue  # 改派对的效用已清零
        try:
            total += float(utilities[(r, b)])
        except KeyError:
            raise MissingUtilityError(r, b) from None
    return total


def assert_capacity_feasible(result: MatchResult, capacities: Mapping[int, int]) -> bool:
    for b, n in result.broker_counts().items():
        if n > capacities.get(b, 0):
            return False
    return True


def split_by_day(result: MatchResult, intervals_per_day: int) -> Dict[int, MatchResult]:
    days: Dict[int, MatchResult] = {}
    for interval, batch in result.intervals.items():
        day = interval // intervals_per_day
        part = days.setdefault(day, MatchResult())
        part.intervals[interval] = dict(batch)
    for interval, r, b in result.reassigned:
        days[interval // intervals_per_day].reassigned.add((interval, r, b))
    return days


def assert_daily_feasible(
    result: MatchResult,
    daily_capacities: Mapping[int, Mapping[int, int]],
    intervals_per_day: int,
) -> bool:
    for day, part in split_by_day(result, intervals_per_day).items():
        if not assert_capacity_feasible(part, daily_capacities.get(day, {})):
            return False
    return True


def gini(counts: Iterable[float]) -> float:
    """每个经纪人接单数的基尼系数；全 0 或为空时为 0。"""
    x = np.asarray(list(counts), dtype=float)
    if x.size == 0 or x.sum() == 0:
        return 0.0
    diff = np.abs(x[:, None] - x[None, :]).sum()
    return float(diff / (2.0 * x.size * x.size * x.mean()))


def assignment_concentration(result: MatchResult, broker_ids: Iterable[int]) -> float:
    counts = result.broker_counts()
    return gini(counts.get(b, 0) for b in broker_ids)


def broker_window(result: MatchResult, intervals: Tuple[int, int]) -> MatchResult:
    """截取 [start, end) 批次的子结果（可加性检查用）。"""
    start, end = intervals
    part = MatchResult()
    for interval, batch in result.intervals.items():
        if start <= interval < end:
            part.intervals[interval] = dict(batch)
    part.reassigned = {t for t in result.reassigned if start <= t[0] < end}
    return part


__all__ = [
    "total_utility",
    "assert_capacity_feasible",
    "assert_daily_feasible",
    "split_by_day",
    "gini",
    "assignment_concentration",
    "broker_window",
]
