# tests/test_metrics.py
# -*- coding: utf-8 -*-
"""
领域对象与全局指标：
- total_utility（两经纪人示例、空结果、与逐项求和一致、缺效用报错）
- assert_capacity_feasible / assert_daily_feasible
- MatchResult 批内一对一、merge 可加性、改派清零
- assignment_concentration（基尼系数）
"""

from __future__ import annotations

import numpy as np
import pytest

from core.errors import InvariantViolation, MissingUtilityError
from models.domain import Broker, DayLedger, MatchResult, Request, TrialTriple
from models.metrics import (
    assert_capacity_feasible,
    assert_daily_feasible,
    assignment_concentration,
    broker_window,
    total_utility,
)


def test_total_utility_worked_example():
    # b1 → r2, b2 → r1；原始效用 0.3 与 0.4
    result = MatchResult()
    result.add(0, 2, 1, 0.3)
    result.add(0, 1, 2, 0.4)
    utilities = {(1, 1): 0.4, (2, 1): 0.3, (1, 2): 0.4, (2, 2): 0.5}
    assert total_utility(result, utilities) == pytest.approx(0.7)


def test_total_utility_empty():
    assert total_utility(MatchResult(), {}) == 0.0


def test_total_utility_matches_indicator_loop():
    rng = np.random.default_rng(5)
    u = rng.uniform(size=(6, 6))
    result = MatchResult()
    perm = rng.permutation(6)
    for interval in range(3):
        for r in range(6):
            if rng.random() < 0.5:
                continue
            b = int((perm[r] + interval) % 6)
            result.add(interval, r, b, u[r, b])
    utilities = {(r, b): float(u[r, b]) for r in range(6) for b in range(6)}

    expected = 0.0
    for interval in range(3):
        for r in range(6):
            for b in range(6):
                indicator = 1 if (r, b) in result.intervals.get(interval, {}) else 0
                expected += u[r, b] * indicator
    assert total_utility(result, utilities) == pytest.approx(expected)


def test_total_utility_missing_pair_names_it():
    result = MatchResult()
    result.add(0, 7, 3, 0.2)
    with pytest.raises(MissingUtilityError) as exc:
        total_utility(result, {})
    assert exc.value.pair == (7, 3)
    assert isinstance(exc.value, KeyError)


def test_total_utility_additive_across_intervals():
    rng = np.random.default_rng(1)
    result = MatchResult()
    for interval in range(4):
        for r in range(3):
            result.add(interval, interval * 10 + r, r, float(rng.uniform()))
    utilities = {(r, b): u for interval, batch in result.intervals.items() for (r, b), u in batch.items()}
    first, second = broker_window(result, (0, 2)), broker_window(result, (2, 4))
    merged = first.merge(second)
    assert total_utility(merged, utilities) == pytest.approx(
        total_utility(first, utilities) + total_utility(second, utilities)
    )
    with pytest.raises(ValueError):
        first.merge(first)


def test_match_result_is_one_to_one_within_interval():
    result = MatchResult()
    result.add(0, 1, 1, 0.1)
    with pytest.raises(InvariantViolation):
        result.add(0, 1, 2, 0.1)
    with pytest.raises(InvariantViolation):
        result.add(0, 2, 1, 0.1)
    # 下一批同一经纪人可以再接单
    result.add(1, 2, 1, 0.1)
    assert len(result) == 2


def test_zeroed_pair_contributes_nothing():
    result = MatchResult()
    result.add(0, 1, 1, 0.5)
    result.add(0, 2, 2, 0.25)
    result.zero_pair(0, 1, 1)
    assert result.batch_utility(0) == pytest.approx(0.25)
    assert total_utility(result, {(1, 1): 0.5, (2, 2): 0.25}) == pytest.approx(0.25)
    assert result.find(1) is None
    assert result.broker_counts() == {2: 1}


def test_capacity_feasibility():
    result = MatchResult()
    for interval in range(3):
        result.add(interval, interval, 0, 0.1)
    assert assert_capacity_feasible(result, {0: 2}) is False
    assert assert_capacity_feasible(result, {0: 3}) is True
    assert assert_capacity_feasible(MatchResult(), {}) is True


def test_daily_feasibility_splits_by_day():
    result = MatchResult()
    for interval in range(4):
        result.add(interval, interval, 0, 0.1)
    # 每天两个批次，每天接 2 单
    assert assert_daily_feasible(result, {0: {0: 2}, 1: {0: 2}}, intervals_per_day=2)
    assert not assert_daily_feasible(result, {0: {0: 1}, 1: {0: 2}}, intervals_per_day=2)


def test_assignment_concentration():
    even = MatchResult()
    for b in range(4):
        even.add(0, b, b, 0.1)
    assert assignment_concentration(even, range(4)) == pytest.approx(0.0)

    skewed = MatchResult()
    for interval in range(5):
        skewed.add(interval, interval, 0, 0.1)
    assert assignment_concentration(skewed, range(4)) == pytest.approx(3 / 4)
    assert assignment_concentration(MatchResult(), range(4)) == 0.0


def test_broker_invariants():
    with pytest.raises(ValueError):
        Broker(id=0, features=np.zeros(3), workload=-1)
    with pytest.raises(ValueError):
        Broker(id=0, features=np.zeros(3), capacity=0)
    with pytest.raises(ValueError):
        Broker(id=0, features=np.zeros(3), capacity_hits=2, days_active=1)

    b = Broker(id=0, features=np.zeros(3), capacity=2)
    b.workload = 2
    assert b.residue == 0 and not b.available
    assert b.close_day() is True
    assert (b.capacity_hits, b.days_active) == (1, 1)
    b.reset_day(5)
    assert (b.workload, b.capacity, b.residue) == (0, 5, 5)


def test_request_and_triple_validation():
    assert Request(id=1, day=2, interval=3).global_interval(4) == 11
    with pytest.raises(ValueError):
        Request(id=1, day=0, interval=4).global_interval(4)
    with pytest.raises(ValueError):
        TrialTriple(np.zeros(2), -1, 0.1)
    with pytest.raises(ValueError):
        TrialTriple(np.zeros(2), 1, -0.1)


def test_day_ledger_revoke_and_check():
    ledger = DayLedger(day=0)
    ledger.assign(0, 1, 5, 0.4)
    ledger.assign(1, 2, 5, 0.3)
    assert ledger.workload(5) == 2
    ledger.revoke(0, 1, 5, 0.4)
    assert ledger.workload(5) == 1
    assert ledger.utilities[5] == pytest.approx(0.3)
    ledger.check()

    ledger.workloads[5] = 3
    with pytest.raises(InvariantViolation):
        ledger.check()
