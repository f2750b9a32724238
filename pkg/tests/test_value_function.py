# tests/test_value_function.py
# -*- coding: utf-8 -*-
"""
价值函数与触顶频率：TD 更新、截断、效用修正阈值、滚动窗口、CSV 读写。
"""

from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from core.errors import SchemaMismatchError, StorageError, TemporalOrderError
from services.value_function import (
    SaturationTracker,
    ValueTable,
    refine_utility,
    saturation_frequency,
    td_update,
)


def test_td_update_single_step():
    table = ValueTable(5, beta=0.5, gamma=0.9)
    table[2] = 1.0
    # V(3) ← 0 + 0.5·(0.4 + 0.9·1.0 − 0) = 0.65
    assert td_update(table, 3, 2, 0.4) == pytest.approx(0.65)
    assert table[3] == pytest.approx(0.65)
    assert table[2] == pytest.approx(1.0)


def test_td_update_converges_to_fixed_point():
    table = ValueTable(1, beta=0.25, gamma=0.5)
    for _ in range(500):
        td_update(table, 1, 0, 1.0)
    # V(0) 保持 0，V(1) → u
    assert table[1] == pytest.approx(1.0, abs=1e-9)


def test_td_update_rejects_growing_residue():
    table = ValueTable(4)
    with pytest.raises(TemporalOrderError):
        table.td_update(1, 2, 0.3)
    with pytest.raises(ValueError):
        table.td_update(0, -1, 0.3)


def test_values_are_clamped_to_range():
    table = ValueTable(3)
    table[10] = 2.0
    assert table[3] == 2.0 and table[99] == 2.0
    assert table[-4] == table[0] == 0.0
    table.td_update(8, 7, 1.0)
    assert table.values.size == 4


def test_constructor_validation():
    with pytest.raises(ValueError):
        ValueTable(-1)
    with pytest.raises(ValueError):
        ValueTable(3, beta=0.0)
    with pytest.raises(ValueError):
        ValueTable(3, gamma=1.5)


def test_refine_utility_threshold():
    table = ValueTable(5, gamma=0.9)
    table[3], table[2] = 0.5, 0.2
    # γV(2) − V(3) = 0.18 − 0.5 = −0.32
    assert refine_utility(0.4, 0.3, 0.3, table, 3) == 0.4
    assert refine_utility(0.4, 0.31, 0.3, table, 3) == pytest.approx(0.08)
    assert table.advantage(3) == pytest.approx(-0.32)


def test_vector_advantages_match_scalar():
    table = ValueTable(6, gamma=0.9)
    table.values[:] = [0.0, 0.3, 0.55, 0.7, 0.9, 1.0, 1.05]
    crs = np.array([0, 1, 3, 6, 9])
    expected = [table.advantage(int(cr)) for cr in crs]
    np.testing.assert_allclose(table.advantages(crs), expected, rtol=0, atol=0)


def test_refined_two_by_two_utilities():
    # 经纪人 1 触顶频繁且剩余 1 单，修正后 0.5 → 0.45、0.3 → 0.25
    table = ValueTable(4, gamma=1.0)
    table[1], table[0] = 0.05, 0.0
    assert refine_utility(0.3, 0.8, 0.5, table, 1) == pytest.approx(0.25)
    assert refine_utility(0.5, 0.8, 0.5, table, 1) == pytest.approx(0.45)
    assert refine_utility(0.4, 0.1, 0.5, table, 3) == 0.4


def test_saturation_tracker_rolling_window():
    tracker = SaturationTracker(window=3)
    assert tracker.frequency(1) == 0.0
    for hit in (True, True, False):
        tracker.record(1, hit)
    assert tracker.frequency(1) == pytest.approx(2 / 3)
    tracker.record(1, False)
    tracker.record(1, False)
    # 只保留最近 3 天
    assert tracker.days(1) == 3
    assert saturation_frequency(tracker, 1) == 0.0
    with pytest.raises(ValueError):
        SaturationTracker(window=0)


def test_csv_round_trip(tmp_path):
    table = ValueTable(4, beta=0.3, gamma=0.8)
    for cr in range(5):
        table[cr] = cr / 10
    path = table.to_csv(tmp_path / "v" / "value_table.csv")
    loaded = ValueTable.from_csv(path, beta=0.3, gamma=0.8)
    assert loaded.cr_max == 4
    assert list(loaded.values) == pytest.approx(list(table.values))


def test_csv_schema_and_missing_file(tmp_path):
    bad = tmp_path / "bad.csv"
    pd.DataFrame({"cr": [0, 1], "v": [0.0, 1.0]}).to_csv(bad, index=False)
    with pytest.raises(SchemaMismatchError):
        ValueTable.from_csv(bad)
    with pytest.raises(StorageError):
        ValueTable.from_csv(tmp_path / "missing.csv")


def test_copy_is_independent():
    table = ValueTable(2)
    clone = table.copy()
    clone[1] = 3.0
    assert table[1] == 0.0
