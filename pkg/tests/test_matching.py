# tests/test_matching.py
# -*- coding: utf-8 -*-
"""
KM 最大权匹配：
- 与穷举全排列的最大值逐位相等（二进制有理数权重，零容差）
- 非方阵必须先 balance；虚拟顶点的配对不出现在结果里
- 只解真实的请求 × 经纪人块：宽矩阵、含负权重的矩形矩阵与补齐后的结果一致
- 两经纪人 × 两请求的修正权重示例
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np
import pytest

from core.errors import NonSquareGraphError
from services.matching import (
    EXCLUDED,
    WeightedBipartiteGraph,
    _hungarian_min_cost,
    balance,
    max_weight_matching,
    solve_max_weight_matching,
)


@lru_cache(maxsize=None)
def _permutations(rows: int, cols: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(cols), rows)), dtype=int)


def brute_force_max(weights: np.ndarray) -> float:
    """穷举：较小一侧的每个点配到较大一侧的不同点（权重非负时即最优值）。"""
    w = np.asarray(weights, dtype=float)
    if w.shape[0] > w.shape[1]:
        w = w.T
    rows, cols = w.shape
    if rows == 0:
        return 0.0
    perms = _permutations(rows, cols)
    return float(w[np.arange(rows), perms].sum(axis=1).max())


def _dyadic(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.integers(0, 64, size=shape) / 16.0


def test_square_instances_match_exhaustive_search():
    rng = np.random.default_rng(2024)
    for _ in range(500):
        n = int(rng.integers(1, 9))
        w = _dyadic(rng, (n, n))
        m = solve_max_weight_matching(WeightedBipartiteGraph(weights=w))
        assert m.total_weight == brute_force_max(w)
        assert len(m) == n
        assert sorted(m.pairs.values()) == list(range(n))


def test_rectangular_instances_after_balance():
    rng = np.random.default_rng(7)
    for _ in range(100):
        rows, cols = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        w = _dyadic(rng, (rows, cols))
        graph = balance(WeightedBipartiteGraph(weights=w))
        assert graph.is_square
        assert graph.dummy_count == abs(rows - cols)
        m = solve_max_weight_matching(graph)
        assert m.total_weight == brute_force_max(w)
        assert len(m) == min(rows, cols)
        assert all(i < rows and j < cols for i, j in m.pairs.items())


def test_non_square_requires_balance():
    with pytest.raises(NonSquareGraphError):
        solve_max_weight_matching(WeightedBipartiteGraph(weights=np.ones((2, 3))))


def test_graph_validation():
    with pytest.raises(ValueError):
        WeightedBipartiteGraph(weights=np.array([[np.nan]]))
    with pytest.raises(ValueError):
        WeightedBipartiteGraph(weights=np.ones(3))


def test_empty_graph():
    m = solve_max_weight_matching(WeightedBipartiteGraph(weights=np.zeros((0, 0))))
    assert m.pairs == {} and m.total_weight == 0.0


def test_refined_two_by_two_example():
    # 行 = 经纪人 b1, b2；列 = 请求 r1, r2；b1 的效用已按价值函数修正
    w = np.array([[0.25, 0.45], [0.40, 0.50]])
    m = max_weight_matching(w)
    assert m.pairs == {0: 1, 1: 0}
    assert m.total_weight == pytest.approx(0.85)


def test_excluded_pairs_are_dropped():
    w = np.array([[EXCLUDED, 0.2], [EXCLUDED, 0.3]])
    m = max_weight_matching(w)
    # 只有一列可用：另一行被迫配到 EXCLUDED 列，结果里去掉
    assert len(m) == 1
    assert list(m.pairs.values()) == [1]


def test_negative_weights_still_matched_on_square():
    w = np.array([[-0.5, -0.1], [-0.2, -0.3]])
    m = max_weight_matching(w)
    assert m.total_weight == pytest.approx(-0.3)
    assert m.pairs == {0: 1, 1: 0}


def test_wide_batches_solve_only_real_rows():
    rng = np.random.default_rng(11)
    for _ in range(20):
        w = _dyadic(rng, (3, 40))
        m = max_weight_matching(w)
        assert m.total_weight == brute_force_max(w)
        assert sorted(m.pairs) == [0, 1, 2]
        assert len(set(m.pairs.values())) == 3


def test_direct_entry_agrees_with_balanced_solve():
    rng = np.random.default_rng(12)
    for _ in range(200):
        rows, cols = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        # 含负权重：较少的一侧仍然全部配上
        w = _dyadic(rng, (rows, cols)) - 1.0
        direct = max_weight_matching(w)
        balanced = solve_max_weight_matching(balance(WeightedBipartiteGraph(weights=w)))
        assert direct.total_weight == balanced.total_weight
        assert len(direct) == len(balanced) == min(rows, cols)


def test_hungarian_core_needs_rows_not_exceeding_cols():
    with pytest.raises(ValueError):
        _hungarian_min_cost(np.zeros((3, 2)))
    assert _hungarian_min_cost(np.zeros((0, 4))).size == 0


def test_large_batch_scales_with_rows():
    # 20 × 2000：按行增广，不需要 2000 × 2000 的方阵
    rng = np.random.default_rng(13)
    w = rng.uniform(size=(20, 2000))
    m = max_weight_matching(w)
    assert len(m) == 20
    greedy_upper = float(w.max(axis=1).sum())
    assert m.total_weight <= greedy_upper
    best = np.argmax(w, axis=1)
    if len(set(best.tolist())) == 20:
        assert m.total_weight == pytest.approx(greedy_upper)
