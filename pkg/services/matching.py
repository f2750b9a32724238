# services/matching.py
# -*- coding: utf-8 -*-
"""
最大权二分匹配（Kuhn–Munkres）：
- WeightedBipartiteGraph：请求 × 经纪人 的稠密权重矩阵 + 补齐信息
- balance：较小的一侧补 0 权重的虚拟顶点，得到方阵（记下原始尺寸）
- solve_max_weight_matching：最短增广路 + 顶标（势）版本的 KM。只解真实的 |R|×|B| 块
  （行多于列时转置），O(min²·max)，内层循环用 numpy 向量化；结果去掉被排除（EXCLUDED）的配对
- max_weight_matching：任意形状矩阵直接求解，不分配补齐后的方阵（每批分配走这条路）

真实顶点较少的一侧总是全部配上（补齐后的方阵里也是如此），所以权重为负时仍会成交。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from core.errors import NonSquareGraphError

log = logging.getLogger("lacb.matching")

# 禁止配对的哨兵权重（改派时把被拒绝的经纪人排除在外）
EXCLUDED = -1.0e6


@dataclass
class WeightedBipartiteGraph:
    weights: np.ndarray
    dummy_count: int = 0
    left_size: int = field(init=False)
    right_size: int = field(init=False)
    # 补齐前的原始尺寸；虚拟顶点的下标 ≥ 原始尺寸
    orig_left: int = -1
    orig_right: int = -1

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2:
            raise ValueError("weights must be a 2-d matrix")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        self.weights = w
        self.left_size, self.right_size = w.shape
        if self.orig_left < 0:
            self.orig_left = self.left_size
        if self.orig_right < 0:
            self.orig_right = self.right_size

    @property
    def is_square(self) -> bool:
        return self.left_size == self.right_size


@dataclass(frozen=True)
class Matching:
    pairs: Dict[int, int]        # 左下标 → 右下标（原始下标）
    total_weight: float

    def __len__(self) -> int:
        return len(self.pairs)


def balance(graph: WeightedBipartiteGraph) -> WeightedBipartiteGraph:
    n = max(graph.left_size, graph.right_size)
    if graph.is_square:
        return graph
    padded = np.zeros((n, n), dtype=float)
    padded[: graph.left_size, : graph.right_size] = graph.weights
    return WeightedBipartiteGraph(
        weights=padded,
        dummy_count=graph.dummy_count + abs(graph.left_size - graph.right_size),
        orig_left=graph.orig_left,
        orig_right=graph.orig_right,
    )


def _hungarian_min_cost(cost: np.ndarray) -> np.ndarray:
    """
    n × m（n ≤ m）最小代价匹配：每行配一个不同的列，返回 row → col。
    u / v 为行列势，p[j] 为列 j 当前匹配的行（1 起编号，0 号列是虚拟起点），
    way[j] 记录增广路上列 j 的前驱列。每行一次增广，O(n²·m)。
    """
    n, m = cost.shape
    if n > m:
        raise ValueError(f"cost matrix needs rows <= cols (got {n}x{m})")
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=int)
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cols = np.nonzero(free)[0] + 1
            cur = cost[i0 - 1, cols - 1] - u[i0] - v[cols]
            better = cur < minv[cols]
            minv[cols[better]] = cur[better]
            way[cols[better]] = j0
            k = int(np.argmin(minv[cols]))
            j1 = int(cols[k])
            delta = minv[j1]
            used_idx = np.nonzero(used)[0]
            u[p[used_idx]] += delta
            v[used_idx] -= delta
            minv[cols] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assignment = np.empty(n, dtype=int)
    for j in range(1, m + 1):
        if p[j]:
            assignment[p[j] - 1] = j - 1
    return assignment


def _solve_block(weights: np.ndarray) -> Dict[int, int]:
    """只在真实顶点上求最大权匹配：行多于列时转置后再解。"""
    rows, cols = weights.shape
    if rows == 0 or cols == 0:
        return {}
    if rows <= cols:
        return {r: int(c) for r, c in enumerate(_hungarian_min_cost(-weights))}
    return {int(r): c for c, r in enumerate(_hungarian_min_cost(-weights.T))}


def _collect(weights: np.ndarray, assignment: Dict[int, int], dummies: int) -> Matching:
    pairs: Dict[int, int] = {}
    total = 0.0
    for row, col in sorted(assignment.items()):
        w = float(weights[row, col])
        if w <= EXCLUDED / 2:
            continue
        pairs[row] = col
        total += w
    log.debug("km solved %sx%s matched=%s dummies=%s", *weights.shape, len(pairs), dummies)
    return Matching(pairs=pairs, total_weight=total)


def solve_max_weight_matching(graph: WeightedBipartiteGraph) -> Matching:
    """
    balance 之后的方阵上求最大权匹配。虚拟顶点的 0 权重不改变真实顶点之间的最优配对，
    所以只解左上角 orig_left × orig_right 的真实块。
    """
    if not graph.is_square:
        raise NonSquareGraphError(
            f"graph must be balanced first (got {graph.left_size}x{graph.right_size})"
        )
    real = graph.weights[: graph.orig_left, : graph.orig_right]
    return _collect(real, _solve_block(real), graph.dummy_count)


def max_weight_matching(weights: np.ndarray) -> Matching:
    """任意形状矩阵的便捷入口：结果与 balance + solve 相同，但不构造补齐后的方阵。"""
    graph = WeightedBipartiteGraph(weights=weights)
    return _collect(graph.weights, _solve_block(graph.weights), abs(graph.left_size - graph.right_size))


__all__ = [
    "EXCLUDED",
    "WeightedBipartiteGraph",
    "Matching",
    "balance",
    "solve_max_weight_matching",
    "max_weight_matching",
]
