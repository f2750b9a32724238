# services/cbs.py
# -*- coding: utf-8 -*-
"""
候选经纪人筛选（CBS）：
- select_candidates：随机枢轴的 quickselect，期望线性时间取每个请求效用最高的 k 个经纪人
- prune_brokers：每个请求取 Top-|R|，并集作为 KM 的右侧顶点；最优匹配值不变。
  整批的 Top-|R| 用 top_k_mask 一次算完（同一排序键，结果与逐个 quickselect 相同）

排序键为 (效用降序, 经纪人 id 升序)，等效用时 id 小的优先，结果与“全排序取前缀”完全一致。
枢轴来自 np.random.default_rng([seed, request_id])，不同请求互不干扰，可复现。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger("lacb.cbs")


@dataclass(frozen=True)
class CandidateSet:
    request_id: int
    broker_ids: Tuple[int, ...]   # 按 (效用降序, id 升序) 排列

    def __len__(self) -> int:
        return len(self.broker_ids)

    def __contains__(self, broker_id: object) -> bool:
        return broker_id in self.broker_ids


@dataclass
class SelectionStats:
    """比较次数计数器（基准里观察期望线性行为）。"""
    comparisons: int = 0
    calls: int = 0


def _precedes(u: np.ndarray, ids: np.ndarray, pu: float, pid: int) -> np.ndarray:
    return (u > pu) | ((u == pu) & (ids < pid))


def _quickselect(
    u: np.ndarray,
    ids: np.ndarray,
    k: int,
    rng: np.random.Generator,
    stats: Optional[SelectionStats],
) -> np.ndarray:
    """返回排序键最靠前的 k 个位置（下标数组，未排序）。"""
    chosen: List[np.ndarray] = []
    idx = np.arange(u.size)
    while k > 0 and idx.size > k:
        p = idx[int(rng.integers(idx.size))]
        rest = idx[idx != p]
        left_mask = _precedes(u[rest], ids[rest], u[p], ids[p])
        if stats is not None:
            stats.comparisons += int(rest.size)
        lc, rc = rest[left_mask], rest[~left_mask]
        if lc.size >= k:
            idx = lc
        elif lc.size + 1 == k:
            chosen.extend((lc, np.array([p])))
            k = 0
        else:
            chosen.extend((lc, np.array([p])))
            k -= lc.size + 1
            idx = rc
    if k > 0:
        chosen.append(idx)
    return np.concatenate(chosen) if chosen else np.empty(0, dtype=int)


def _rank(u: np.ndarray, ids: np.ndarray, positions: np.ndarray) -> np.ndarray:
    order = np.lexsort((ids[positions], -u[positions]))
    return positions[order]


def select_candidates(
    k: int,
    request_utilities: Mapping[int, float],
    *,
    request_id: int = 0,
    seed: int = 0,
    stats: Optional[SelectionStats] = None,
) -> CandidateSet:
    if k < 1:
        raise ValueError("k must be at least 1")
    ids = np.fromiter(request_utilities.keys(), dtype=np.int64, count=len(request_utilities))
    u = np.fromiter(request_utilities.values(), dtype=float, count=len(request_utilities))
    return select_from_arrays(k, u, ids, request_id=request_id, seed=seed, stats=stats)


def select_from_arrays(
    k: int,
    u: np.ndarray,
    ids: np.ndarray,
    *,
    request_id: int = 0,
    seed: int = 0,
    stats: Optional[SelectionStats] = None,
) -> CandidateSet:
    if stats is not None:
        stats.calls += 1
    if ids.size <= k:
        top = np.arange(ids.size)
    else:
        rng = np.random.default_rng([int(seed), int(request_id)])
        top = _quickselect(u, ids, k, rng, stats)
    ranked = _rank(u, ids, top)
    return CandidateSet(request_id=request_id, broker_ids=tuple(int(b) for b in ids[ranked]))


def top_k_mask(utilities: np.ndarray, k: int) -> np.ndarray:
    """
    utilities 的每一行取排序键最靠前的 k 列（列已按经纪人 id 升序排列）。
    与逐行 select_from_arrays 的结果相同：先取严格大于第 k 大值的，再按 id 补齐等值的。
    """
    rows, cols = utilities.shape
    if k >= cols:
        return np.ones((rows, cols), dtype=bool)
    kth = -np.partition(-utilities, k - 1, axis=1)[:, k - 1]
    above = utilities > kth[:, None]
    tied = utilities == kth[:, None]
    need = k - above.sum(axis=1)
    return above | (tied & (np.cumsum(tied, axis=1) <= need[:, None]))


def prune_brokers(
    request_ids: Sequence[int],
    broker_ids: Sequence[int],
    utilities: np.ndarray,
    *,
    seed: int = 0,
    stats: Optional[SelectionStats] = None,
) -> List[int]:
    """
    utilities[i, j] = u(request_ids[i], broker_ids[j])。
    返回 ∪_r Top^r_{|R|} 的经纪人 id（升序）。整批一次 np.partition，不逐个请求做 quickselect。
    """
    ids = np.asarray(broker_ids, dtype=np.int64)
    k = len(request_ids)
    if k == 0 or ids.size == 0:
        return []
    if ids.size <= k:
        return sorted(int(b) for b in ids)
    order = np.argsort(ids, kind="stable")
    mask = top_k_mask(np.asarray(utilities, dtype=float)[:, order], k)
    if stats is not None:
        stats.calls += k
        stats.comparisons += int(mask.size)
    keep = [int(b) for b in ids[order][mask.any(axis=0)]]
    log.debug("cbs pruned %s -> %s brokers for %s requests (seed=%s)", ids.size, len(keep), k, seed)
    return keep


__all__ = ["CandidateSet", "SelectionStats", "select_candidates", "select_from_arrays", "top_k_mask", "prune_brokers"]
