# services/policies.py
# -*- coding: utf-8 -*-
"""
单批次分配策略（AssignmentEngine 每个时间片调用一次 assign）：

- ValueGuidedKM：VFGA。在可用经纪人 B₊ 上按价值函数修正效用，平衡后跑 KM；
  prune=True 时先用 CBS 裁剪（LACB-Opt），结果与不裁剪一致
- PlainKM：不做修正的逐批 KM；capacity_aware=True 为 AN，False 为 KM 基线
- TopK：每个请求取效用前 k 名，按顺序选第一个本批还没被占的；k 个都被占则顺延
  （capacity_aware=True 时只在未达固定容量的经纪人里选，即 CTop-K）
- QualitySampling：RR，按经纪人近 7 天每单平均实际效用加权抽样，不看容量

assign 返回 [(request_id, broker_id, 原始效用 u)]；请求在本批最多出现一次，经纪人也是。
"""

from __future__ import annotations

import abc
import logging
from typing import TYPE_CHECKING, List, Sequence, Set, Tuple

import numpy as np

from models.config import Policy, PolicyKind
from services.cbs import prune_brokers, select_from_arrays
from services.matching import EXCLUDED, max_weight_matching

if TYPE_CHECKING:
    from services.engine import AssignmentEngine

log = logging.getLogger("lacb.policies")

Assignment = Tuple[int, int, float]

RR_WEIGHT_FLOOR = 0.01


def solve_batch(
    weights: np.ndarray,
    request_ids: Sequence[int],
    broker_ids: Sequence[int],
) -> List[Tuple[int, int]]:
    """weights[i, j] 为 request_ids[i] 与 broker_ids[j] 的（修正后）权重；返回成交的 (r, b)。"""
    if len(request_ids) == 0 or len(broker_ids) == 0:
        return []
    matching = max_weight_matching(weights)
    return [(int(request_ids[i]), int(broker_ids[j])) for i, j in sorted(matching.pairs.items())]


class AssignmentStrategy(abc.ABC):
    #: 成交后是否对价值表做 TD 更新
    value_guided = False

    @abc.abstractmethod
    def assign(
        self,
        engine: "AssignmentEngine",
        request_ids: Sequence[int],
        utilities: np.ndarray,
    ) -> List[Assignment]:
        """utilities 为 |request_ids| × |B| 的原始效用矩阵（列下标即经纪人 id）。"""


def _mask_exclusions(
    engine: "AssignmentEngine",
    weights: np.ndarray,
    request_ids: Sequence[int],
    cols: np.ndarray,
) -> None:
    if not engine.exclusions:
        return
    position = {int(b): j for j, b in enumerate(cols)}
    for row, r in enumerate(request_ids):
        for b in engine.exclusions.get(int(r), ()):
            j = position.get(b)
            if j is not None:
                weights[row, j] = EXCLUDED


class PlainKM(AssignmentStrategy):
    def __init__(self, capacity_aware: bool) -> None:
        self.capacity_aware = capacity_aware

    def _columns(self, engine: "AssignmentEngine") -> np.ndarray:
        return engine.available_ids() if self.capacity_aware else engine.all_ids()

    def _weights(self, engine: "AssignmentEngine", utilities: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return utilities[:, cols].copy()

    def assign(self, engine, request_ids, utilities):
        cols = self._columns(engine)
        if cols.size == 0 or len(request_ids) == 0:
            return []
        weights = self._weights(engine, utilities, cols)
        _mask_exclusions(engine, weights, request_ids, cols)
        cols, weights = self._reduce(engine, request_ids, cols, weights)
        pairs = solve_batch(weights, request_ids, cols)
        row = {int(r): i for i, r in enumerate(request_ids)}
        return [(r, b, float(utilities[row[r], b])) for r, b in pairs]

    def _reduce(self, engine, request_ids, cols, weights):
        return cols, weights


class ValueGuidedKM(PlainKM):
    value_guided = True

    def __init__(self, prune: bool = False) -> None:
        super().__init__(capacity_aware=True)
        self.prune = prune

    def _weights(self, engine, utilities, cols):
        # refine_utility 的整列版本：f_b ≤ δ 的列不动，其余加 γV(cr−1) − V(cr)
        saturated = engine.saturation_frequencies()[cols] > engine.config.delta
        shift = np.where(saturated, engine.value_table.advantages(engine.residues(cols)), 0.0)
        return utilities[:, cols] + shift[None, :]

    def _reduce(self, engine, request_ids, cols, weights):
        if not self.prune or cols.size <= len(request_ids):
            return cols, weights
        keep = prune_brokers(request_ids, cols, weights, seed=engine.config.rng_seed, stats=engine.cbs_stats)
        position = np.searchsorted(cols, keep)
        log.debug("pruned %s -> %s brokers", cols.size, len(keep))
        return cols[position], weights[:, position]


class TopK(AssignmentStrategy):
    def __init__(self, k: int, capacity_aware: bool = False) -> None:
        self.k = k
        self.capacity_aware = capacity_aware

    def assign(self, engine, request_ids, utilities):
        cols = engine.available_ids() if self.capacity_aware else engine.all_ids()
        if cols.size == 0 or len(request_ids) == 0:
            return []
        sub = utilities[:, cols]
        # 先服务最优候选效用最高的请求
        order = sorted(range(len(request_ids)), key=lambda i: (-float(sub[i].max()), int(request_ids[i])))
        taken: Set[int] = set()
        out: List[Assignment] = []
        for i in order:
            r = int(request_ids[i])
            excluded = engine.exclusions.get(r, set())
            row = sub[i]
            ids = cols
            if excluded:
                keep = np.array([int(b) not in excluded for b in cols])
                row, ids = row[keep], cols[keep]
            if ids.size == 0:
                continue
            cand = select_from_arrays(self.k, row, ids, request_id=r, seed=engine.config.rng_seed)
            for b in cand.broker_ids:
                if b not in taken:
                    taken.add(b)
                    out.append((r, b, float(utilities[i, b])))
                    break
        return out


class QualitySampling(AssignmentStrategy):
    def assign(self, engine, request_ids, utilities):
        cols = engine.all_ids()
        if cols.size == 0:
            return []
        weights = np.maximum(engine.quality_weights(), RR_WEIGHT_FLOOR)
        free = np.ones(cols.size, dtype=bool)
        out: List[Assignment] = []
        for i, r in enumerate(request_ids):
            allowed = free.copy()
            for b in engine.exclusions.get(int(r), ()):
                allowed[b] = False
            if not allowed.any():
                continue
            p = np.where(allowed, weights, 0.0)
            b = int(engine.rng.choice(cols.size, p=p / p.sum()))
            free[b] = False
            out.append((int(r), b, float(utilities[i, b])))
        return out


def make_strategy(policy: Policy) -> AssignmentStrategy:
    kind = policy.kind
    if kind is PolicyKind.LACB:
        return ValueGuidedKM(prune=False)
    if kind is PolicyKind.LACB_OPT:
        return ValueGuidedKM(prune=True)
    if kind is PolicyKind.AN:
        return PlainKM(capacity_aware=True)
    if kind is PolicyKind.KM_BATCH:
        return PlainKM(capacity_aware=False)
    if kind is PolicyKind.TOP_K:
        return TopK(policy.k, capacity_aware=False)
    if kind is PolicyKind.CTOP_K:
        return TopK(policy.k, capacity_aware=True)
    if kind is PolicyKind.RR:
        return QualitySampling()
    raise ValueError(f"no strategy for policy {kind}")


__all__ = [
    "Assignment",
    "AssignmentStrategy",
    "PlainKM",
    "ValueGuidedKM",
    "TopK",
    "QualitySampling",
    "make_strategy",
    "solve_batch",
]
