# models/domain.py
# -*- coding: utf-8 -*-
"""
领域对象：
- Broker：经纪人（特征 x_b、当日工作量 w_b、估计容量 c_b、累计效用 s_b、触顶计数）
- Request：客户请求（所属天、批次）
- TrialTriple：老虎机的观测三元组 (x, w, s)
- MatchResult：逐批次的匹配指示与实际效用
- DayLedger：当天台账（工作量、分配对、实际效用、容量估计）

除 Broker 的计数器与台账外，其余都是不可变值对象。
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Set, Tuple

import numpy as np

from core.errors import InvariantViolation

Pair = Tuple[int, int]  # (request_id, broker_id)


# ================= 经纪人 =================
@dataclass
class Broker:
    id: int
    features: np.ndarray
    workload: int = 0
    capacity: int = 1
    accumulated_utility: float = 0.0
    capacity_hits: int = 0
    days_active: int = 0

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=float)
        if self.workload < 0:
            raise ValueError("workload must be non-negative")
        if self.capacity < 1:
            raise ValueError("capacity must be at least 1")
        if not 0 <= self.capacity_hits <= self.days_active:
            raise ValueError("capacity_hits must lie in [0, days_active]")

    @property
    def residue(self) -> int:
        return max(0, self.capacity - self.workload)

    @property
    def available(self) -> bool:
        return self.workload < self.capacity

    def reset_day(self, capacity: int) -> None:
        self.workload = 0
        self.accumulated_utility = 0.0
        self.capacity = max(1, int(capacity))

    def close_day(self) -> bool:
        """记一天；返回当天是否触顶。"""
        hit = self.workload >= self.capacity
        self.days_active += 1
        if hit:
            self.capacity_hits += 1
        return hit


# ================= 请求 =================
@dataclass(frozen=True)
class Request:
    id: int
    day: int
    interval: int

    def global_interval(self, intervals_per_day: int) -> int:
        if not 0 <= self.interval < intervals_per_day:
            raise ValueError(
                f"request {self.id}: interval {self.interval} outside [0, {intervals_per_day})"
            )
        return self.day * intervals_per_day + self.interval


# ================= 观测三元组 =================
@dataclass(frozen=True, eq=False)
class TrialTriple:
    context: np.ndarray
    workload: int
    reward: float

    def __post_init__(self) -> None:
        if self.workload < 0:
            raise ValueError("workload must be non-negative")
        if self.reward < 0:
            raise ValueError("reward must be non-negative")
        object.__setattr__(self, "context", np.asarray(self.context, dtype=float))


# ================= 匹配结果 =================
@dataclass
class MatchResult:
    """
    intervals[i][(r, b)] = 该对在批次 i 的实际效用（指示 𝓜^(i)_{r,b}=1 即 key 存在）。
    改派的对保留 key，效用置 0，并记入 reassigned。
    """
    intervals: Dict[int, Dict[Pair, float]] = field(default_factory=dict)
    reassigned: Set[Tuple[int, int, int]] = field(default_factory=set)

    def add(self, interval: int, request_id: int, broker_id: int, utility: float) -> None:
        batch = self.intervals.setdefault(interval, {})
        for r, b in batch:
            if r == request_id:
                raise InvariantViolation(f"request {request_id} matched twice in interval {interval}")
            if b == broker_id:
                raise InvariantViolation(f"broker {broker_id} matched twice in interval {interval}")
        batch[(request_id, broker_id)] = float(utility)

    def find(self, request_id: int) -> Optional[Tuple[int, int]]:
        """返回该请求最近一次（未被改派的）匹配 (interval, broker_id)。"""
        for interval in sorted(self.intervals, reverse=True):
            for r, b in self.intervals[interval]:
                if r == request_id and (interval, r, b) not in self.reassigned:
                    return interval, b
        return None

    def zero_pair(self, interval: int, request_id: int, broker_id: int) -> None:
        self.intervals[interval][(request_id, broker_id)] = 0.0
        self.reassigned.add((interval, request_id, broker_id))

    def pairs(self) -> Iterator[Tuple[int, int, int]]:
        for interval in sorted(self.intervals):
            for r, b in sorted(self.intervals[interval]):
                yield interval, r, b

    def pair_utilities(self) -> Dict[Pair, float]:
        out: Dict[Pair, float] = {}
        for interval, r, b in self.pairs():
            out[(r, b)] = out.get((r, b), 0.0) + self.intervals[interval][(r, b)]
        return out

    def batch_utility(self, interval: int) -> float:
        batch = self.intervals.get(interval, {})
        return float(sum(batch[k] for k in sorted(batch)))

    def broker_counts(self) -> Dict[int, int]:
        """每个经纪人的有效（未改派）分配次数。"""
        counts: Dict[int, int] = {}
        for interval, r, b in self.pairs():
            if (interval, r, b) in self.reassigned:
                continue
            counts[b] = counts.get(b, 0) + 1
        return counts

    def merge(self, other: "MatchResult") -> "MatchResult":
        overlap = set(self.intervals) & set(other.intervals)
        if overlap:
            raise ValueError(f"intervals overlap: {sorted(overlap)}")
        merged = MatchResult(
            intervals={**{i: dict(v) for i, v in self.intervals.items()},
                       **{i: dict(v) for i, v in other.intervals.items()}},
            reassigned=set(self.reassigned) | set(other.reassigned),
        )
        return merged

    def __len__(self) -> int:
        return sum(len(v) for v in self.intervals.values())


# ================= 当日台账 =================
@dataclass
class DayLedger:
    day: int
    capacities: Dict[int, int] = field(default_factory=dict)
    workloads: Dict[int, int] = field(default_factory=dict)
    utilities: Dict[int, float] = field(default_factory=dict)
    pairs: List[Tuple[int, int, int]] = field(default_factory=list)  # (interval, request, broker)

    def assign(self, interval: int, request_id: int, broker_id: int, utility: float) -> None:
        self.pairs.append((interval, request_id, broker_id))
        self.workloads[broker_id] = self.workloads.get(broker_id, 0) + 1
        self.utilities[broker_id] = self.utilities.get(broker_id, 0.0) + float(utility)

    def revoke(self, interval: int, request_id: int, broker_id: int, utility: float) -> None:
        self.pairs.remove((interval, request_id, broker_id))
        self.workloads[broker_id] -= 1
        self.utilities[broker_id] = self.utilities.get(broker_id, 0.0) - float(utility)

    def workload(self, broker_id: int) -> int:
        return self.workloads.get(broker_id, 0)

    def check(self) -> None:
        """台账自洽：工作量 == 当天有效分配数。"""
        counts: Dict[int, int] = {}
        for _, _, b in self.pairs:
            counts[b] = counts.get(b, 0) + 1
        for b, w in self.workloads.items():
            if counts.get(b, 0) != w:
                raise InvariantViolation(
                    f"day {self.day}: broker {b} workload {w} != assigned {counts.get(b, 0)}"
                )


__all__ = ["Pair", "Broker", "Request", "TrialTriple", "MatchResult", "DayLedger"]
