# services/value_function.py
# -*- coding: utf-8 -*-
"""
容量感知的价值函数：
- ValueTable：以剩余容量 cr ∈ [0, cr_max] 为状态的表格型 V；所有经纪人共用一张表
- td_update：V(cr) ← V(cr) + β[u + γV(cr′) − V(cr)]，只对本批次实际成交的经纪人调用
- refine_utility：触顶频率 f_b > δ 的经纪人，效用改写为 u + γV(cr−1) − V(cr)
- SaturationTracker：滚动窗口（默认 7 天）内的触顶天数 / 观测天数

cr 超出 [0, cr_max] 时截断；V 与时间无关（同一次运行内平稳）。
"""

from __future__ import annotations

import logging
from collections import deque
from pathlib import Path
from typing import Deque, Dict

import numpy as np
import pandas as pd

from core.errors import SchemaMismatchError, StorageError, TemporalOrderError

log = logging.getLogger("lacb.valuefn")


class ValueTable:
    def __init__(self, cr_max: int, beta: float = 0.25, gamma: float = 0.9) -> None:
        if cr_max < 0:
            raise ValueError("cr_max must be non-negative")
        if not 0.0 < beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")
        if not 0.0 <= gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        self.cr_max = int(cr_max)
        self.beta = float(beta)
        self.gamma = float(gamma)
        self.values = np.zeros(self.cr_max + 1)

    def _clamp(self, cr: int) -> int:
        return min(max(int(cr), 0), self.cr_max)

    def __getitem__(self, cr: int) -> float:
        return float(self.values[self._clamp(cr)])

    def __setitem__(self, cr: int, value: float) -> None:
        self.values[self._clamp(cr)] = float(value)

    def td_update(self, cr: int, cr_next: int, u: float) -> float:
        if cr_next > cr:
            raise TemporalOrderError(f"residue cannot grow within a day ({cr} -> {cr_next})")
        if cr_next < 0:
            raise ValueError("residue capacity must be non-negative")
        s, s_next = self._clamp(cr), self._clamp(cr_next)
        target = float(u) + self.gamma * self.values[s_next]
        self.values[s] += self.beta * (target - self.values[s])
        return float(self.values[s])

    def advantage(self, cr: int) -> float:
        """γV(cr−1) − V(cr)：消耗一个单位容量的价值变化。"""
        return self.gamma * self[cr - 1] - self[cr]

    def advantages(self, crs: np.ndarray) -> np.ndarray:
        """advantage 的向量版。"""
        crs = np.asarray(crs, dtype=int)
        here = np.clip(crs, 0, self.cr_max)
        below = np.clip(crs - 1, 0, self.cr_max)
        return self.gamma * self.values[below] - self.values[here]

    def copy(self) -> "ValueTable":
        out = ValueTable(self.cr_max, self.beta, self.gamma)
        out.values = self.values.copy()
        return out

    # ---------- CSV ----------
    def to_csv(self, path: str | Path) -> Path:
        p = Path(path)
        try:
            p.parent.mkdir(parents=True, exist_ok=True)
            pd.DataFrame({"cr": np.arange(self.cr_max + 1), "value": self.values}).to_csv(p, index=False)
        except OSError as e:
            raise StorageError(f"cannot write value table {p}: {e}") from e
        log.info("value table written to %s", p)
        return p

    @classmethod
    def from_csv(cls, path: str | Path, beta: float = 0.25, gamma: float = 0.9) -> "ValueTable":
        p = Path(path)
        try:
            df = pd.read_csv(p)
        except OSError as e:
            raise StorageError(f"cannot read value table {p}: {e}") from e
        for col in ("cr", "value"):
            if col not in df.columns:
                raise SchemaMismatchError(str(p), col)
        table = cls(int(df["cr"].max()) if len(df) else 0, beta, gamma)
        for cr, value in zip(df["cr"], df["value"]):
            table[int(cr)] = float(value)
        return table


def td_update(table: ValueTable, cr: int, cr_next: int, u: float) -> float:
    return table.td_update(cr, cr_next, u)


def refine_utility(u: float, f_b: float, delta: float, table: ValueTable, cr: int) -> float:
    if f_b <= delta:
        return float(u)
    return float(u) + table.advantage(cr)


class SaturationTracker:
    def __init__(self, window: int = 7) -> None:
        if window < 1:
            raise ValueError("window must be at least 1")
        self.window = int(window)
        self._history: Dict[int, Deque[bool]] = {}

    def record(self, broker_id: int, hit: bool) -> None:
        self._history.setdefault(broker_id, deque(maxlen=self.window)).append(bool(hit))

    def frequency(self, broker_id: int) -> float:
        days = self._history.get(broker_id)
        if not days:
            return 0.0
        return sum(days) / len(days)

    def frequencies(self, broker_ids) -> np.ndarray:
        return np.array([self.frequency(int(b)) for b in broker_ids], dtype=float)

    def days(self, broker_id: int) -> int:
        return len(self._history.get(broker_id, ()))


def saturation_frequency(tracker: SaturationTracker, broker_id: int) -> float:
    return tracker.frequency(broker_id)


__all__ = [
    "ValueTable",
    "td_update",
    "refine_utility",
    "SaturationTracker",
    "saturation_frequency",
]
