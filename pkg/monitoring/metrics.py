# -*- coding: utf-8 -*-
"""
进程内的 Prometheus 风格指标（Counter / Histogram）。

引擎的所有埋点集中在这里声明，服务层直接引用常量::

    from monitoring.metrics import BATCHES_TOTAL, KM_SOLVE_SECONDS, record_latency

    with record_latency(KM_SOLVE_SECONDS, policy="lacb"):
        solve(...)
    BATCHES_TOTAL.inc(policy="lacb")

cmd_run 结束时调用 write_prometheus(out_dir / "metrics.prom") 落盘；
测试可用 value() / count() 读数，reset() 清零。
"""

from __future__ import annotations

import math
import threading
from bisect import bisect_right
from contextlib import contextmanager
from pathlib import Path
from time import perf_counter
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple

LabelTuple = Tuple[str, ...]

# KM 单批耗时从亚毫秒到数秒
LATENCY_BUCKETS = (0.0005, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0)


def _escape(value: str) -> str:
    return value.replace("\\", "\\\\").replace("\n", "\\n").replace('"', '\\"')


class _Metric:
    kind = ""

    def __init__(self, name: str, description: str, label_names: Sequence[str] | None = None) -> None:
        self.name = name
        self.description = description or ""
        self.label_names: Tuple[str, ...] = tuple(label_names or ())
        self._lock = threading.Lock()

    def _key(self, labels: Dict[str, str]) -> LabelTuple:
        unknown = set(labels) - set(self.label_names)
        if unknown:
            raise ValueError(f"{self.name}: unknown labels {sorted(unknown)}")
        return tuple(str(labels.get(k, "")) for k in self.label_names)

    def _labels(self, key: LabelTuple, *extra: Tuple[str, str]) -> str:
        pairs = [f'{k}="{_escape(v)}"' for k, v in (*zip(self.label_names, key), *extra)]
        return "{" + ",".join(pairs) + "}" if pairs else ""

    def _header(self) -> List[str]:
        return [f"# HELP {self.name} {self.description}", f"# TYPE {self.name} {self.kind}"]


class CounterMetric(_Metric):
    kind = "counter"

    def __init__(self, name: str, description: str, label_names: Sequence[str] | None = None) -> None:
        super().__init__(name, description, label_names)
        self._samples: Dict[LabelTuple, float] = {}

    def inc(self, amount: float = 1.0, **labels: str) -> None:
        if amount < 0:
            raise ValueError("counter cannot decrease")
        key = self._key(labels)
        with self._lock:
            self._samples[key] = self._samples.get(key, 0.0) + float(amount)

    def value(self, **labels: str) -> float:
        return self._samples.get(self._key(labels), 0.0)

    def reset(self) -> None:
        with self._lock:
            self._samples.clear()

    def render(self) -> List[str]:
        lines = self._header()
        for key, v in sorted(self._samples.items()):
            lines.append(f"{self.name}{self._labels(key)} {v}")
        return lines


class HistogramMetric(_Metric):
    kind = "histogram"

    def __init__(
        self,
        name: str,
        description: str,
        label_names: Sequence[str] | None = None,
        buckets: Iterable[float] | None = None,
    ) -> None:
        super().__init__(name, description, label_names)
        self.buckets: Tuple[float, ...] = tuple(sorted(buckets)) if buckets else LATENCY_BUCKETS
        self._counts: Dict[LabelTuple, List[int]] = {}
        self._sums: Dict[LabelTuple, float] = {}

    def observe(self, value: float, **labels: str) -> None:
        if math.isnan(value):
            return
        key = self._key(labels)
        with self._lock:
            counts = self._counts.setdefault(key, [0] * (len(self.buckets) + 1))  # 末格为 +Inf
            counts[bisect_right(self.buckets, value)] += 1
            self._sums[key] = self._sums.get(key, 0.0) + float(value)

    def count(self, **labels: str) -> int:
        return sum(self._counts.get(self._key(labels), ()))

    def total(self, **labels: str) -> float:
        return self._sums.get(self._key(labels), 0.0)

    def reset(self) -> None:
        with self._lock:
            self._counts.clear()
            self._sums.clear()

    def render(self) -> List[str]:
        lines = self._header()
        for key, counts in sorted(self._counts.items()):
            running = 0
            for bound, n in zip((*self.buckets, "+Inf"), counts):
                running += n
                lines.append(f"{self.name}_bucket{self._labels(key, ('le', str(bound)))} {running}")
            lines.append(f"{self.name}_count{self._labels(key)} {running}")
            lines.append(f"{self.name}_sum{self._labels(key)} {self._sums[key]}")
        return lines


class MetricRegistry:
    """同名指标共享实例；标签集合不同视为冲突。"""

    def __init__(self) -> None:
        self._metrics: Dict[str, _Metric] = {}
        self._lock = threading.Lock()

    def _get(self, cls, name: str, description: str, label_names, **kwargs) -> _Metric:
        with self._lock:
            existing = self._metrics.get(name)
            if existing is not None:
                if not isinstance(existing, cls) or existing.label_names != tuple(label_names or ()):
                    raise ValueError(f"metric {name} already registered differently")
                return existing
            metric = cls(name, description, label_names, **kwargs)
            self._metrics[name] = metric
            return metric

    def counter(self, name: str, description: str, label_names: Sequence[str] | None = None) -> CounterMetric:
        return self._get(CounterMetric, name, description, label_names)  # type: ignore[return-value]

    def histogram(
        self,
        name: str,
        description: str,
        label_names: Sequence[str] | None = None,
        buckets: Iterable[float] | None = None,
    ) -> HistogramMetric:
        return self._get(HistogramMetric, name, description, label_names, buckets=buckets)  # type: ignore[return-value]

    def __iter__(self) -> Iterator[_Metric]:
        return iter(sorted(self._metrics.values(), key=lambda m: m.name))

    def render_prometheus(self) -> List[str]:
        lines: List[str] = []
        for metric in self:
            lines.extend(metric.render())  # type: ignore[attr-defined]
        return lines

    def reset(self) -> None:
        for metric in self:
            metric.reset()  # type: ignore[attr-defined]


_REGISTRY = MetricRegistry()


def counter(name: str, description: str, label_names: Sequence[str] | None = None) -> CounterMetric:
    return _REGISTRY.counter(name, description, label_names)


def histogram(
    name: str,
    description: str,
    label_names: Sequence[str] | None = None,
    buckets: Iterable[float] | None = None,
) -> HistogramMetric:
    return _REGISTRY.histogram(name, description, label_names, buckets=buckets)


def render_prometheus() -> List[str]:
    return _REGISTRY.render_prometheus()


def write_prometheus(path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text("\n".join(render_prometheus()) + "\n", encoding="utf-8")
    return p


def reset_all() -> None:
    _REGISTRY.reset()


@contextmanager
def record_latency(metric: HistogramMetric, **labels: str):
    start = perf_counter()
    try:
        yield
    finally:
        metric.observe(perf_counter() - start, **labels)


# ---- 引擎埋点 ----
BATCHES_TOTAL = counter("lacb_batches_total", "Batches assigned.", label_names=("policy",))
KM_SOLVE_SECONDS = histogram(
    "lacb_km_solve_seconds", "Per-batch assignment solve time.", label_names=("policy",)
)
ROLLOVER_TOTAL = counter(
    "lacb_rollover_total", "Requests carried to the next interval.", label_names=("policy",)
)
REASSIGN_TOTAL = counter("lacb_reassign_total", "Client appeals that re-entered the pool.")


__all__ = [
    "CounterMetric",
    "HistogramMetric",
    "counter",
    "histogram",
    "record_latency",
    "render_prometheus",
    "write_prometheus",
    "reset_all",
    "BATCHES_TOTAL",
    "KM_SOLVE_SECONDS",
    "ROLLOVER_TOTAL",
    "REASSIGN_TOTAL",
]
