# tests/test_monitoring.py
# -*- coding: utf-8 -*-
"""
进程内指标：计数器、直方图、注册表冲突、Prometheus 文本输出。
"""

from __future__ import annotations

import pytest

from monitoring.metrics import (
    LATENCY_BUCKETS,
    CounterMetric,
    HistogramMetric,
    counter,
    histogram,
    record_latency,
    render_prometheus,
    reset_all,
    write_prometheus,
)

pytestmark = pytest.mark.unit


def setup_module() -> None:
    reset_all()


def test_counter_labels_and_reset():
    c = CounterMetric("t_requests_total", "test", label_names=("policy",))
    c.inc(policy="km")
    c.inc(2, policy="km")
    c.inc(policy="lacb")
    assert c.value(policy="km") == 3.0
    assert c.value(policy="rr") == 0.0
    with pytest.raises(ValueError):
        c.inc(-1, policy="km")
    with pytest.raises(ValueError):
        c.inc(policy="km", day="1")
    c.reset()
    assert c.value(policy="km") == 0.0


def test_histogram_buckets():
    h = HistogramMetric("t_seconds", "test", buckets=(0.1, 1.0))
    for v in (0.05, 0.5, 5.0, float("nan")):
        h.observe(v)
    assert h.count() == 3
    assert h.total() == pytest.approx(5.55)
    lines = h.render()
    assert 't_seconds_bucket{le="0.1"} 1' in lines
    assert 't_seconds_bucket{le="1.0"} 2' in lines
    assert 't_seconds_bucket{le="+Inf"} 3' in lines
    assert "t_seconds_count 3" in lines
    assert HistogramMetric("t_default", "test").buckets == LATENCY_BUCKETS


def test_registry_shares_and_rejects_conflicts():
    a = counter("t_shared_total", "test")
    assert counter("t_shared_total", "again") is a
    with pytest.raises(ValueError):
        histogram("t_shared_total", "test")
    with pytest.raises(ValueError):
        counter("t_shared_total", "test", label_names=("policy",))


def test_record_latency_and_file_output(tmp_path):
    h = histogram("t_solve_seconds", "test", label_names=("policy",))
    with record_latency(h, policy="km"):
        pass
    assert h.count(policy="km") == 1
    assert "# TYPE t_solve_seconds histogram" in render_prometheus()

    path = write_prometheus(tmp_path / "out" / "metrics.prom")
    text = path.read_text(encoding="utf-8")
    assert 't_solve_seconds_count{policy="km"} 1' in text
    assert text.endswith("\n")


def test_label_values_are_escaped():
    c = CounterMetric("t_escape_total", "test", label_names=("name",))
    c.inc(name='a"b')
    assert 't_escape_total{name="a\\"b"} 1.0' in c.render()
