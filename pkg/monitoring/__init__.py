# -*- coding: utf-8 -*-
"""
Monitoring utilities package.
Prometheus-style counters and histograms for the assignment engine.
"""
