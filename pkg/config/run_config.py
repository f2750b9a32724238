# config/run_config.py
# -*- coding: utf-8 -*-
"""
实验配置文件（扁平 KEY=value，python-dotenv 格式）：

    preset=desk
    n_brokers=200
    sigma=0.015
    candidate_capacities=10,20,30,40,50,60
    lambda=0.001

- 键名与 EngineConfig / WorldConfig 字段同名，大小写不敏感
- 列表值用逗号分隔；none / 空值表示 None
- rng_seed 同时作用于引擎与世界
- 未知键、非法值一律转成 UsageError
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values
from pydantic import ValidationError

from config.settings import settings
from core.errors import StorageError, UsageError
from models.config import EngineConfig, WorldConfig

log = logging.getLogger("lacb.config")

_ENGINE_FIELDS = set(EngineConfig.model_fields)
_WORLD_FIELDS = set(WorldConfig.model_fields)
_SHARED = {"rng_seed"}
# 元组字段：单个值也包成列表
_TUPLE_FIELDS = {
    name
    for model in (EngineConfig, WorldConfig)
    for name, info in model.model_fields.items()
    if isinstance(info.default, tuple)
}


def _parse_value(raw: Optional[str]) -> Any:
    if raw is None:
        return None
    text = raw.strip()
    if text == "" or text.lower() == "none":
        return None
    if "," in text:
        return [p.strip() for p in text.split(",") if p.strip()]
    return text


def split_overrides(values: Mapping[str, Optional[str]]) -> Tuple[Optional[str], Dict[str, Any], Dict[str, Any]]:
    """返回 (preset 名, 引擎覆盖, 世界覆盖)。"""
    preset: Optional[str] = None
    engine: Dict[str, Any] = {}
    world: Dict[str, Any] = {}
    for key, raw in values.items():
        name = key.strip().lower()
        value = _parse_value(raw)
        if name in _TUPLE_FIELDS and isinstance(value, str):
            value = [value]
        if name == "preset":
            preset = value
            continue
        if name == "lambda":
            name = "lam"
        known = False
        if name in _ENGINE_FIELDS:
            engine[name] = value
            known = True
        if name in _WORLD_FIELDS:
            world[name] = value
            known = True
        if not known:
            raise UsageError(f"unknown config key '{key}'")
    # 显式写 none 的字段交给默认值
    engine = {k: v for k, v in engine.items() if v is not None or k == "intervals_per_day"}
    world = {k: v for k, v in world.items() if v is not None or k == "requests_per_batch"}
    return preset, engine, world


def build_configs(
    values: Mapping[str, Optional[str]],
    seed: Optional[int] = None,
) -> Tuple[EngineConfig, WorldConfig]:
    preset, engine, world = split_overrides(values)
    if seed is None and "rng_seed" not in engine:
        seed = settings.DEFAULT_SEED
    if seed is not None:
        for name in _SHARED:
            engine[name] = seed
            world[name] = seed
    try:
        return EngineConfig.from_preset(preset, **engine), WorldConfig(**world)
    except ValidationError as e:
        raise UsageError(f"invalid config: {e}") from e


def load_run_config(path: Optional[str | Path], seed: Optional[int] = None) -> Tuple[EngineConfig, WorldConfig]:
    """path 为 None 时只用预设默认值（加上 seed 覆盖）。"""
    if path is None:
        return build_configs({}, seed)
    p = Path(path)
    if not p.is_file():
        raise StorageError(f"config file not found: {p}")
    values = dotenv_values(p)
    log.info("loaded %s config keys from %s", len(values), p)
    return build_configs(values, seed)


__all__ = ["split_overrides", "build_configs", "load_run_config"]
