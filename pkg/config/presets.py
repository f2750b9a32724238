# config/presets.py
# -*- coding: utf-8 -*-
"""
引擎参数预设（实验可调）
- desk：桌面规模默认值，奖励网络 input→16→8→1，测试与默认实验都用它
- full：全尺寸 128/64/16 三层隐藏层，d×d 协方差约 9k 维，可跑但慢
- 环境变量覆盖：LACB_PRESET_<FIELD>=value，例如 LACB_PRESET_ALPHA=0.01
- CTop-K 的经验容量按城市画像给出（A/B/C = 45/55/40）

字段与 models/config.py 的 EngineConfig 一一对应；这里只放“默认值”，
校验逻辑统一在 EngineConfig 里做。
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, Tuple

# ---------- 环境变量读取工具 ----------

def _coerce(raw: str, current: Any) -> Any:
    """按预设字段的现有类型解析字符串；解析失败则保持原值。"""
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            return raw.lower() in {"1", "true", "yes", "on"}
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            return tuple(int(p) for p in parts) if parts else current
    except ValueError:
        return current
    return raw


# ---------- 预设 ----------
@dataclass(frozen=True)
class EnginePreset:
    # ===== NN-UCB =====
    alpha: float = 0.001                 # UCB 探索系数
    batch_size: int = 16                 # 观测缓冲区大小
    lam: float = 0.001                   # 正则 λ，D 初始化为 λI
    layer_sizes: Tuple[int, ...] = (16, 8)
    learning_rate: float = 0.01          # 梯度下降步长 η
    train_steps_per_flush: int = 1
    init_scale: float = 0.3              # θ 高斯初始化标准差（太小则输出接近 0，预训练学不动）
    finetune_steps: int = 100            # 个性化微调步数
    finetune_lr: float = 0.05
    pretrain_steps: int = 1000           # 基座模型在历史数据上的训练步数
    pretrain_lr: float = 0.05            # 预训练步长（按样本数平均的梯度）
    history_days: int = 7                # 每个经纪人采样的历史天数

    # ===== 容量候选 𝒞 =====
    candidate_capacities: Tuple[int, ...] = (10, 20, 30, 40, 50, 60)

    # ===== VFGA =====
    beta: float = 0.25                   # TD 学习率
    gamma: float = 0.9                   # 折扣因子
    delta: float = 0.8                   # 触顶频率阈值
    saturation_window: int = 7           # f_b 统计的滚动天数

    # ===== 运行 =====
    reward_max: float = 1.0
    reassign_rate: float = 0.0           # 匹配后客户申诉换人的概率
    ctopk_capacity: int = 45


PRESETS: Dict[str, EnginePreset] = {
    "desk": EnginePreset(),
    "full": EnginePreset(layer_sizes=(128, 64, 16)),
}

# CTop-K 的城市级经验容量
CTOPK_CITY_CAPACITY: Dict[str, int] = {"A": 45, "B": 55, "C": 40}


def load_preset(name: str = "desk") -> EnginePreset:
    """取出命名预设并应用 LACB_PRESET_* 覆盖；未知名称回落到 desk。"""
    base = PRESETS.get((name or "desk").lower(), PRESETS["desk"])
    overrides: Dict[str, Any] = {}
    current = asdict(base)
    for k, v in os.environ.items():
        if not k.startswith("LACB_PRESET_"):
            continue
        field_name = k[len("LACB_PRESET_"):].strip().lower()
        if field_name in current:
            overrides[field_name] = _coerce(v, current[field_name])
    return replace(base, **overrides) if overrides else base


__all__ = ["EnginePreset", "PRESETS", "CTOPK_CITY_CAPACITY", "load_preset"]
