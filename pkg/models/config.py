# models/config.py
# -*- coding: utf-8 -*-
"""
实验配置模型（pydantic v2）：
- EngineConfig：NN-UCB / VFGA / 运行参数
- WorldConfig：合成世界网格（经纪人数、请求数、天数、σ）
- Policy：策略枚举 + 参数（TOP_K(k)、CTOP_K(k, capacity) 等）
- RunSpec：一次 cmd_run 的输入

所有不变量都在 validator 里检查；ValidationError 由调用方转成 UsageError。
"""

from __future__ import annotations

import enum
import math
import re
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config.presets import EnginePreset, load_preset
from config.settings import settings


# ================= 引擎参数 =================
class EngineConfig(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    alpha: float = Field(default=0.001, ge=0.0)
    batch_size: int = Field(default=16, ge=1)
    lam: float = Field(default=0.001, gt=0.0, alias="lambda")
    beta: float = Field(default=0.25, gt=0.0, le=1.0)
    gamma: float = Field(default=0.9, ge=0.0, le=1.0)
    delta: float = Field(default=0.8, gt=0.0, lt=1.0)
    candidate_capacities: Tuple[int, ...] = (10, 20, 30, 40, 50, 60)
    layer_sizes: Tuple[int, ...] = (16, 8)
    intervals_per_day: Optional[int] = Field(default=None, ge=1)
    rng_seed: int = Field(default=0, ge=0)

    learning_rate: float = Field(default=0.01, gt=0.0)
    train_steps_per_flush: int = Field(default=1, ge=1)
    init_scale: float = Field(default=0.3, gt=0.0)
    finetune_steps: int = Field(default=100, ge=0)
    finetune_lr: float = Field(default=0.05, gt=0.0)
    pretrain_steps: int = Field(default=1000, ge=0)
    pretrain_lr: float = Field(default=0.05, gt=0.0)
    history_days: int = Field(default=7, ge=0)
    saturation_window: int = Field(default=7, ge=1)
    reward_max: float = Field(default=1.0, gt=0.0)
    reassign_rate: float = Field(default=0.0, ge=0.0, le=1.0)
    ctopk_capacity: int = Field(default=45, ge=1)

    @field_validator("candidate_capacities")
    @classmethod
    def _check_candidates(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if not v:
            raise ValueError("candidate_capacities must be nonempty")
        if any(c < 1 for c in v):
            raise ValueError("candidate capacities must be positive")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("candidate_capacities must be strictly increasing")
        return tuple(int(c) for c in v)

    @field_validator("layer_sizes")
    @classmethod
    def _check_layers(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if not v or any(w < 1 for w in v):
            raise ValueError("layer_sizes needs at least one positive hidden width")
        return tuple(int(w) for w in v)

    @property
    def cr_max(self) -> int:
        return max(self.candidate_capacities)

    @classmethod
    def from_preset(cls, name: Optional[str] = None, **overrides) -> "EngineConfig":
        preset: EnginePreset = load_preset(name or settings.PRESET)
        data = {f: getattr(preset, f) for f in preset.__dataclass_fields__}
        data.update(overrides)
        return cls(**data)


# ================= 世界参数 =================
class WorldConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_brokers: int = Field(default=2000, ge=0)
    n_requests: int = Field(default=50000, ge=0)
    n_days: int = Field(default=14, ge=0)
    sigma: float = Field(default=0.015, ge=0.0)
    feature_dim: int = Field(default=18, ge=3)
    rng_seed: int = Field(default=0, ge=0)
    requests_per_batch: Optional[int] = Field(default=None, ge=1)

    # 真值生成参数：w ≤ 40 的平均签约率约 0.20，w > 40 约 0.06（超过拐点后每单掉 1%~3%）
    kappa_range: Tuple[int, int] = (10, 50)
    quality_range: Tuple[float, float] = (0.18, 0.32)
    rho_range: Tuple[float, float] = (0.01, 0.03)
    signup_floor: float = Field(default=0.02, ge=0.0, le=1.0)
    noise_scale: float = Field(default=0.02, ge=0.0)
    affinity_range: Tuple[float, float] = (0.5, 1.5)
    utility_noise: float = Field(default=0.02, ge=0.0)
    context_jitter: float = Field(default=0.02, ge=0.0)

    @model_validator(mode="after")
    def _check_ranges(self) -> "WorldConfig":
        for name in ("kappa_range", "quality_range", "rho_range", "affinity_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: low bound exceeds high bound")
        if self.kappa_range[0] < 1:
            raise ValueError("kappa_range must start at 1 or more")
        q_lo, q_hi = self.quality_range
        if q_lo < 0.0 or q_hi > 1.0:
            raise ValueError("quality_range must lie in [0, 1]")
        if self.rho_range[0] < 0.0:
            raise ValueError("rho_range must be non-negative")
        if self.requests_per_batch is not None and self.n_brokers > 0:
            derived = self.requests_per_batch / self.n_brokers
            if abs(derived - self.sigma) > 1e-9:
                raise ValueError(
                    f"sigma={self.sigma} inconsistent with requests_per_batch/n_brokers={derived}"
                )
        return self

    @property
    def batch_size(self) -> int:
        """每批请求数 ⌈σ·|B|⌉（浮点误差先做 1e-9 容差再取整）。"""
        if self.requests_per_batch is not None:
            return self.requests_per_batch
        raw = self.sigma * self.n_brokers
        return int(math.ceil(raw - 1e-9)) if raw > 0 else 0


# ================= 策略 =================
class PolicyKind(str, enum.Enum):
    LACB = "lacb"
    LACB_OPT = "lacb_opt"
    TOP_K = "topk"
    RR = "rr"
    KM_BATCH = "km"
    CTOP_K = "ctopk"
    AN = "an"


_POLICY_RE = re.compile(r"^(lacb_opt|lacb|topk|rr|km|ctopk|an)(\d+)?$")


class Policy(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: PolicyKind
    k: int = Field(default=1, ge=1)
    fixed_capacity: int = Field(default=45, ge=1)

    @property
    def name(self) -> str:
        if self.kind in (PolicyKind.TOP_K, PolicyKind.CTOP_K):
            return f"{self.kind.value}{self.k}"
        return self.kind.value

    @property
    def capacity_aware(self) -> bool:
        return self.kind in (PolicyKind.LACB, PolicyKind.LACB_OPT, PolicyKind.CTOP_K, PolicyKind.AN)

    @property
    def uses_bandit(self) -> bool:
        return self.kind in (PolicyKind.LACB, PolicyKind.LACB_OPT, PolicyKind.AN)

    @classmethod
    def parse(cls, token: str, fixed_capacity: int = 45) -> "Policy":
        """'topk3' → TOP_K(3)，'ctopk1' → CTOP_K(1, fixed_capacity)，'lacb_opt' → LACB_OPT。"""
        m = _POLICY_RE.match((token or "").strip().lower())
        if not m:
            raise ValueError(f"unknown policy '{token}'")
        kind = PolicyKind(m.group(1))
        k = int(m.group(2)) if m.group(2) else 1
        if m.group(2) and kind not in (PolicyKind.TOP_K, PolicyKind.CTOP_K):
            raise ValueError(f"policy '{kind.value}' takes no k suffix")
        return cls(kind=kind, k=k, fixed_capacity=fixed_capacity)


# ================= 运行规格 =================
class RunSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    world_dir: Optional[str] = None
    world: WorldConfig = Field(default_factory=WorldConfig)
    engine: EngineConfig = Field(default_factory=EngineConfig)
    policies: Tuple[Policy, ...] = ()
    out_dir: str = "runs"
    repetitions: int = Field(default=1, ge=1)
    timing: bool = False

    @field_validator("policies")
    @classmethod
    def _nonempty(cls, v: Tuple[Policy, ...]) -> Tuple[Policy, ...]:
        if not v:
            raise ValueError("at least one policy is required")
        return v


__all__ = ["EngineConfig", "WorldConfig", "PolicyKind", "Policy", "RunSpec"]
