# services/simgen.py
# -*- coding: utf-8 -*-
"""
合成世界生成器（环境 + regret 真值）：

- GroundTruth：每个经纪人的真实拐点 κ_b、基础签约率 q_b、超载斜率 ρ_b、典型日需求 D_b
- true_signup_rate：w ≤ κ_b 时为 q_b，之后线性下降 ρ_b/单，不低于 floor；可选带噪声
- realized_utility：成交后平台观测到的效用 u · rate_b(w) / q_b（超载衰减）
- expected_reward / oracle_best_capacity：按容量给出期望奖励并穷举 𝒞 取最优（并列取小）
- World：经纪人特征、请求排期（每批 ⌈σ·|B|⌉ 个）、按需生成的效用矩阵、每日上下文
- sample_history：从真值采样历史三元组，给基座模型预训练
- write_world / load_world：brokers.csv、requests.csv、groundtruth.csv、world.json
  （utilities.csv 仅在 |R|·|B| 不超过 LACB_UTILITY_CSV_MAX_PAIRS 时写出）

默认参数下，w ≤ 40 的平均签约率约 0.20，w > 40 约 0.06；超过 κ_b 后每多一单掉 1%~3%。
所有随机数都来自 np.random.default_rng([seed, stream, ...])，同一 seed 逐字节可复现。
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config.settings import settings
from core.errors import InvariantViolation, SchemaMismatchError, StorageError, WorldConfigError
from models.config import WorldConfig
from models.domain import Broker, Request, TrialTriple

log = logging.getLogger("lacb.simgen")

# 随机数流编号
_STREAM_BROKERS = 0
_STREAM_REQUESTS = 1
_STREAM_UTILITY = 2
_STREAM_CONTEXT = 3
_STREAM_HISTORY = 4

FEATURE_NOISE = 0.05

# 合成数据网格（粗体为默认值）
GRID: Dict[str, Tuple[float, ...]] = {
    "n_brokers": (500, 1000, 2000, 5000, 10000),
    "n_requests": (10_000, 20_000, 50_000, 100_000, 200_000),
    "n_days": (7, 10, 14, 17, 21),
    "sigma": (0.005, 0.01, 0.015, 0.02, 0.05),
}
GRID_DEFAULTS: Dict[str, float] = {"n_brokers": 2000, "n_requests": 50_000, "n_days": 14, "sigma": 0.015}


# ================= 真值 =================
@dataclass(frozen=True, eq=False)
class GroundTruth:
    kappa: np.ndarray
    quality: np.ndarray
    rho: np.ndarray
    demand: np.ndarray
    floor: float = 0.02
    noise_scale: float = 0.02

    def __len__(self) -> int:
        return int(self.kappa.size)


def true_signup_rate(
    gt: GroundTruth,
    broker: int,
    workload: int,
    rng: Optional[np.random.Generator] = None,
) -> float:
    if workload < 0:
        raise ValueError("workload must be non-negative")
    q = float(gt.quality[broker])
    kappa = int(gt.kappa[broker])
    if workload <= kappa:
        rate = q
    else:
        rate = max(gt.floor, q - float(gt.rho[broker]) * (workload - kappa))
    if rng is not None and gt.noise_scale > 0:
        rate = float(np.clip(rate + rng.normal(0.0, gt.noise_scale), 0.0, 1.0))
    return rate


def realized_utility(
    gt: GroundTruth,
    broker: int,
    u: float,
    workload: int,
    rng: Optional[np.random.Generator] = None,
) -> float:
    q = float(gt.quality[broker])
    if q <= 0.0:
        return 0.0
    return float(u) * true_signup_rate(gt, broker, workload, rng) / q


def expected_reward(gt: GroundTruth, broker: int, capacity: int) -> float:
    """容量 c 下一天的期望签约率：只接得下 min(c, D) 单，其余需求流失。"""
    demand = max(1, int(gt.demand[broker]))
    served = min(int(capacity), demand)
    return served / demand * true_signup_rate(gt, broker, served)


def oracle_best_capacity(
    gt: GroundTruth,
    broker: int,
    context: Optional[np.ndarray] = None,
    candidates: Sequence[int] = (10, 20, 30, 40, 50, 60),
) -> Tuple[int, float]:
    # 真值与上下文无关；保留参数以对齐估计接口
    rewards = [expected_reward(gt, broker, c) for c in candidates]
    best = int(np.argmax(rewards))
    return int(candidates[best]), float(rewards[best])


# ================= 世界 =================
def _scale(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi <= lo:
        return np.full(values.shape, 0.5)
    return (values - lo) / (hi - lo)


@dataclass(eq=False)
class World:
    config: WorldConfig
    features: np.ndarray                   # |B| × feature_dim
    ground_truth: GroundTruth
    affinity: np.ndarray                   # a_r
    request_day: np.ndarray
    request_interval: np.ndarray
    intervals_per_day: int
    batch_size: int
    _by_interval: Dict[int, List[int]] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self) -> None:
        for r, (d, i) in enumerate(zip(self.request_day, self.request_interval)):
            self._by_interval.setdefault(int(d) * self.intervals_per_day + int(i), []).append(r)

    @property
    def n_brokers(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_requests(self) -> int:
        return int(self.affinity.size)

    @property
    def n_days(self) -> int:
        return self.config.n_days

    @property
    def broker_ids(self) -> List[int]:
        return list(range(self.n_brokers))

    @property
    def requests(self) -> List[Request]:
        return [
            Request(id=r, day=int(d), interval=int(i))
            for r, (d, i) in enumerate(zip(self.request_day, self.request_interval))
        ]

    def requests_at(self, global_interval: int) -> List[int]:
        return list(self._by_interval.get(global_interval, ()))

    def brokers(self) -> List[Broker]:
        return [Broker(id=b, features=self.features[b].copy()) for b in range(self.n_brokers)]

    def _utility_row(self, request_id: int) -> np.ndarray:
        cfg = self.config
        rng = np.random.default_rng([cfg.rng_seed, _STREAM_UTILITY, int(request_id)])
        eps = rng.normal(0.0, cfg.utility_noise, size=self.n_brokers) if cfg.utility_noise > 0 else 0.0
        return np.clip(self.ground_truth.quality * self.affinity[request_id] + eps, 0.0, 1.0)

    def utilities(self, request_ids: Sequence[int], broker_ids: Optional[Sequence[int]] = None) -> np.ndarray:
        """|request_ids| × |broker_ids| 效用矩阵；同一请求每次取到相同的行。"""
        cols = np.arange(self.n_brokers) if broker_ids is None else np.asarray(broker_ids, dtype=int)
        if len(request_ids) == 0:
            return np.zeros((0, cols.size))
        return np.vstack([self._utility_row(r)[cols] for r in request_ids])

    def utility(self, request_id: int, broker_id: int) -> float:
        return float(self._utility_row(request_id)[broker_id])

    def context(self, day: int) -> np.ndarray:
        """当天每个经纪人的工作状态向量：静态特征 + 按天抖动。负数天为历史数据。"""
        cfg = self.config
        rng = np.random.default_rng([cfg.rng_seed, _STREAM_CONTEXT, abs(int(day)), int(day < 0)])
        if cfg.context_jitter <= 0:
            return self.features.copy()
        return self.features + rng.normal(0.0, cfg.context_jitter, size=self.features.shape)


def generate_world(config: WorldConfig) -> World:
    n, m = config.n_brokers, config.n_requests
    batch = config.batch_size
    if m > 0 and (batch <= 0 or config.n_days < 1):
        raise WorldConfigError(
            f"no batches: sigma*|B|={config.sigma * n:g}, days={config.n_days} with {m} requests"
        )

    rng = np.random.default_rng([config.rng_seed, _STREAM_BROKERS])
    k_lo, k_hi = config.kappa_range
    kappa = rng.integers(k_lo, k_hi + 1, size=n)
    quality = rng.uniform(*config.quality_range, size=n)
    rho = rng.uniform(*config.rho_range, size=n)
    demand = rng.integers(k_lo, 2 * k_hi + 1, size=n)

    features = rng.uniform(0.0, 1.0, size=(n, config.feature_dim))
    features[:, 0] = _scale(kappa.astype(float), k_lo, k_hi) + rng.normal(0.0, FEATURE_NOISE, n)
    features[:, 1] = _scale(quality, *config.quality_range) + rng.normal(0.0, FEATURE_NOISE, n)
    features[:, 2] = _scale(rho, *config.rho_range) + rng.normal(0.0, FEATURE_NOISE, n)

    req_rng = np.random.default_rng([config.rng_seed, _STREAM_REQUESTS])
    affinity = req_rng.uniform(*config.affinity_range, size=m)

    if m > 0:
        per_day = math.ceil(m / config.n_days)
        intervals_per_day = math.ceil(per_day / batch)
        j = np.arange(m)
        day = j // per_day
        interval = (j % per_day) // batch
    else:
        intervals_per_day = 1
        day = np.zeros(0, dtype=int)
        interval = np.zeros(0, dtype=int)

    gt = GroundTruth(
        kappa=kappa,
        quality=quality,
        rho=rho,
        demand=demand,
        floor=config.signup_floor,
        noise_scale=config.noise_scale,
    )
    world = World(
        config=config,
        features=features,
        ground_truth=gt,
        affinity=affinity,
        request_day=day,
        request_interval=interval,
        intervals_per_day=intervals_per_day,
        batch_size=batch,
    )
    log.info(
        "generated world: brokers=%s requests=%s days=%s batch=%s intervals/day=%s",
        n, m, config.n_days, batch, intervals_per_day,
    )
    return world


def sample_history(
    world: World,
    days: int,
    candidates: Sequence[int],
    seed: Optional[int] = None,
) -> Dict[int, List[TrialTriple]]:
    """每个经纪人 days 条历史三元组：工作量取自 𝒞，奖励为带噪声的真实签约率。"""
    rng = np.random.default_rng([world.config.rng_seed if seed is None else seed, _STREAM_HISTORY])
    history: Dict[int, List[TrialTriple]] = {b: [] for b in range(world.n_brokers)}
    for h in range(days):
        ctx = world.context(-(h + 1))
        loads = rng.choice(np.asarray(candidates), size=world.n_brokers)
        for b in range(world.n_brokers):
            w = int(loads[b])
            s = true_signup_rate(world.ground_truth, b, w, rng)
            history[b].append(TrialTriple(ctx[b], w, s))
    return history


# ================= 落盘 / 读取 =================
def _world_meta(world: World) -> dict:
    return {
        "config": world.config.model_dump(mode="json"),
        "intervals_per_day": world.intervals_per_day,
        "batch_size": world.batch_size,
        "code_version": settings.CODE_VERSION,
    }


def write_world(world: World, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "world.json").write_text(json.dumps(_world_meta(world), indent=2, sort_keys=True), encoding="utf-8")

        brokers = pd.DataFrame(world.features, columns=[f"f{i}" for i in range(world.features.shape[1])])
        brokers.insert(0, "id", np.arange(world.n_brokers))
        brokers.to_csv(out / "brokers.csv", index=False)

        pd.DataFrame(
            {"id": np.arange(world.n_requests), "day": world.request_day, "interval": world.request_interval}
        ).to_csv(out / "requests.csv", index=False)

        gt = world.ground_truth
        pd.DataFrame(
            {"broker_id": np.arange(len(gt)), "kappa": gt.kappa, "q": gt.quality, "rho": gt.rho, "demand": gt.demand}
        ).to_csv(out / "groundtruth.csv", index=False)

        pairs = world.n_requests * world.n_brokers
        if 0 < pairs <= settings.UTILITY_CSV_MAX_PAIRS:
            _write_utilities(world, out / "utilities.csv")
        elif pairs > 0:
            log.warning(
                "utilities.csv skipped: %s pairs exceed LACB_UTILITY_CSV_MAX_PAIRS=%s (utilities regenerate from seed)",
                pairs, settings.UTILITY_CSV_MAX_PAIRS,
            )
    except OSError as e:
        raise StorageError(f"cannot write world to {out}: {e}") from e
    log.info("world written to %s", out)
    return out


def _write_utilities(world: World, path: Path) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write("request_id,broker_id,u\n")
        brokers = np.arange(world.n_brokers)
        for r in range(world.n_requests):
            block = pd.DataFrame({"request_id": r, "broker_id": brokers, "u": world.utilities([r])[0]})
            block.to_csv(fh, index=False, header=False)


def load_world(world_dir: str | Path) -> World:
    d = Path(world_dir)
    try:
        meta = json.loads((d / "world.json").read_text(encoding="utf-8"))
        brokers = pd.read_csv(d / "brokers.csv")
    except FileNotFoundError as e:
        raise StorageError(f"world file missing: {e.filename}") from e
    except OSError as e:
        raise StorageError(f"cannot read world from {d}: {e}") from e

    world = generate_world(WorldConfig(**meta["config"]))
    if "id" not in brokers.columns:
        raise SchemaMismatchError(str(d / "brokers.csv"), "id")
    cols = [f"f{i}" for i in range(world.features.shape[1])]
    for col in cols:
        if col not in brokers.columns:
            raise SchemaMismatchError(str(d / "brokers.csv"), col)
    stored = brokers.sort_values("id")[cols].to_numpy(dtype=float)
    if stored.shape != world.features.shape or not np.allclose(stored, world.features, rtol=0.0, atol=1e-9):
        raise InvariantViolation(f"{d / 'brokers.csv'} does not match the world regenerated from world.json")
    return world


__all__ = [
    "GRID",
    "GRID_DEFAULTS",
    "GroundTruth",
    "World",
    "true_signup_rate",
    "realized_utility",
    "expected_reward",
    "oracle_best_capacity",
    "generate_world",
    "sample_history",
    "write_world",
    "load_world",
]
