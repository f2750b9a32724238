# services/bandit.py
# -*- coding: utf-8 -*-
"""
NN-UCB 容量估计（上下文老虎机）：
- CovarianceState：直接维护 D⁻¹（初始 (1/λ)I），Sherman–Morrison 秩一更新；先存低秩因子，秩变大后转为稠密矩阵
- ObservationBuffer：攒满 batch_size 条 (x, w, s) 触发一次训练
- BanditModel：UCB 打分、按 𝒞 取 argmax、协方差更新、观测与梯度下降
- personalize：冻结前 L−1 层，只微调最后一层；协方差重置
- pretrain_base：用所有经纪人的历史三元组训练共享基座
- cumulative_regret / theorem_bound：遗憾与上界的数值检查
- 快照：JSON（version 1），θ 与 D⁻¹ 以 little-endian float64 base64 存储

单个模型的 observe / train_step 需要串行；不同经纪人的模型互不共享状态。
"""

from __future__ import annotations

import base64
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import CovarianceError, StorageError
from models.config import EngineConfig
from models.domain import TrialTriple
from monitoring.metrics import counter
from services.reward_net import RewardNet

log = logging.getLogger("lacb.bandit")

SNAPSHOT_VERSION = 1
RADICAND_TOLERANCE = -1e-12

BANDIT_TRAIN_TOTAL = counter(
    "lacb_bandit_train_total",
    "Gradient-descent steps applied to reward nets.",
)


def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode(data: str, shape: Sequence[int]) -> np.ndarray:
    return np.frombuffer(base64.b64decode(data), dtype="<f8").reshape(tuple(shape)).copy()


# ================= 协方差 =================
class CovarianceState:
    """
    D⁻¹ 的两种存储：
    - 低秩：(1/λ)I − Σ_k v_k v_kᵀ / den_k，每次秩一更新只追加一对 (v, den)，O(k·d) 内存
    - 稠密：秩超过 d / DENSE_RANK_RATIO 后落地为 d×d 矩阵，之后原地秩一更新并对称化
    """

    DENSE_RANK_RATIO = 4

    def __init__(self, dim: int, lam: float) -> None:
        if lam <= 0:
            raise ValueError("lambda must be positive")
        self.dim = int(dim)
        self.lam = float(lam)
        self._inv: Optional[np.ndarray] = None
        self._factors: List[Tuple[np.ndarray, float]] = []
        self.updates = 0

    @property
    def is_dense(self) -> bool:
        return self._inv is not None

    @property
    def inverse(self) -> np.ndarray:
        if self._inv is not None:
            return self._inv
        inv = np.eye(self.dim) / self.lam
        for v, den in self._factors:
            inv -= np.outer(v, v) / den
        return 0.5 * (inv + inv.T)

    def apply(self, g: np.ndarray) -> np.ndarray:
        """D⁻¹ g"""
        if self._inv is not None:
            return self._inv @ g
        out = g / self.lam
        for v, den in self._factors:
            out = out - v * (float(v @ g) / den)
        return out

    def quad(self, g: np.ndarray) -> float:
        """gᵀ D⁻¹ g"""
        g = np.asarray(g, dtype=float)
        return float(g @ self.apply(g))

    def bonus(self, g: np.ndarray) -> float:
        radicand = self.quad(g)
        if radicand < 0:
            if radicand < RADICAND_TOLERANCE:
                raise CovarianceError(f"negative radicand {radicand:.3e}: D⁻¹ lost definiteness")
            radicand = 0.0
        return math.sqrt(radicand)

    def update(self, g: np.ndarray) -> None:
        g = np.asarray(g, dtype=float)
        if g.shape != (self.dim,):
            raise ValueError(f"gradient shape {g.shape} != ({self.dim},)")
        if not np.any(g):
            return
        dg = self.apply(g)
        denom = 1.0 + float(g @ dg)
        if denom <= 0.0:
            raise CovarianceError(f"rank-1 update denominator {denom:.3e} <= 0")
        if self._inv is None:
            self._factors.append((dg, denom))
            if len(self._factors) * self.DENSE_RANK_RATIO >= self.dim:
                self._inv = self.inverse.copy()
                self._factors = []
        else:
            inv = self._inv - np.outer(dg, dg) / denom
            self._inv = 0.5 * (inv + inv.T)
        self.updates += 1

    def reset(self) -> None:
        self._inv = None
        self._factors = []
        self.updates = 0

    def copy(self) -> "CovarianceState":
        out = CovarianceState(self.dim, self.lam)
        out._inv = None if self._inv is None else self._inv.copy()
        out._factors = [(v.copy(), den) for v, den in self._factors]
        out.updates = self.updates
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dim": self.dim,
            "lambda": self.lam,
            "updates": self.updates,
            "inverse": None if self._inv is None else _encode(self._inv),
            "factors": [{"v": _encode(v), "den": den} for v, den in self._factors],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CovarianceState":
        out = cls(int(data["dim"]), float(data["lambda"]))
        if data.get("inverse"):
            out._inv = _decode(data["inverse"], (out.dim, out.dim))
        out._factors = [(_decode(f["v"], (out.dim,)), float(f["den"])) for f in data.get("factors", [])]
        out.updates = int(data.get("updates", 0))
        return out


# ================= 观测缓冲 =================
@dataclass
class ObservationBuffer:
    size: int
    items: List[TrialTriple] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ValueError("buffer size must be at least 1")

    def append(self, triple: TrialTriple) -> bool:
        """追加；返回是否已满。"""
        self.items.append(triple)
        return len(self.items) >= self.size

    def drain(self) -> List[TrialTriple]:
        out, self.items = self.items, []
        return out

    def __len__(self) -> int:
        return len(self.items)


def _stack(trials: Sequence[TrialTriple]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.vstack([t.context for t in trials])
    w = np.array([t.workload for t in trials], dtype=float)
    s = np.array([t.reward for t in trials], dtype=float)
    return x, w, s


# ================= 老虎机 =================
class BanditModel:
    def __init__(
        self,
        net: RewardNet,
        candidates: Sequence[int],
        *,
        alpha: float = 0.001,
        lam: float = 0.001,
        batch_size: int = 16,
        learning_rate: float = 0.01,
        train_steps_per_flush: int = 1,
    ) -> None:
        if not candidates:
            raise ValueError("candidate capacities must be nonempty")
        self.net = net
        self.candidates: Tuple[int, ...] = tuple(int(c) for c in candidates)
        self.alpha = float(alpha)
        self.lam = float(lam)
        self.learning_rate = float(learning_rate)
        self.train_steps_per_flush = int(train_steps_per_flush)
        self.cov = CovarianceState(net.param_count, lam)
        self.buffer = ObservationBuffer(batch_size)
        self.frozen_layers = 0
        self.train_steps = 0

    @classmethod
    def from_config(cls, config: EngineConfig, input_dim: int, seed: int = 0) -> "BanditModel":
        caps = config.candidate_capacities
        net = RewardNet(
            input_dim,
            config.layer_sizes,
            capacity_range=(min(caps), max(caps)),
            init_scale=config.init_scale,
            seed=seed,
        )
        return cls(
            net,
            caps,
            alpha=config.alpha,
            lam=config.lam,
            batch_size=config.batch_size,
            learning_rate=config.learning_rate,
            train_steps_per_flush=config.train_steps_per_flush,
        )

    # ---------- UCB ----------
    def ucb_score(self, context: np.ndarray, capacity: float) -> float:
        s = self.net.forward(context, capacity)
        if self.alpha == 0.0:
            return s
        return s + self.alpha * self.cov.bonus(self.net.gradient(context, capacity))

    def ucb_scores(self, context: np.ndarray) -> np.ndarray:
        s = self.net.forward_many(context, self.candidates)
        if self.alpha == 0.0:
            return s
        grads = self.net.gradients_many(context, self.candidates)
        return s + self.alpha * np.array([self.cov.bonus(g) for g in grads])

    def estimate_capacity(self, context: np.ndarray) -> int:
        # np.argmax 取第一个最大值；𝒞 递增，所以并列时选较小容量
        return self.candidates[int(np.argmax(self.ucb_scores(context)))]

    def update_covariance(self, g: np.ndarray) -> CovarianceState:
        self.cov.update(g)
        return self.cov

    # ---------- 训练 ----------
    def _mask(self) -> np.ndarray:
        mask = np.ones(self.net.param_count)
        offset = 0
        for i, w in enumerate(self.net.weights):
            if i < self.frozen_layers:
                mask[offset: offset + w.size] = 0.0
            offset += w.size
        return mask

    def _descend(
        self,
        trials: Sequence[TrialTriple],
        steps: int,
        lr: float,
        *,
        average: bool = False,
    ) -> Optional[float]:
        if not trials or steps <= 0:
            return None
        x, w, s = _stack(trials)
        mask = self._mask()
        scale = 1.0 / len(trials) if average else 1.0
        first_loss: Optional[float] = None
        for _ in range(steps):
            loss, grad = self.net.loss_and_grad(x, w, s, self.lam)
            if first_loss is None:
                first_loss = loss
            if not np.isfinite(loss):
                log.warning("non-finite training loss (%s trials); step skipped", len(trials))
                break
            self.net.set_flat(self.net.flat() - lr * scale * mask * grad)
            self.train_steps += 1
            BANDIT_TRAIN_TOTAL.inc()
        return first_loss

    def train_step(self, batch: Sequence[TrialTriple]) -> float:
        if not batch:
            raise ValueError("training batch must be nonempty")
        loss = self._descend(batch, self.train_steps_per_flush, self.learning_rate)
        log.debug("train_step n=%s loss=%.6f", len(batch), loss)
        return float(loss)

    def observe(self, triple: TrialTriple) -> Optional[float]:
        if not self.buffer.append(triple):
            return None
        return self.train_step(self.buffer.drain())

    def copy(self) -> "BanditModel":
        out = BanditModel(
            self.net.copy(),
            self.candidates,
            alpha=self.alpha,
            lam=self.lam,
            batch_size=self.buffer.size,
            learning_rate=self.learning_rate,
            train_steps_per_flush=self.train_steps_per_flush,
        )
        out.cov = self.cov.copy()
        out.buffer.items = list(self.buffer.items)
        out.frozen_layers = self.frozen_layers
        out.train_steps = self.train_steps
        return out

    # ---------- 快照 ----------
    def to_snapshot(self) -> Dict[str, Any]:
        return {
            "version": SNAPSHOT_VERSION,
            "net": self.net.to_dict(),
            "candidates": list(self.candidates),
            "alpha": self.alpha,
            "lambda": self.lam,
            "batch_size": self.buffer.size,
            "learning_rate": self.learning_rate,
            "train_steps_per_flush": self.train_steps_per_flush,
            "frozen_layers": self.frozen_layers,
            "train_steps": self.train_steps,
            "cov": self.cov.to_dict(),
            "buffer": [
                {"context": t.context.tolist(), "workload": t.workload, "reward": t.reward}
                for t in self.buffer.items
            ],
        }

    @classmethod
    def from_snapshot(cls, data: Dict[str, Any]) -> "BanditModel":
        if data.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {data.get('version')!r}")
        model = cls(
            RewardNet.from_dict(data["net"]),
            data["candidates"],
            alpha=data["alpha"],
            lam=data["lambda"],
            batch_size=data["batch_size"],
            learning_rate=data["learning_rate"],
            train_steps_per_flush=data["train_steps_per_flush"],
        )
        model.frozen_layers = int(data["frozen_layers"])
        model.train_steps = int(data["train_steps"])
        model.cov = CovarianceState.from_dict(data["cov"])
        model.buffer.items = [
            TrialTriple(np.asarray(t["context"]), int(t["workload"]), float(t["reward"]))
            for t in data["buffer"]
        ]
        return model

    def save_snapshot(self, path: str | Path) -> Path:
        p = Path(path)
        try:
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(json.dumps(self.to_snapshot()), encoding="utf-8")
        except OSError as e:
            raise StorageError(f"cannot write snapshot {p}: {e}") from e
        return p

    @classmethod
    def load_snapshot(cls, path: str | Path) -> "BanditModel":
        p = Path(path)
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except OSError as e:
            raise StorageError(f"cannot read snapshot {p}: {e}") from e
        return cls.from_snapshot(data)


# ================= 函数式入口 =================
def ucb_score(bandit: BanditModel, context: np.ndarray, capacity: float) -> float:
    return bandit.ucb_score(context, capacity)


def estimate_capacity(bandit: BanditModel, context: np.ndarray) -> int:
    return bandit.estimate_capacity(context)


def update_covariance(bandit: BanditModel, g: np.ndarray) -> CovarianceState:
    return bandit.update_covariance(g)


def observe(bandit: BanditModel, triple: TrialTriple) -> Optional[float]:
    return bandit.observe(triple)


def train_step(bandit: BanditModel, batch: Sequence[TrialTriple]) -> float:
    return bandit.train_step(batch)


def pretrain_base(model: BanditModel, trials: Sequence[TrialTriple], steps: int, lr: Optional[float] = None) -> Optional[float]:
    """共享基座在 ∪_b 𝒯_b 上做 steps 次全量梯度下降（按样本数平均）。返回首步损失。"""
    loss = model._descend(trials, steps, model.learning_rate if lr is None else lr, average=True)
    log.info("pretrained base on %s trials, %s steps, loss=%s", len(trials), steps, loss)
    return loss


def personalize(
    base: BanditModel,
    broker_trials: Sequence[TrialTriple],
    steps: int = 100,
    lr: float = 0.01,
) -> BanditModel:
    """冻结前 L−1 层并在该经纪人的历史上微调最后一层；没有历史时原样拷贝（协方差、缓冲都保留）。"""
    if base.net.depth < 2:
        raise ValueError("personalization needs at least two layers")
    model = base.copy()
    if not broker_trials:
        return model
    model.frozen_layers = base.net.depth - 1
    model.cov.reset()
    model.buffer.drain()
    model._descend(broker_trials, steps, lr, average=True)
    return model


def cumulative_regret(
    trials: Iterable[Tuple[Any, float]],
    oracle: Callable[[Any], float],
) -> float:
    return float(sum(oracle(ctx) - float(reward) for ctx, reward in trials))


@dataclass(frozen=True)
class RegretBound:
    n: int
    arm_count: int
    depth: int
    xi: float

    @property
    def value(self) -> float:
        return self.n * self.arm_count * self.xi ** self.depth / math.pi ** (self.depth - 1)

    def holds(self, regret: float) -> bool:
        return regret <= self.value


def theorem_bound(n: int, arm_count: int, net: RewardNet) -> RegretBound:
    return RegretBound(n=int(n), arm_count=int(arm_count), depth=net.depth, xi=net.xi())


__all__ = [
    "CovarianceState",
    "ObservationBuffer",
    "BanditModel",
    "ucb_score",
    "estimate_capacity",
    "update_covariance",
    "observe",
    "train_step",
    "pretrain_base",
    "personalize",
    "cumulative_regret",
    "RegretBound",
    "theorem_bound",
]
