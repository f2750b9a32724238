# services/reward_net.py
# -*- coding: utf-8 -*-
"""
奖励网络 S_θ(x, c)：无偏置的全连接 MLP，层间 ReLU，输出标量。

    S_θ(x, c) = W_L · relu(W_{L-1} · … relu(W_1 · [x; c̃]))

- c̃ 为容量的 min-max 归一化值（capacity_range 为空时直接使用原值）
- θ 按 W_1, …, W_L 依次行优先展平；gradient() 与 flat() 顺序一致
- loss_and_grad：批量前向/反向，𝓛(θ) = Σ(S − s)² + λ‖θ‖²
- spectral_norm：幂迭代求最大奇异值（regret 上界检查用）
"""

from __future__ import annotations

import base64
import hashlib
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import DimensionMismatchError

POWER_ITERATIONS = 50
POWER_TOLERANCE = 1e-9


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


class RewardNet:
    def __init__(
        self,
        input_dim: int,
        hidden: Sequence[int] = (16, 8),
        *,
        capacity_range: Optional[Tuple[float, float]] = None,
        weights: Optional[Sequence[np.ndarray]] = None,
        init_scale: float = 0.1,
        seed: int = 0,
    ) -> None:
        if input_dim < 0:
            raise ValueError("input_dim must be non-negative")
        self.input_dim = int(input_dim)
        self.sizes: Tuple[int, ...] = (self.input_dim + 1, *(int(h) for h in hidden), 1)
        self.capacity_range = tuple(capacity_range) if capacity_range is not None else None
        if weights is None:
            rng = np.random.default_rng(seed)
            self.weights: List[np.ndarray] = [
                rng.normal(0.0, init_scale, size=(n_out, n_in))
                for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:])
            ]
        else:
            self.weights = [np.array(w, dtype=float) for w in weights]
            self._check_shapes()

    # ---------- 形状 / 参数 ----------
    def _check_shapes(self) -> None:
        expected = [(o, i) for i, o in zip(self.sizes[:-1], self.sizes[1:])]
        got = [w.shape for w in self.weights]
        if got != expected:
            raise DimensionMismatchError(f"layer shapes {got} do not chain as {expected}")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def param_count(self) -> int:
        return int(sum(w.size for w in self.weights))

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights])

    def set_flat(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.param_count:
            raise DimensionMismatchError(f"theta has {theta.size} entries, expected {self.param_count}")
        offset = 0
        for i, w in enumerate(self.weights):
            self.weights[i] = theta[offset: offset + w.size].reshape(w.shape).copy()
            offset += w.size

    def copy(self) -> "RewardNet":
        return RewardNet(
            self.input_dim,
            self.sizes[1:-1],
            capacity_range=self.capacity_range,
            weights=[w.copy() for w in self.weights],
        )

    def layer_digest(self, index: int) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.weights[index]).tobytes()).hexdigest()

    # ---------- 输入 ----------
    def normalize_capacity(self, capacity: float) -> float:
        if self.capacity_range is None:
            return float(capacity)
        lo, hi = self.capacity_range
        if hi <= lo:
            return 0.0
        return (float(capacity) - lo) / (hi - lo)

    def _inputs(self, contexts: np.ndarray, capacities: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(contexts, dtype=float))
        if x.shape[1] != self.input_dim:
            raise DimensionMismatchError(
                f"context has {x.shape[1]} features, net expects {self.input_dim}"
            )
        c = np.array([self.normalize_capacity(v) for v in np.atleast_1d(capacities)], dtype=float)
        return np.hstack([x, c[:, None]])

    # ---------- 前向 / 反向 ----------
    def _forward_batch(self, a0: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
        activations = [a0]
        pre: List[np.ndarray] = []
        a = a0
        for w in self.weights[:-1]:
            z = a @ w.T
            pre.append(z)
            a = _relu(z)
            activations.append(a)
        out = (a @ self.weights[-1].T)[:, 0]
        return out, activations, pre

    def _backward_batch(
        self, d_out: np.ndarray, activations: List[np.ndarray], pre: List[np.ndarray]
    ) -> np.ndarray:
        grads: List[np.ndarray] = [np.empty(0)] * self.depth
        delta = d_out[:, None]                       # n × 1
        for layer in range(self.depth - 1, -1, -1):
            grads[layer] = delta.T @ activations[layer]
            if layer > 0:
                delta = (delta @ self.weights[layer]) * (pre[layer - 1] > 0)
        return np.concatenate([g.ravel() for g in grads])

    def forward(self, context: np.ndarray, capacity: float) -> float:
        out, _, _ = self._forward_batch(self._inputs(context, capacity))
        return float(out[0])

    def forward_many(self, context: np.ndarray, capacities: Sequence[float]) -> np.ndarray:
        """同一上下文、多个候选容量的输出。"""
        caps = np.asarray(capacities, dtype=float)
        x = np.repeat(np.atleast_2d(np.asarray(context, dtype=float)), caps.size, axis=0)
        out, _, _ = self._forward_batch(self._inputs(x, caps))
        return out

    def gradient(self, context: np.ndarray, capacity: float) -> np.ndarray:
        _, acts, pre = self._forward_batch(self._inputs(context, capacity))
        return self._backward_batch(np.ones(1), acts, pre)

    def gradients_many(self, context: np.ndarray, capacities: Sequence[float]) -> np.ndarray:
        """每个候选容量一行梯度（|𝒞| × d）。"""
        return np.vstack([self.gradient(context, c) for c in capacities])

    def loss_and_grad(
        self,
        contexts: np.ndarray,
        workloads: Sequence[float],
        rewards: Sequence[float],
        lam: float,
    ) -> Tuple[float, np.ndarray]:
        out, acts, pre = self._forward_batch(self._inputs(contexts, np.asarray(workloads, dtype=float)))
        resid = out - np.asarray(rewards, dtype=float)
        theta = self.flat()
        loss = float(resid @ resid + lam * theta @ theta)
        grad = self._backward_batch(2.0 * resid, acts, pre) + 2.0 * lam * theta
        return loss, grad

    # ---------- 谱范数 ----------
    def spectral_norms(self) -> List[float]:
        return [spectral_norm(w) for w in self.weights]

    def xi(self) -> float:
        return max(self.spectral_norms())

    # ---------- 序列化 ----------
    def to_dict(self) -> Dict[str, Any]:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.sizes[1:-1]),
            "capacity_range": list(self.capacity_range) if self.capacity_range else None,
            "weights": [
                {
                    "shape": list(w.shape),
                    "data": base64.b64encode(np.ascontiguousarray(w, dtype="<f8").tobytes()).decode("ascii"),
                }
                for w in self.weights
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RewardNet":
        weights = [
            np.frombuffer(base64.b64decode(item["data"]), dtype="<f8").reshape(item["shape"]).copy()
            for item in data["weights"]
        ]
        cr = data.get("capacity_range")
        return cls(
            int(data["input_dim"]),
            tuple(data["hidden"]),
            capacity_range=tuple(cr) if cr else None,
            weights=weights,
        )


def spectral_norm(
    matrix: np.ndarray,
    iterations: int = POWER_ITERATIONS,
    tol: float = POWER_TOLERANCE,
) -> float:
    """最大奇异值：对 AᵀA 做幂迭代。"""
    a = np.asarray(matrix, dtype=float)
    if a.size == 0 or not np.any(a):
        return 0.0
    v = np.random.default_rng(0).standard_normal(a.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iterations):
        w = a.T @ (a @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        new_sigma = float(np.linalg.norm(a @ v))
        if abs(new_sigma - sigma) <= tol * max(1.0, new_sigma):
            sigma = new_sigma
            break
        sigma = new_sigma
    return sigma


# 与模块级操作同名的函数式入口
def forward(net: RewardNet, context: np.ndarray, capacity: float) -> float:
    return net.forward(context, capacity)


def gradient(net: RewardNet, context: np.ndarray, capacity: float) -> np.ndarray:
    return net.gradient(context, capacity)


__all__ = ["RewardNet", "spectral_norm", "forward", "gradient"]
