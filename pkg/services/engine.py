# services/engine.py
# -*- coding: utf-8 -*-
"""
分配引擎（一次运行 = 一个策略 × 一个世界 × 一次重复）：

    for day:
        start_day   每个经纪人按当天上下文估计容量 c_b（老虎机 / 固定容量 / 不设限）
        for interval:
            step    待分配请求 = 上一批顺延 + 本批到达；策略出配对；commit 成交
        end_day     日终奖励 s_b = 当天实际效用 / max(1, w_b)，喂给老虎机；记台账

- 成交时按“接单后的工作量”计算实际效用（超负荷会降低签约率）
- 没分到经纪人的请求顺延到下一批（可跨天）；跑完仍未分配的记为 unserved
- reassign：客户申诉换人。该对效用清零、工作量退回，请求带着排除名单回到下一批
"""

from __future__ import annotations

import logging
from collections import deque
from time import perf_counter
from typing import Deque, Dict, List, Mapping, Optional, Sequence, Set

import numpy as np

from core.errors import InvariantViolation, ReassignError, UsageError
from models.config import EngineConfig, Policy, PolicyKind
from models.domain import Broker, DayLedger, MatchResult, TrialTriple
from monitoring.metrics import (
    BATCHES_TOTAL,
    KM_SOLVE_SECONDS,
    REASSIGN_TOTAL,
    ROLLOVER_TOTAL,
    record_latency,
)
from services.bandit import BanditModel, personalize, pretrain_base
from services.cbs import SelectionStats
from services.policies import Assignment, make_strategy
from services.simgen import (
    World,
    expected_reward,
    oracle_best_capacity,
    realized_utility,
    sample_history,
)
from services.value_function import SaturationTracker, ValueTable

log = logging.getLogger("lacb.engine")

# RR 的质量权重回看天数
QUALITY_WINDOW = 7

_STREAM_APPEAL = 7
_STREAM_SAMPLING = 8


class AssignmentEngine:
    def __init__(
        self,
        world: World,
        config: EngineConfig,
        policy: Policy,
        bandits: Optional[Mapping[int, BanditModel]] = None,
        *,
        timing: bool = False,
        rep: int = 0,
    ) -> None:
        if config.intervals_per_day is not None and config.intervals_per_day != world.intervals_per_day:
            raise UsageError(
                f"intervals_per_day={config.intervals_per_day} but the world has {world.intervals_per_day}"
            )
        if policy.uses_bandit:
            if bandits is None:
                raise UsageError(f"policy {policy.name} needs bandit models")
            missing = [b for b in world.broker_ids if b not in bandits]
            if missing:
                raise UsageError(f"no bandit for brokers {missing[:5]}")

        self.world = world
        self.config = config
        self.policy = policy
        self.bandits = bandits
        self.timing = timing
        self.rep = rep
        self.strategy = make_strategy(policy)

        self.brokers: List[Broker] = world.brokers()
        self.value_table = ValueTable(config.cr_max, config.beta, config.gamma)
        self.tracker = SaturationTracker(config.saturation_window)
        self.cbs_stats = SelectionStats()
        self.rng = np.random.default_rng([config.rng_seed, _STREAM_SAMPLING])
        self._appeal_rng = np.random.default_rng([config.rng_seed, _STREAM_APPEAL])

        self.result = MatchResult()
        self.exclusions: Dict[int, Set[int]] = {}
        self.pending: List[int] = []
        self.ledger: Optional[DayLedger] = None
        self.cumulative_utility = 0.0
        self.solve_seconds: List[float] = []
        self.metric_rows: List[dict] = []
        self.ledger_rows: List[dict] = []

        self._contexts: Optional[np.ndarray] = None
        self._quality: Deque[np.ndarray] = deque(maxlen=QUALITY_WINDOW)
        self._last_recorded = -1
        self._saturation: Optional[np.ndarray] = None

    # ---------- 经纪人视图 ----------
    @property
    def intervals_per_day(self) -> int:
        return self.world.intervals_per_day

    def all_ids(self) -> np.ndarray:
        return np.arange(len(self.brokers))

    def available_ids(self) -> np.ndarray:
        """B₊ = {b : w_b < c_b}，升序。"""
        return np.array([b.id for b in self.brokers if b.available], dtype=int)

    def capacities(self) -> Dict[int, int]:
        return {b.id: b.capacity for b in self.brokers}

    def residues(self, ids: np.ndarray) -> np.ndarray:
        return np.fromiter((self.brokers[int(b)].residue for b in ids), dtype=int, count=len(ids))

    def saturation_frequencies(self) -> np.ndarray:
        """当天开始时的触顶频率 f_b（跟踪器只在日终更新）。"""
        if self._saturation is None:
            self._saturation = self.tracker.frequencies(self.all_ids())
        return self._saturation

    def quality_weights(self) -> np.ndarray:
        """近 QUALITY_WINDOW 天每单平均实际效用；从未接单的经纪人取已观测者的均值（都没有时为 1）。"""
        n = len(self.brokers)
        if not self._quality:
            return np.ones(n)
        stacked = np.vstack(list(self._quality))
        seen = ~np.isnan(stacked)
        counts = seen.sum(axis=0)
        sums = np.where(seen, stacked, 0.0).sum(axis=0)
        weights = np.full(n, np.nan)
        np.divide(sums, counts, out=weights, where=counts > 0)
        fallback = float(np.nanmean(weights)) if (counts > 0).any() else 1.0
        return np.where(np.isnan(weights), fallback, weights)

    # ---------- 一天 ----------
    def _capacity_for(self, broker: Broker, context: np.ndarray) -> int:
        kind = self.policy.kind
        if self.policy.uses_bandit:
            bandit = self.bandits[broker.id]
            c = bandit.estimate_capacity(context)
            bandit.update_covariance(bandit.net.gradient(context, c))
            return c
        if kind is PolicyKind.CTOP_K:
            return self.policy.fixed_capacity
        # 不看容量的策略：每批最多一单，上限就是每天的批次数
        return self.intervals_per_day

    def start_day(self, day: int) -> DayLedger:
        self._contexts = self.world.context(day)
        self._saturation = None
        for broker in self.brokers:
            broker.reset_day(self._capacity_for(broker, self._contexts[broker.id]))
        self.ledger = DayLedger(day=day, capacities=self.capacities())
        log.debug("day %s started: policy=%s pending=%s", day, self.policy.name, len(self.pending))
        return self.ledger

    def end_day(self) -> List[dict]:
        if self.ledger is None or self._contexts is None:
            raise InvariantViolation("end_day called before start_day")
        ledger, cfg, gt = self.ledger, self.config, self.world.ground_truth
        rows: List[dict] = []
        per_request = np.full(len(self.brokers), np.nan)
        for broker in self.brokers:
            b, w, c = broker.id, broker.workload, broker.capacity
            if self.policy.capacity_aware and w > c:
                raise InvariantViolation(f"day {ledger.day}: broker {b} workload {w} > capacity {c}")
            day_utility = ledger.utilities.get(b, 0.0)
            reward = float(np.clip(day_utility / max(1, w), 0.0, cfg.reward_max))
            if w > 0:
                per_request[b] = day_utility / w
            self.tracker.record(b, broker.close_day())
            if self.policy.uses_bandit:
                self.bandits[b].observe(TrialTriple(self._contexts[b], w, reward))
            oracle_c, oracle_r = oracle_best_capacity(gt, b, candidates=cfg.candidate_capacities)
            rows.append(
                {
                    "policy": self.policy.name,
                    "rep": self.rep,
                    "broker_id": b,
                    "day": ledger.day,
                    "capacity": c,
                    "workload": w,
                    "day_utility": day_utility,
                    "reward": reward,
                    "oracle_capacity": oracle_c,
                    "reward_at_estimate": expected_reward(gt, b, c),
                    "oracle_reward": oracle_r,
                }
            )
        self._saturation = None
        ledger.check()
        self._quality.append(per_request)
        self.ledger_rows.extend(rows)
        if self.pending:
            log.warning("day %s: %s requests roll into the next day", ledger.day, len(self.pending))
        log.info(
            "day %s closed: policy=%s assigned=%s cumulative=%.4f",
            ledger.day, self.policy.name, len(ledger.pairs), self.cumulative_utility,
        )
        self.ledger = None
        return rows

    # ---------- 一批 ----------
    def commit(self, interval: int, assignments: Sequence[Assignment]) -> float:
        """写入本批成交：实际效用、台账、工作量；价值引导策略同时做 TD 更新。返回本批实际效用和。"""
        if self.ledger is None:
            raise InvariantViolation("commit outside a day")
        gt = self.world.ground_truth
        total = 0.0
        for r, b, u in assignments:
            broker = self.brokers[b]
            w_before = broker.workload
            ru = realized_utility(gt, b, u, w_before + 1)
            self.result.add(interval, r, b, ru)
            self.ledger.assign(interval, r, b, ru)
            broker.workload += 1
            broker.accumulated_utility += ru
            total += ru
            if self.strategy.value_guided:
                cr = broker.capacity - w_before
                self.value_table.td_update(cr, cr - 1, ru)
        return total

    def step(self, interval: int) -> dict:
        queued = set(self.pending)
        pool = self.pending + [r for r in self.world.requests_at(interval) if r not in queued]
        name = self.policy.name
        elapsed = 0.0
        assignments: List[Assignment] = []
        if pool:
            utilities = self.world.utilities(pool)
            start = perf_counter()
            with record_latency(KM_SOLVE_SECONDS, policy=name):
                assignments = self.strategy.assign(self, pool, utilities)
            elapsed = perf_counter() - start
            self.solve_seconds.append(elapsed)
            self.commit(interval, assignments)

        matched = {r for r, _, _ in assignments}
        self.pending = [r for r in pool if r not in matched]
        if self.pending:
            ROLLOVER_TOTAL.inc(len(self.pending), policy=name)

        if self.config.reassign_rate > 0:
            for r, _, _ in assignments:
                if self._appeal_rng.random() < self.config.reassign_rate:
                    self.reassign(r)

        batch_utility = self.result.batch_utility(interval)
        self.cumulative_utility += batch_utility
        self._last_recorded = interval
        BATCHES_TOTAL.inc(policy=name)
        row = {
            "policy": name,
            "rep": self.rep,
            "day": interval // self.intervals_per_day,
            "interval": interval % self.intervals_per_day,
            "requests": len(pool),
            "matched": len(assignments),
            "batch_utility": batch_utility,
            "cumulative_utility": self.cumulative_utility,
            "wallclock_ms": elapsed * 1000.0 if self.timing else None,
        }
        self.metric_rows.append(row)
        log.debug("interval %s: pool=%s matched=%s utility=%.4f", interval, len(pool), len(assignments), batch_utility)
        return row

    # ---------- 改派 ----------
    def reassign(self, request_id: int) -> int:
        """清零该请求当前的配对、退回经纪人当天工作量、排除该经纪人并让请求进入下一批。返回被拒绝的经纪人。"""
        found = self.result.find(request_id)
        if found is None:
            raise ReassignError(f"request {request_id} has no active match to reassign")
        interval, b = found
        u = self.result.intervals[interval][(request_id, b)]
        self.result.zero_pair(interval, request_id, b)
        if interval <= self._last_recorded:
            # 已记账的批次：从累计值里扣掉
            self.cumulative_utility -= u
        if self.ledger is not None and interval // self.intervals_per_day == self.ledger.day:
            self.ledger.revoke(interval, request_id, b, u)
            broker = self.brokers[b]
            broker.workload -= 1
            broker.accumulated_utility -= u
        self.exclusions.setdefault(request_id, set()).add(b)
        if request_id not in self.pending:
            self.pending.append(request_id)
        REASSIGN_TOTAL.inc()
        log.info("request %s reassigned away from broker %s", request_id, b)
        return b

    # ---------- 整次运行 ----------
    def run(self) -> MatchResult:
        ipd = self.intervals_per_day
        log.info(
            "run start: policy=%s rep=%s brokers=%s requests=%s days=%s",
            self.policy.name, self.rep, len(self.brokers), self.world.n_requests, self.world.n_days,
        )
        for day in range(self.world.n_days):
            self.start_day(day)
            for i in range(ipd):
                self.step(day * ipd + i)
            self.end_day()
        if self.pending:
            log.warning("%s requests left unserved (policy=%s)", len(self.pending), self.policy.name)
        log.info("run done: policy=%s total=%.4f", self.policy.name, self.cumulative_utility)
        return self.result

    @property
    def unserved(self) -> int:
        return len(self.pending)


# ================= 老虎机准备 =================
def prepare_bandits(world: World, config: EngineConfig, personalized: bool = True) -> Dict[int, BanditModel]:
    """
    共享基座：在全部经纪人的历史三元组上预训练。
    personalized=True 时每个经纪人各自拷贝并微调最后一层；否则所有经纪人共用同一个对象（AN）。
    """
    base = BanditModel.from_config(config, world.config.feature_dim, seed=config.rng_seed)
    history = sample_history(world, config.history_days, config.candidate_capacities, seed=config.rng_seed)
    pooled = [t for b in sorted(history) for t in history[b]]
    if pooled and config.pretrain_steps > 0:
        pretrain_base(base, pooled, config.pretrain_steps, config.pretrain_lr)
    if not personalized:
        return {b: base for b in world.broker_ids}
    return {
        b: personalize(base, history[b], config.finetune_steps, config.finetune_lr)
        for b in world.broker_ids
    }


def run_policy(
    world: World,
    config: EngineConfig,
    policy: Policy,
    bandits: Optional[Mapping[int, BanditModel]] = None,
    *,
    timing: bool = False,
    rep: int = 0,
) -> AssignmentEngine:
    """按策略跑完整个世界，返回引擎（带结果、指标行、台账行）。"""
    if policy.uses_bandit and bandits is None:
        personalized = policy.kind is not PolicyKind.AN
        bandits = prepare_bandits(world, config, personalized=personalized)
    engine = AssignmentEngine(world, config, policy, bandits, timing=timing, rep=rep)
    engine.run()
    return engine


def run_vfga(world: World, bandits: Mapping[int, BanditModel], config: EngineConfig) -> MatchResult:
    return run_policy(world, config, Policy(kind=PolicyKind.LACB), bandits).result


def run_lacb_opt(world: World, bandits: Mapping[int, BanditModel], config: EngineConfig) -> MatchResult:
    return run_policy(world, config, Policy(kind=PolicyKind.LACB_OPT), bandits).result


def run_baseline(
    policy: Policy,
    world: World,
    config: EngineConfig,
    bandits: Optional[Mapping[int, BanditModel]] = None,
) -> MatchResult:
    if policy.kind in (PolicyKind.LACB, PolicyKind.LACB_OPT):
        raise UsageError(f"{policy.name} is not a baseline; use run_vfga / run_lacb_opt")
    return run_policy(world, config, policy, bandits).result


__all__ = [
    "AssignmentEngine",
    "prepare_bandits",
    "run_policy",
    "run_vfga",
    "run_lacb_opt",
    "run_baseline",
]
