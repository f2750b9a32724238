# scripts/speedup_bench.py
# -*- coding: utf-8 -*-
"""
LACB 与 LACB-Opt 的逐批分配耗时对比（同一世界、同一种子）。
用法:
    python scripts/speedup_bench.py --brokers 2000 --sigma 0.01 --batches 20
输出两者的中位批次耗时、提速倍数，以及两者总效用是否一致。
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from config.settings import configure_logging  # noqa: E402
from models.config import EngineConfig, Policy, PolicyKind, WorldConfig  # noqa: E402
from services.engine import run_policy  # noqa: E402
from services.reporting import median_ms  # noqa: E402
from services.simgen import generate_world  # noqa: E402

log = logging.getLogger("lacb.bench")


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Per-batch assignment timing: LACB vs LACB-Opt.")
    parser.add_argument("--brokers", type=int, default=2000)
    parser.add_argument("--sigma", type=float, default=0.01)
    parser.add_argument("--batches", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    return parser.parse_args()


def main() -> int:
    configure_logging("WARNING")
    args = parse_args()
    batch = math.ceil(args.sigma * args.brokers - 1e-9)
    world = generate_world(
        WorldConfig(
            n_brokers=args.brokers,
            n_requests=batch * args.batches,
            n_days=1,
            sigma=args.sigma,
            rng_seed=args.seed,
        )
    )
    # 只比分配步骤：跳过历史预训练
    config = EngineConfig.from_preset(rng_seed=args.seed, pretrain_steps=0, history_days=0, finetune_steps=0)

    full = run_policy(world, config, Policy(kind=PolicyKind.LACB), timing=True)
    pruned = run_policy(world, config, Policy(kind=PolicyKind.LACB_OPT), timing=True)

    full_ms, pruned_ms = median_ms(full.solve_seconds), median_ms(pruned.solve_seconds)
    print(f"brokers={args.brokers} sigma={args.sigma} batch={batch} batches={len(full.solve_seconds)}")
    print(f"lacb     median {full_ms:.3f} ms/batch")
    print(f"lacb_opt median {pruned_ms:.3f} ms/batch")
    print(f"speedup  {full_ms / pruned_ms:.1f}x")
    same = full.cumulative_utility == pruned.cumulative_utility
    print(f"total utility lacb={full.cumulative_utility:.6f} lacb_opt={pruned.cumulative_utility:.6f} equal={same}")
    return 0 if same else 1


if __name__ == "__main__":
    sys.exit(main())
