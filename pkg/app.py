# app.py
# -*- coding: utf-8 -*-
"""
实验入口：

    python app.py generate --config exp.env --out worlds/w0
    python app.py run --world worlds/w0 --policies topk1,topk3,rr,km,ctopk3,an,lacb,lacb_opt --timing
    python app.py compare runs/metrics.csv other/metrics.csv
    python app.py sweep --factor sigma --values 0.005,0.01 --policies lacb,lacb_opt

退出码：0 成功，2 用法错误，3 运行中发现不变量被破坏，4 I/O 失败。
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import ValidationError

from config.presets import CTOPK_CITY_CAPACITY
from config.run_config import load_run_config
from config.settings import configure_logging, settings
from core.errors import EXIT_OK, UsageError, guarded
from models.config import Policy, RunSpec, WorldConfig
from monitoring.metrics import write_prometheus
from services.engine import run_policy
from services.reporting import (
    build_manifest,
    format_summary,
    median_ms,
    summarize,
    write_json,
    write_ledger,
    write_metrics,
    write_sweep,
)
from services.simgen import GRID, World, generate_world, load_world, write_world

log = logging.getLogger("lacb.app")

DEFAULT_POLICIES = "topk1,topk3,rr,km,ctopk3,an,lacb,lacb_opt"


# ========================= 参数解析 =========================
def _parse_policies(text: str, fixed_capacity: int) -> List[Policy]:
    tokens = [t for t in (text or "").split(",") if t.strip()]
    try:
        return [Policy.parse(t, fixed_capacity=fixed_capacity) for t in tokens]
    except ValueError as e:
        raise UsageError(str(e)) from e


def _ctopk_capacity(args: argparse.Namespace, default: int) -> int:
    city = getattr(args, "city", None)
    return CTOPK_CITY_CAPACITY[city] if city else default


def _run_spec(args: argparse.Namespace) -> RunSpec:
    engine_cfg, world_cfg = load_run_config(args.config, seed=args.seed)
    try:
        return RunSpec(
            world_dir=args.world,
            world=world_cfg,
            engine=engine_cfg,
            policies=tuple(_parse_policies(args.policies, _ctopk_capacity(args, engine_cfg.ctopk_capacity))),
            out_dir=args.out or settings.OUTPUT_DIR,
            repetitions=args.reps,
            timing=args.timing,
        )
    except ValidationError as e:
        raise UsageError(f"invalid run spec: {e}") from e


def _run_all(
    spec: RunSpec,
    world_for_rep,
) -> tuple[List[dict], List[dict], Dict[str, int]]:
    metric_rows: List[dict] = []
    ledger_rows: List[dict] = []
    unserved: Dict[str, int] = {}
    for rep in range(spec.repetitions):
        engine_cfg = spec.engine.model_copy(update={"rng_seed": spec.engine.rng_seed + rep})
        world: World = world_for_rep(rep)
        for policy in spec.policies:
            engine = run_policy(world, engine_cfg, policy, timing=spec.timing, rep=rep)
            metric_rows.extend(engine.metric_rows)
            ledger_rows.extend(engine.ledger_rows)
            unserved[f"{policy.name}/{rep}"] = engine.unserved
    return metric_rows, ledger_rows, unserved


# ========================= 命令 =========================
@guarded
def cmd_generate(args: argparse.Namespace) -> int:
    _, world_cfg = load_run_config(args.config, seed=args.seed)
    out = Path(args.out or Path(settings.OUTPUT_DIR) / "world")
    write_world(generate_world(world_cfg), out)
    print(f"world written to {out}")
    return EXIT_OK


@guarded
def cmd_run(args: argparse.Namespace) -> int:
    spec = _run_spec(args)
    out = Path(spec.out_dir)
    fixed: Optional[World] = load_world(spec.world_dir) if spec.world_dir else None
    world_cfg = fixed.config if fixed is not None else spec.world

    def world_for_rep(rep: int) -> World:
        if fixed is not None:
            return fixed
        return generate_world(world_cfg.model_copy(update={"rng_seed": spec.world.rng_seed + rep}))

    metric_rows, ledger_rows, unserved = _run_all(spec, world_for_rep)
    write_metrics(metric_rows, out / "metrics.csv")
    write_ledger(ledger_rows, out / "ledger.csv")
    write_json(
        build_manifest(
            engine_config=spec.engine,
            world_config=world_cfg,
            policies=[p.name for p in spec.policies],
            repetitions=spec.repetitions,
            timing=spec.timing,
            code_version=settings.CODE_VERSION,
            world_dir=spec.world_dir,
            unserved=unserved,
        ),
        out / "manifest.json",
    )
    write_prometheus(out / "metrics.prom")
    print(f"run written to {out}")
    return EXIT_OK


@guarded
def cmd_compare(args: argparse.Namespace) -> int:
    summary = summarize(args.metrics)
    if args.out:
        write_json(summary, args.out)
    print(format_summary(summary))
    return EXIT_OK


@guarded
def cmd_sweep(args: argparse.Namespace) -> int:
    if args.factor not in GRID:
        raise UsageError(f"unknown sweep factor '{args.factor}' (choose from {', '.join(GRID)})")
    engine_cfg, world_cfg = load_run_config(args.config, seed=args.seed)
    values = [float(v) for v in args.values.split(",")] if args.values else list(GRID[args.factor])
    policies = _parse_policies(args.policies, _ctopk_capacity(args, engine_cfg.ctopk_capacity))
    out = Path(args.out or Path(settings.OUTPUT_DIR) / "sweep")

    sweep_rows: List[dict] = []
    for value in values:
        typed = value if args.factor == "sigma" else int(value)
        try:
            cfg = WorldConfig(**{**world_cfg.model_dump(), args.factor: typed})
        except ValidationError as e:
            raise UsageError(f"{args.factor}={typed}: {e}") from e
        world = generate_world(cfg)
        run_dir = out / f"{args.factor}={typed}"
        metric_rows: List[dict] = []
        for policy in policies:
            engine = run_policy(world, engine_cfg, policy, timing=args.timing)
            metric_rows.extend(engine.metric_rows)
            sweep_rows.append(
                {
                    "factor": args.factor,
                    "value": typed,
                    "policy": policy.name,
                    "total_utility": engine.cumulative_utility,
                    "mean_batch_ms": median_ms(engine.solve_seconds) if args.timing else None,
                }
            )
        write_metrics(metric_rows, run_dir / "metrics.csv")
    write_sweep(sweep_rows, out / "sweep.csv")
    print(f"sweep written to {out}")
    return EXIT_OK


# ========================= 入口 =========================
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lacb", description="Capacity-aware broker assignment experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat KEY=value config file")
        p.add_argument("--seed", type=int, default=None, help="seed for world and engine")
        p.add_argument("--out", help="output directory")

    def city(p: argparse.ArgumentParser) -> None:
        p.add_argument("--city", choices=sorted(CTOPK_CITY_CAPACITY), help="use the city capacity for ctopk")

    p = sub.add_parser("generate", help="generate a synthetic world")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="run policies over a world")
    common(p)
    p.add_argument("--world", help="world directory written by generate")
    p.add_argument("--policies", default=DEFAULT_POLICIES)
    city(p)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--timing", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="summarize metrics files")
    p.add_argument("metrics", nargs="+")
    p.add_argument("--out", help="write the JSON summary here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="vary one grid factor")
    common(p)
    p.add_argument("--factor", required=True)
    p.add_argument("--values", help="comma-separated values (default: the full grid)")
    p.add_argument("--policies", default="lacb,lacb_opt")
    city(p)
    p.add_argument("--timing", action="store_true")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
