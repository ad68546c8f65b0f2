"""
参数扫描基准：每次只改变一个参数，其余取默认值，记录耗时、候选数与各引理的剪枝计数。
同时输出剪枝能力分阶段表：按固定阶段顺序累积地应用用户级引理，记录每一阶段后剩余的用户数。
"""

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError, model_validator

from config import EngineConfig
from datagen import GenConfig, generate_networks
from index_tree import build_index
from logger import get_logger
from metrics import RoadDistances
from networks import Networks, QueryParams
from precompute import OfflineBounds, PruneContext, PruneReason, build_offline_bounds, lemma_fires
from query_engine import answer_query, sample_queries
from snapshot import load_engine

from .base_command import ENGINE_PARAMETERS, Command, engine_config, split_list

# 获取日志记录器
logger = get_logger()

SWEEPS = ("k", "d", "keywords", "omega", "pi", "theta", "sigma", "users")
DEFAULT_QUERY = {"k": 3, "d": 3, "keywords": 7, "omega": 0.4, "pi": 0.4, "theta": 0.4, "sigma": 5.0}

STAGE_ORDER = (
    PruneReason.KEYWORD,
    PruneReason.PI,
    PruneReason.OMEGA,
    PruneReason.SOCIAL_DIST,
    PruneReason.SUPPORT,
    PruneReason.SPATIAL_DIST,
    PruneReason.INFLUENCE,
)

BENCH_COLUMNS = (
    [
        "sweep",
        "value",
        "repetition",
        "query",
        "q",
        "status",
        "candidates",
        "users",
        "pois",
        "nodes_visited",
        "refine_mode",
        "filter_ms",
        "refine_ms",
        "total_ms",
    ]
    + [f"user_prune_{reason.value}" for reason in PruneReason]
    + [f"node_prune_{reason.value}" for reason in PruneReason]
)
STAGE_COLUMNS = ["sweep", "value", "repetition", "query", "stage", "lemma", "surviving"]


class BenchPlan(BaseModel):
    sweep: Literal["k", "d", "keywords", "omega", "pi", "theta", "sigma", "users"]
    values: List[float] = Field(..., min_length=1)
    repetitions: int = Field(1, ge=1)
    queries: int = Field(10, ge=1, description="每个参数点的查询数")
    output: str
    data_dir: Optional[str] = None
    distribution: Literal["uniform", "gaussian", "skew"] = "uniform"
    seed: int = 7
    defaults: Dict[str, float] = Field(default_factory=lambda: dict(DEFAULT_QUERY))

    @model_validator(mode="after")
    def _check_source(self) -> "BenchPlan":
        if self.sweep != "users" and not self.data_dir:
            raise ValueError("除 users 扫描外必须提供 data_dir")
        return self

    @property
    def staging_output(self) -> str:
        stem, _ = os.path.splitext(self.output)
        return f"{stem}_staging.csv"


def _scaled_dataset(plan: BenchPlan, users: int, repetition: int) -> Networks:
    """users 扫描时按用户数等比例缩放路网与 POI"""
    cfg = GenConfig(
        seed=plan.seed + repetition,
        users=users,
        distribution=plan.distribution,
        road_vertices=max(100, users * 2 // 3),
        pois=max(50, users // 3),
    )
    networks, _ = generate_networks(cfg)
    return networks


def _engine(plan: BenchPlan, value: float, repetition: int, config: EngineConfig):
    if plan.sweep == "users":
        networks = _scaled_dataset(plan, int(value), repetition)
        bounds = build_offline_bounds(networks, config)
        return networks, bounds, build_index(networks, bounds, config)
    return load_engine(plan.data_dir)


def _swept(sweep: str, value: float):
    return int(value) if sweep in ("k", "d", "keywords", "users") else float(value)


def stage_counts(networks: Networks, bounds: OfflineBounds, params: QueryParams, config: EngineConfig) -> List[int]:
    """[全部用户数, 第 1 阶段后剩余, ..., 第 7 阶段后剩余]"""
    ctx = PruneContext.build(bounds, networks, params, config)
    surviving = sorted(networks.social.users)
    counts = [len(surviving)]
    for reason in STAGE_ORDER:
        surviving = [u for u in surviving if not lemma_fires(reason, u, ctx)]
        counts.append(len(surviving))
    return counts


def run_point(plan: BenchPlan, value: float, repetition: int, config: EngineConfig) -> Tuple[List[dict], List[dict]]:
    """一个参数点的一次重复；在工作进程中运行时各自加载快照"""
    networks, bounds, tree = _engine(plan, value, repetition, config)
    distances = RoadDistances(networks.road, max_sources=config.distance_cache_size)
    fixed = {key: _swept(key, val) for key, val in plan.defaults.items() if key != "keywords"}
    keyword_count = _swept("keywords", value) if plan.sweep == "keywords" else int(plan.defaults["keywords"])
    rng = np.random.default_rng([plan.seed, repetition, 3])
    base_queries = sample_queries(networks, plan.queries, rng, keyword_count, **fixed)

    rows, stages = [], []
    for index, base in enumerate(base_queries):
        row = {column: None for column in BENCH_COLUMNS}
        row.update(sweep=plan.sweep, value=value, repetition=repetition, query=index, q=base.q)
        try:
            params = base
            if plan.sweep not in ("keywords", "users"):
                params = QueryParams(**{**base.model_dump(), plan.sweep: _swept(plan.sweep, value)})
        except ValidationError as e:
            logger.warning(f"跳过不合法的参数点 {plan.sweep}={value}: {e.errors()[0]['msg']}")
            row["status"] = "skipped"
            rows.append(row)
            continue

        result = answer_query(tree, bounds, networks, params, config, verify=False, distances=distances)
        stats = result.stats
        row.update(
            status="ok",
            candidates=stats.candidates,
            users=len(result.answer.users),
            pois=len(result.answer.pois),
            nodes_visited=stats.nodes_visited,
            refine_mode=stats.refine_mode,
            filter_ms=stats.filter_seconds * 1000,
            refine_ms=stats.refine_seconds * 1000,
            total_ms=stats.total_seconds * 1000,
        )
        for reason in PruneReason:
            row[f"user_prune_{reason.value}"] = stats.user_prunes.get(reason.value, 0)
            row[f"node_prune_{reason.value}"] = stats.node_prunes.get(reason.value, 0)
        rows.append(row)

        counts = stage_counts(networks, bounds, params, config)
        labels = ["All"] + [reason.value for reason in STAGE_ORDER]
        for stage, (label, count) in enumerate(zip(labels, counts)):
            stages.append(
                {
                    "sweep": plan.sweep,
                    "value": value,
                    "repetition": repetition,
                    "query": index,
                    "stage": stage,
                    "lemma": label,
                    "surviving": count,
                }
            )
    logger.info(f"参数点 {plan.sweep}={value} 第 {repetition} 次完成: {len(rows)} 个查询")
    return rows, stages


def run_plan(plan: BenchPlan, config: EngineConfig) -> Tuple[pd.DataFrame, pd.DataFrame]:
    jobs = [(value, repetition) for repetition in range(plan.repetitions) for value in plan.values]
    if config.workers > 1 and len(jobs) > 1:
        logger.info(f"使用 {config.workers} 个工作进程运行 {len(jobs)} 个参数点")
        with ProcessPoolExecutor(max_workers=config.workers) as executor:
            results = list(
                executor.map(
                    run_point,
                    [plan] * len(jobs),
                    [value for value, _ in jobs],
                    [repetition for _, repetition in jobs],
                    [config] * len(jobs),
                )
            )
    else:
        results = [run_point(plan, value, repetition, config) for value, repetition in jobs]

    rows = [row for part, _ in results for row in part]
    stages = [row for _, part in results for row in part]
    return pd.DataFrame(rows, columns=BENCH_COLUMNS), pd.DataFrame(stages, columns=STAGE_COLUMNS)


class BenchCommand(Command):
    def __init__(self):
        super().__init__(
            name="bench",
            description="固定其余参数、扫描一个参数，输出查询耗时、候选数与剪枝能力 CSV",
            parameters={
                "sweep": {"type": "str", "description": "扫描的参数", "required": True, "choices": list(SWEEPS)},
                "values": {"type": "list", "description": "扫描取值，逗号分隔", "required": True},
                "output": {"type": "str", "description": "结果 CSV 路径", "required": True},
                "data_dir": {"type": "str", "description": "已完成 precompute 与 build-index 的数据集目录"},
                "repetitions": {"type": "int", "description": "重复次数", "default": 1},
                "queries": {"type": "int", "description": "每个参数点的查询数", "default": 10},
                "distribution": {
                    "type": "str",
                    "description": "users 扫描时生成数据集的分布",
                    "default": "uniform",
                    "choices": ["uniform", "gaussian", "skew"],
                },
                "workers": {"type": "int", "description": "并行进程数（覆盖 KCS_WORKERS）"},
                **ENGINE_PARAMETERS,
            },
        )

    def run(
        self,
        sweep: str,
        values,
        output: str,
        data_dir: Optional[str] = None,
        repetitions: int = 1,
        queries: int = 10,
        distribution: str = "uniform",
        workers: Optional[int] = None,
        seed: Optional[int] = None,
        sound_only: bool = False,
        disable_lemmas: Optional[str] = None,
    ) -> Dict:
        config = engine_config(seed=seed, sound_only=sound_only, disable_lemmas=disable_lemmas, workers=workers)
        plan = BenchPlan(
            sweep=sweep,
            values=[float(value) for value in split_list(values)],
            repetitions=repetitions,
            queries=queries,
            output=output,
            data_dir=data_dir,
            distribution=distribution,
            seed=config.seed,
        )
        logger.info(f"开始基准测试: {plan.sweep} ∈ {plan.values}, 重复 {plan.repetitions} 次")
        frame, staging = run_plan(plan, config)
        directory = os.path.dirname(plan.output)
        if directory:
            os.makedirs(directory, exist_ok=True)
        frame.to_csv(plan.output, index=False)
        staging.to_csv(plan.staging_output, index=False)
        logger.info(f"基准结果已写入: {plan.output}, {plan.staging_output}")

        done = frame[frame["status"] == "ok"]
        mean_candidates = done.groupby("value")["candidates"].mean() if len(done) else pd.Series(dtype=float)
        return {
            "output": plan.output,
            "staging_output": plan.staging_output,
            "rows": len(frame),
            "skipped": int((frame["status"] == "skipped").sum()),
            "mean_candidates": {str(value): float(mean) for value, mean in mean_candidates.items()},
        }
