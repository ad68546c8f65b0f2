# 滑动窗口流式维护命令
import json
import os
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from errors import DataValidationError
from index_tree import build_index
from logger import get_logger
from networks import MANIFEST_FILE, VISIT_FILE, Networks, QueryParams, load_networks, load_visits
from precompute import build_offline_bounds
from query_engine import sample_queries
from snapshot import dataset_fingerprint
from temporal import EngineState, TemporalVisitLog, UpdateBatch, UpdateOp, apply_batch, windowed_bipartite

from .base_command import ENGINE_PARAMETERS, Command, engine_config

# 获取日志记录器
logger = get_logger()

DEFAULT_TAU = 30
STREAM_COLUMNS = [
    "batch",
    "t",
    "op",
    "size",
    "data_b",
    "comm_1",
    "comm_b",
    "tree_b",
    "migrations",
    "remaps",
    "community_changes",
    "active_communities",
]


def manifest_tau(data_dir: str) -> Optional[int]:
    path = os.path.join(data_dir, MANIFEST_FILE)
    if not os.path.exists(path):
        return None
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle).get("config", {}).get("tau")


def load_registered_queries(path: str) -> List[QueryParams]:
    with open(path, "r", encoding="utf-8") as handle:
        items = json.load(handle)
    if not isinstance(items, list):
        raise DataValidationError(f"注册查询文件必须是 JSON 数组: {path}")
    return [QueryParams(**item) for item in items]


def warm_start(
    networks: Networks, events: List[Tuple[str, str, int]], warmup: float, tau: int
) -> Tuple[Networks, TemporalVisitLog, List[Tuple[str, str, int]], int]:
    """前 warmup 比例的事件构成初始窗口，其余事件按时间顺序流入"""
    ordered = sorted(events, key=lambda event: (event[2], event[0], event[1]))
    split = int(len(ordered) * warmup)
    warm, rest = ordered[:split], ordered[split:]
    t0 = warm[-1][2] if warm else 0
    log = TemporalVisitLog(warm)
    log.expire(t0, tau)
    return networks.with_bipartite(windowed_bipartite(networks, log, t0, tau)), log, rest, t0


class StreamCommand(Command):
    def __init__(self):
        super().__init__(
            name="stream",
            description="按批次回放 visits.txt 中的访问事件，维护窗口频次、注册社区与索引，输出每批耗时",
            parameters={
                "data_dir": {"type": "str", "description": "数据集目录", "required": True},
                "batch_size": {"type": "int", "description": "每批事件数", "default": 25},
                "tau": {"type": "int", "description": "滑动窗口长度，缺省取 manifest 或 30"},
                "op": {
                    "type": "str",
                    "description": "insertion 只插入；mixed 每个插入批次后跟一个过期批次",
                    "default": "mixed",
                    "choices": ["insertion", "mixed"],
                },
                "warmup": {"type": "float", "description": "作为初始窗口的事件比例", "default": 0.5},
                "register": {"type": "int", "description": "随机注册的默认参数查询数", "default": 5},
                "queries": {"type": "str", "description": "注册查询的 JSON 文件，优先于 --register"},
                "individual": {"type": "bool", "description": "同时测量逐个处理的 Comm_1"},
                "output": {"type": "str", "description": "每批耗时 CSV 输出路径"},
                **ENGINE_PARAMETERS,
            },
        )

    def run(
        self,
        data_dir: str,
        batch_size: int = 25,
        tau: Optional[int] = None,
        op: str = "mixed",
        warmup: float = 0.5,
        register: int = 5,
        queries: Optional[str] = None,
        individual: bool = False,
        output: Optional[str] = None,
        seed: Optional[int] = None,
        sound_only: bool = False,
        disable_lemmas: Optional[str] = None,
    ) -> Dict:
        if batch_size < 1:
            raise DataValidationError(f"批大小必须为正: {batch_size}")
        if not 0.0 <= warmup < 1.0:
            raise DataValidationError(f"warmup 必须在 [0,1) 内: {warmup}")
        config = engine_config(seed=seed, sound_only=sound_only, disable_lemmas=disable_lemmas)
        tau = tau or manifest_tau(data_dir) or DEFAULT_TAU

        visit_path = os.path.join(data_dir, VISIT_FILE)
        if not os.path.exists(visit_path):
            logger.error(f"缺少访问事件文件: {visit_path}")
            raise DataValidationError(f"缺少 {VISIT_FILE}，请使用 gen --horizon 生成带时间戳的数据集")
        fingerprint = dataset_fingerprint(data_dir)
        networks = load_networks(data_dir)
        events = load_visits(visit_path, networks.social, networks.pois)
        networks, log, pending, t0 = warm_start(networks, events, warmup, tau)
        logger.info(f"初始窗口 t={t0}, τ={tau}: {len(log)} 条事件, 待回放 {len(pending)} 条")

        bounds = build_offline_bounds(networks, config)
        bounds.fingerprint = fingerprint
        tree = build_index(networks, bounds, config)
        state = EngineState.create(networks, bounds, tree, config, log)
        if queries:
            registered = load_registered_queries(queries)
        else:
            registered = sample_queries(networks, register, np.random.default_rng([config.seed, 2]))
        for params in registered:
            state.register(params)

        rows = []
        t = t0
        for start in range(0, len(pending), batch_size):
            chunk = pending[start : start + batch_size]
            t = max(t, chunk[-1][2])
            batches = [UpdateBatch(op=UpdateOp.INSERTION, events=chunk, t=t, tau=tau)]
            if op == "mixed":
                stale = state.log.stale(t, tau)
                batches.append(UpdateBatch(op=UpdateOp.DELETION, events=stale, t=t, tau=tau))
            for batch in batches:
                timings = apply_batch(state, batch, measure_individual=individual)
                rows.append({"batch": len(rows), "t": t, **timings.model_dump()})

        frame = pd.DataFrame(rows, columns=STREAM_COLUMNS)
        if output:
            frame.to_csv(output, index=False)
            logger.info(f"批次耗时已写入: {output}")
        means = frame[["data_b", "comm_1", "comm_b", "tree_b"]].mean() if rows else None
        return {
            "batches": len(rows),
            "final_t": t,
            "tau": tau,
            "registered": len(registered),
            "active_communities": sum(c.active for c in state.communities),
            "mean_seconds": {} if means is None else {key: float(value) for key, value in means.items()},
            "output": output,
        }
