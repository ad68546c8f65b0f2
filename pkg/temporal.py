"""
滑动窗口下的签到频次与批量维护

一个批次依次完成：
1. 更新窗口频次并重算受影响用户的离线上界（Data_B）
2. 维护已注册查询的社区（逐个处理为 Comm_1，整批处理为 Comm_B）
3. 同步索引：用户迁移、聚合刷新、节点重挂（Tree_B）
"""

import copy
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from config import EngineConfig
from errors import DataValidationError
from index_tree import IndexTree, refresh_aggregates
from logger import get_logger
from metrics import CommunityAnswer, CommunityEvaluator, RoadDistances, verify_community
from networks import BipartiteNetwork, Networks, QueryParams
from precompute import OfflineBounds, recompute_user
from query_engine import Refiner, answer_query
from scores import ScoreModel

# 获取日志记录器
logger = get_logger()

Event = Tuple[str, str, int]


class UpdateOp(str, Enum):
    INSERTION = "insertion"
    DELETION = "deletion"


class UpdateBatch(BaseModel):
    """插入批次携带新访问事件；删除批次丢弃所有早于窗口起点的事件，列出的事件只用于计数与日志"""

    op: UpdateOp
    events: List[Tuple[str, str, int]] = Field(default_factory=list)
    t: int = Field(..., ge=0, description="当前时间")
    tau: int = Field(..., ge=1, description="窗口长度")

    @model_validator(mode="after")
    def _check_times(self) -> "UpdateBatch":
        for u, p, stamp in self.events:
            if stamp < 0:
                raise ValueError(f"时间戳不能为负: ({u},{p},{stamp})")
            if self.op is UpdateOp.INSERTION and stamp > self.t:
                raise ValueError(f"插入事件晚于当前时间: ({u},{p},{stamp}) > {self.t}")
        return self

    @property
    def window_start(self) -> int:
        return self.t - self.tau + 1

    def users(self) -> List[str]:
        return sorted({u for u, _, _ in self.events})


class TemporalVisitLog:
    """每个用户按插入顺序保存 (poi, 时间戳) 事件"""

    def __init__(self, events: Iterable[Event] = ()):
        self._events: Dict[str, List[Tuple[str, int]]] = {}
        for u, p, stamp in events:
            self.add(u, p, stamp)

    def add(self, u: str, p: str, stamp: int) -> None:
        if stamp < 0:
            raise DataValidationError(f"时间戳不能为负: ({u},{p},{stamp})")
        self._events.setdefault(u, []).append((p, int(stamp)))

    def events(self, u: str) -> List[Tuple[str, int]]:
        return list(self._events.get(u, []))

    def users(self) -> List[str]:
        return sorted(self._events)

    def window_frequency(self, u: str, p: str, t: int, tau: int) -> int:
        start = t - tau + 1
        return sum(1 for poi, stamp in self._events.get(u, ()) if poi == p and start <= stamp <= t)

    def window_frequencies(self, t: int, tau: int) -> Dict[Tuple[str, str], int]:
        start = t - tau + 1
        counts: Dict[Tuple[str, str], int] = {}
        for u, events in self._events.items():
            for p, stamp in events:
                if start <= stamp <= t:
                    counts[(u, p)] = counts.get((u, p), 0) + 1
        return counts

    def stale(self, t: int, tau: int) -> List[Event]:
        """早于窗口起点的事件，按时间戳排序"""
        start = t - tau + 1
        found = [(stamp, u, p) for u, events in self._events.items() for p, stamp in events if stamp < start]
        return [(u, p, stamp) for stamp, u, p in sorted(found)]

    def expire(self, t: int, tau: int, users: Optional[Iterable[str]] = None) -> Set[Tuple[str, str]]:
        """丢弃早于窗口起点的事件，返回受影响的 (u, p)"""
        start = t - tau + 1
        affected: Set[Tuple[str, str]] = set()
        for u in sorted(self._events) if users is None else sorted(set(users)):
            kept = []
            for p, stamp in self._events.get(u, ()):
                if stamp < start:
                    affected.add((u, p))
                else:
                    kept.append((p, stamp))
            if u in self._events:
                self._events[u] = kept
        return affected

    def __len__(self) -> int:
        return sum(len(events) for events in self._events.values())


def window_frequency(log: TemporalVisitLog, u: str, p: str, t: int, tau: int) -> int:
    if tau < 1:
        raise DataValidationError(f"窗口长度必须至少为 1: {tau}")
    return log.window_frequency(u, p, t, tau)


def windowed_bipartite(networks: Networks, log: TemporalVisitLog, t: int, tau: int) -> BipartiteNetwork:
    """由访问日志在时刻 t 的窗口频次构造签到二部图"""
    return BipartiteNetwork(networks.social.users, list(networks.pois), log.window_frequencies(t, tau))


# ---------------------------------------------------------------- 状态


@dataclass
class RegisteredCommunity:
    params: QueryParams
    answer: CommunityAnswer
    active: bool = True


@dataclass
class EngineState:
    """一次流式会话的全部可变状态，同一时刻只允许一个批次写入"""

    networks: Networks
    bounds: OfflineBounds
    tree: IndexTree
    config: EngineConfig
    model: ScoreModel
    log: TemporalVisitLog = field(default_factory=TemporalVisitLog)
    communities: List[RegisteredCommunity] = field(default_factory=list)
    distances: Optional[RoadDistances] = None

    @classmethod
    def create(
        cls,
        networks: Networks,
        bounds: OfflineBounds,
        tree: IndexTree,
        config: EngineConfig,
        log: Optional[TemporalVisitLog] = None,
    ) -> "EngineState":
        distances = RoadDistances(networks.road, max_sources=config.distance_cache_size)
        model = ScoreModel(networks, bounds, tree.weights, distances=distances)
        return cls(
            networks=networks,
            bounds=bounds,
            tree=tree,
            config=config,
            model=model,
            log=log or TemporalVisitLog(),
            distances=distances,
        )

    def register(self, params: QueryParams) -> RegisteredCommunity:
        result = answer_query(
            self.tree, self.bounds, self.networks, params, self.config, verify=False, distances=self.distances
        )
        community = RegisteredCommunity(params=params, answer=result.answer, active=not result.answer.is_empty)
        self.communities.append(community)
        logger.info(f"注册查询 q={params.q}: 社区 {len(result.answer.users)} 个用户")
        return community


class BatchTimings(BaseModel):
    op: str
    size: int
    data_b: float = 0.0
    comm_1: float = 0.0
    comm_b: float = 0.0
    tree_b: float = 0.0
    migrations: int = 0
    remaps: int = 0
    community_changes: int = 0
    active_communities: int = 0


# ---------------------------------------------------------------- 频次


def apply_frequency_updates(state: EngineState, batch: UpdateBatch) -> Tuple[Set[str], Set[str]]:
    """更新窗口频次；返回 (受影响用户, 出现新签到位置的用户)"""
    networks = state.networks
    bipartite = networks.bipartite
    for u, p, _ in batch.events:
        networks.social.require(u)
        if p not in networks.pois:
            logger.error(f"更新批次引用了不存在的 POI: {p}")
            raise DataValidationError(f"未知 POI: {p}")

    affected: Set[str] = set()
    new_locations: Set[str] = set()
    if batch.op is UpdateOp.INSERTION:
        for u, p, stamp in batch.events:
            state.log.add(u, p, stamp)
            if batch.window_start <= stamp <= batch.t:
                if bipartite.frequency(u, p) == 0:
                    new_locations.add(u)
                bipartite.add_frequency(u, p, 1)
                affected.add(u)
    else:
        for u, p in sorted(state.log.expire(batch.t, batch.tau)):
            bipartite.set_frequency(u, p, state.log.window_frequency(u, p, batch.t, batch.tau))
            affected.add(u)

    for u in sorted(affected):
        recompute_user(state.bounds, networks, u)
    state.model.refresh(state.bounds)
    return affected, new_locations


# ---------------------------------------------------------------- 社区维护


def _refine(state: EngineState, params: QueryParams, users: Iterable[str]) -> CommunityAnswer:
    evaluator = CommunityEvaluator(state.networks, params, distances=state.distances)
    return Refiner(evaluator, state.config).refine(users)


def _update_community(
    state: EngineState,
    community: RegisteredCommunity,
    op: UpdateOp,
    users: Iterable[str],
    new_locations: Set[str],
) -> bool:
    """处理一组受影响用户，返回社区是否变化"""
    members = set(community.answer.users)
    touched = set(users)
    before = community.answer
    if op is UpdateOp.INSERTION:
        outsiders = touched - members
        moved = touched & members & new_locations
        if outsiders or moved:
            refined = _refine(state, community.params, members | outsiders)
            if not refined.is_empty:
                community.answer = refined
    elif touched & members:
        community.answer = _refine(state, community.params, members)
        if community.answer.is_empty:
            community.active = False
    return community.answer != before or not community.active


def maintain_communities(
    state: EngineState,
    batch: UpdateBatch,
    affected: Set[str],
    new_locations: Set[str],
    individual: bool = False,
    communities: Optional[List[RegisteredCommunity]] = None,
) -> int:
    """按注册顺序维护社区；individual=True 时逐个用户触发精化"""
    communities = state.communities if communities is None else communities
    changes = 0
    for community in communities:
        if not community.active:
            continue
        if individual:
            for u in sorted(affected):
                if not community.active:
                    break
                changes += _update_community(state, community, batch.op, [u], new_locations)
        else:
            changes += _update_community(state, community, batch.op, affected, new_locations)

    # 阈值随频次变化重新换算后，复查所有仍然活跃的社区
    for community in communities:
        if not community.active:
            continue
        report = verify_community(community.answer, state.networks, community.params, distances=state.distances)
        if report.valid:
            continue
        logger.debug(f"社区 q={community.params.q} 失效: {report.failed()}，重新精化")
        community.answer = _refine(state, community.params, community.answer.users)
        community.active = not community.answer.is_empty
        changes += 1
    return changes


# ---------------------------------------------------------------- 索引维护


def _move_user(tree: IndexTree, u: str, target: int) -> None:
    source = tree.nodes[tree.user_leaf[u]]
    source.members.discard(u)
    source.children = sorted(source.members)
    leaf = tree.nodes[target]
    leaf.members.add(u)
    leaf.children = sorted(leaf.members)
    tree.user_leaf[u] = target


def _move_node(tree: IndexTree, node_id: int, parent_id: int) -> None:
    node = tree.nodes[node_id]
    old = tree.nodes[node.parent]
    old.children = [c for c in old.children if c != node_id]
    tree.nodes[parent_id].children.append(node_id)
    node.parent = parent_id


def maintain_index(state: EngineState, affected: Set[str], delta: float) -> Tuple[int, int]:
    """叶层迁移 + 自底向上同步，返回 (迁移用户数, 重挂节点数)"""
    tree, model = state.tree, state.model
    tree.constants = model.constants
    pivots = tree.index_pivots
    leaf_pivot = {node_id: piv for piv, node_id in tree.pivot_leaf.items()}
    matrix = model.quality_matrix(pivots)
    migrations = 0
    for u in sorted(affected):
        row = matrix[model.user_index[u]]
        best = int(np.argmax(row))
        current = pivots.index(leaf_pivot[tree.user_leaf[u]])
        if row[best] > row[current] + delta:
            _move_user(tree, u, tree.pivot_leaf[pivots[best]])
            migrations += 1
    refresh_aggregates(tree, model)

    remaps = 0
    levels = tree.levels()
    for level in sorted(levels):
        parents = levels.get(level + 1, [])
        if len(parents) < 2:
            continue
        by_pivot = {parent.pivot: parent.node_id for parent in parents}
        parent_pivots = sorted(by_pivot)
        for node in levels[level]:
            scores = [model.quality_node(node, p) for p in parent_pivots]
            best = int(np.argmax(scores))
            current_pivot = tree.nodes[node.parent].pivot
            current = scores[parent_pivots.index(current_pivot)]
            if scores[best] > current + delta:
                _move_node(tree, node.node_id, by_pivot[parent_pivots[best]])
                remaps += 1
        refresh_aggregates(tree, model)
    return migrations, remaps


# ---------------------------------------------------------------- 批次


def apply_batch(
    state: EngineState,
    batch: UpdateBatch,
    delta: Optional[float] = None,
    measure_individual: bool = False,
) -> BatchTimings:
    """处理一个更新批次并推进版本号"""
    delta = state.config.stability_margin if delta is None else delta
    timings = BatchTimings(op=batch.op.value, size=len(batch.events))
    if not batch.events and (batch.op is UpdateOp.INSERTION or not state.log.stale(batch.t, batch.tau)):
        timings.active_communities = sum(c.active for c in state.communities)
        return timings

    start = time.perf_counter()
    affected, new_locations = apply_frequency_updates(state, batch)
    timings.data_b = time.perf_counter() - start

    if measure_individual:
        shadow = copy.deepcopy(state.communities)
        start = time.perf_counter()
        maintain_communities(state, batch, affected, new_locations, individual=True, communities=shadow)
        timings.comm_1 = time.perf_counter() - start

    start = time.perf_counter()
    timings.community_changes = maintain_communities(state, batch, affected, new_locations)
    timings.comm_b = time.perf_counter() - start

    start = time.perf_counter()
    timings.migrations, timings.remaps = maintain_index(state, affected, delta)
    timings.tree_b = time.perf_counter() - start

    state.bounds.epoch += 1
    state.tree.epoch = state.bounds.epoch
    timings.active_communities = sum(c.active for c in state.communities)
    logger.info(
        f"批次完成 op={batch.op.value}, 影响 {len(affected)} 个用户, 迁移 {timings.migrations}, "
        f"重挂 {timings.remaps}, 社区变化 {timings.community_changes}"
    )
    return timings
