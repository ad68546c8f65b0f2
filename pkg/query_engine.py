"""
过滤-精化查询：索引遍历 + 用户级剪枝得到候选集，再在候选集上求包含 q 的最大社区
"""

import heapq
import itertools
import time
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

import networkx as nx
import numpy as np
from pydantic import BaseModel, Field

from config import EngineConfig
from errors import DataValidationError, EpochMismatchError, InstanceTooLargeError
from index_tree import IndexTree, prune_node
from logger import get_logger
from metrics import (
    AbsoluteThresholds,
    CommunityAnswer,
    CommunityEvaluator,
    CommunityReport,
    RoadDistances,
    resolve_thresholds,
    truss_hops,
    verify_community,
)
from networks import Networks, QueryParams
from precompute import OfflineBounds, PruneContext, PruneReason, prune_user

# 获取日志记录器
logger = get_logger()


class CandidateSet:
    """按 min_{p∈POI_q} lb_avg_dist_r 排序的小顶堆"""

    def __init__(self):
        self._heap: List[Tuple[float, str]] = []

    def push(self, user: str, key: float) -> None:
        heapq.heappush(self._heap, (key, user))

    def pop(self) -> Tuple[str, float]:
        key, user = heapq.heappop(self._heap)
        return user, key

    def entries(self) -> List[Tuple[str, float]]:
        return [(user, key) for key, user in sorted(self._heap)]

    def users(self) -> Set[str]:
        return {user for _, user in self._heap}

    def __contains__(self, user: str) -> bool:
        return any(u == user for _, u in self._heap)

    def __len__(self) -> int:
        return len(self._heap)


class QueryStats(BaseModel):
    user_prunes: Dict[str, int] = Field(default_factory=lambda: {r.value: 0 for r in PruneReason})
    node_prunes: Dict[str, int] = Field(default_factory=lambda: {r.value: 0 for r in PruneReason})
    nodes_visited: int = 0
    candidates: int = 0
    refine_mode: str = "none"
    filter_seconds: float = 0.0
    refine_seconds: float = 0.0
    total_seconds: float = 0.0


class QueryResult(BaseModel):
    params: QueryParams
    answer: CommunityAnswer
    stats: QueryStats
    report: Optional[CommunityReport] = None

    def to_document(self) -> dict:
        document = {
            "query": self.params.model_dump(),
            "users": self.answer.users,
            "pois": self.answer.pois,
            "edges": [list(edge) for edge in self.answer.edges],
            "stats": self.stats.model_dump(),
        }
        if self.report is not None:
            document["verification"] = {**self.report.model_dump(), "valid": self.report.valid, "empty": False}
        elif self.answer.is_empty:
            # 空结果不做逐条检查
            document["verification"] = {"valid": True, "empty": True}
        return document


# ---------------------------------------------------------------- 精化


def _order_key(users: FrozenSet[str], pois: FrozenSet[str]) -> Tuple[int, int, Tuple[str, ...]]:
    """用户多者优先，其次 POI 多者，最后按用户 id 字典序"""
    return (-len(users), -len(pois), tuple(sorted(users)))


class Refiner:
    """在候选集合上求包含 q 的最大合法社区"""

    def __init__(self, evaluator: CommunityEvaluator, config: EngineConfig):
        self.evaluator = evaluator
        self.config = config
        self.params = evaluator.params
        self.q = evaluator.q
        self.mode = "none"
        self.priority: Dict[str, float] = {}
        self._relaxed_omega: Dict[str, float] = {}

    def _near_keyword_pois(self, u: str) -> List[str]:
        sigma = self.params.sigma
        return [p for p in self.evaluator.keyword_checkins(u) if self.evaluator.avg_dist(u, p) <= sigma]

    def relaxed_omega(self, u: str) -> float:
        """u 在任何社区中可能达到的 f_sum 上限"""
        if u not in self._relaxed_omega:
            bipartite = self.evaluator.networks.bipartite
            self._relaxed_omega[u] = bipartite.f_sum(u, self._near_keyword_pois(u))
        return self._relaxed_omega[u]

    def _bipartite_component(self, users: Set[str]) -> Set[str]:
        graph = nx.Graph()
        graph.add_nodes_from(("u", u) for u in users)
        graph.add_edges_from((("u", u), ("p", p)) for u in users for p in self._near_keyword_pois(u))
        component = nx.node_connected_component(graph, ("u", self.q))
        return {name for kind, name in component if kind == "u"}

    def monotone_peel(self, users: Iterable[str]) -> FrozenSet[str]:
        """只删除不可能属于任何合法社区的用户，直到不动点"""
        ev = self.evaluator
        params = self.params
        omega = ev.thresholds.omega
        current = set(users)
        while self.q in current:
            before = len(current)
            current = {u for u in current if ev.influence(u) >= params.theta}
            current = {u for u in current if self.relaxed_omega(u) >= omega}
            if self.q not in current:
                break
            hops = truss_hops(ev.networks.skeleton, current, self.q, params.k)
            current = {u for u, h in hops.items() if h <= params.d}
            if self.q not in current:
                break
            current = self._bipartite_component(current)
            if len(current) == before:
                break
        return frozenset(current) if self.q in current else frozenset()

    def greedy_peel(self, users: Iterable[str]) -> FrozenSet[str]:
        """大候选集上的确定性剥离：社交与二部两轮交替，直到不动点"""
        ev = self.evaluator
        params = self.params
        bipartite = ev.networks.bipartite
        current = set(self.monotone_peel(users))
        while self.q in current:
            before = len(current)
            pois = {
                p
                for u in current
                for p in ev.keyword_checkins(u)
                if bipartite.f_avg(current, p) >= ev.thresholds.pi
            }
            current = {u for u in current if bipartite.f_sum(u, pois) >= ev.thresholds.omega}
            current = {u for u in current if all(ev.avg_dist(u, p) <= params.sigma for p in pois)}
            if self.q not in current:
                break
            graph = nx.Graph()
            graph.add_nodes_from(("u", u) for u in current)
            graph.add_edges_from(
                (("u", u), ("p", p)) for u in current for p in pois if bipartite.frequency(u, p) > 0
            )
            current = {name for kind, name in nx.node_connected_component(graph, ("u", self.q)) if kind == "u"}
            current = set(self.monotone_peel(current))
            if len(current) == before:
                break
        return frozenset(current) if self.q in current else frozenset()

    def exact_search(self, users: FrozenSet[str]) -> Optional[Tuple[FrozenSet[str], FrozenSet[str]]]:
        """对删除操作做分支定界，返回排序最优的合法子集"""
        best: Optional[Tuple[FrozenSet[str], FrozenSet[str]]] = None
        seen: Set[FrozenSet[str]] = set()
        stack = [users]
        while stack:
            current = stack.pop()
            if current in seen or not current:
                continue
            seen.add(current)
            if best is not None and len(current) < len(best[0]):
                continue
            found = self.evaluator.evaluate(current)
            if found is not None:
                if best is None or _order_key(*found) < _order_key(*best):
                    best = found
                continue
            # 栈顶先弹出：候选键大（离 POI_q 远）的用户先被删除
            order = sorted(current - {self.q}, key=lambda u: (self.priority.get(u, 0.0), u))
            for u in order:
                reduced = self.monotone_peel(current - {u})
                if reduced and (best is None or len(reduced) >= len(best[0])):
                    stack.append(reduced)
        return best

    def refine(self, candidates: Iterable[str], priority: Optional[Dict[str, float]] = None) -> CommunityAnswer:
        """priority 为候选堆中的键，只影响分支定界的展开顺序"""
        self.priority = dict(priority or {})
        candidates = set(candidates)
        if self.q not in candidates:
            self.mode = "none"
            return CommunityAnswer.empty()
        peeled = self.monotone_peel(candidates)
        found = self.evaluator.evaluate(peeled) if peeled else None
        if found is not None:
            self.mode = "peel"
        elif peeled and len(peeled) <= self.config.exact_refine_limit:
            self.mode = "exact"
            found = self.exact_search(peeled)
        elif peeled:
            self.mode = "greedy"
            greedy = self.greedy_peel(peeled)
            found = self.evaluator.evaluate(greedy) if greedy else None
        else:
            self.mode = "peel"
        if found is None:
            return CommunityAnswer.empty()
        users, pois = found
        return CommunityAnswer.build(self.evaluator.networks, users, pois)


def refinement(
    candidates: Iterable[str],
    networks: Networks,
    params: QueryParams,
    config: Optional[EngineConfig] = None,
    thresholds: Optional[AbsoluteThresholds] = None,
    distances: Optional[RoadDistances] = None,
) -> CommunityAnswer:
    config = config or EngineConfig()
    evaluator = CommunityEvaluator(networks, params, thresholds, distances)
    return Refiner(evaluator, config).refine(candidates)


# ---------------------------------------------------------------- 过滤


def check_epochs(tree: IndexTree, bounds: OfflineBounds) -> None:
    if tree.bounds_fingerprint != bounds.fingerprint or tree.epoch != bounds.epoch:
        logger.error(
            f"索引与离线数据版本不一致: 索引({tree.bounds_fingerprint[:12]}, {tree.epoch}) "
            f"离线数据({bounds.fingerprint[:12]}, {bounds.epoch})"
        )
        raise EpochMismatchError("索引快照与离线数据快照不属于同一版本")


def filter_candidates(
    tree: IndexTree,
    ctx: PruneContext,
    stats: Optional[QueryStats] = None,
) -> CandidateSet:
    """按 ub_sup 从大到小遍历索引，节点级与用户级剪枝后的用户进入候选集"""
    stats = stats or QueryStats()
    candidates = CandidateSet()
    columns = tree.keyword_columns(ctx.params.keywords)
    threshold = ctx.params.k - 2
    support_enabled = ctx.config.lemma_enabled(PruneReason.SUPPORT)
    root = tree.node(tree.root)
    heap = [(-root.ub_sup, root.node_id)]
    while heap:
        neg_key, node_id = heapq.heappop(heap)
        if support_enabled and -neg_key < threshold:
            break
        node = tree.node(node_id)
        stats.nodes_visited += 1
        reason = prune_node(node, ctx, columns)
        if reason is not None:
            stats.node_prunes[reason.value] += 1
            continue
        if not node.is_leaf:
            for child_id in node.children:
                child = tree.node(child_id)
                heapq.heappush(heap, (-child.ub_sup, child_id))
            continue
        for u in sorted(node.members):
            reason = prune_user(u, ctx)
            if reason is not None:
                stats.user_prunes[reason.value] += 1
                continue
            candidates.push(u, ctx.spatial_key(u))
    stats.candidates = len(candidates)
    return candidates


def answer_query(
    tree: IndexTree,
    bounds: OfflineBounds,
    networks: Networks,
    params: QueryParams,
    config: Optional[EngineConfig] = None,
    verify: bool = True,
    distances: Optional[RoadDistances] = None,
) -> QueryResult:
    """回答一次 KCS-BSSN 查询"""
    config = config or EngineConfig()
    check_epochs(tree, bounds)
    networks.social.require(params.q)
    start = time.perf_counter()
    stats = QueryStats()
    thresholds = resolve_thresholds(networks, params)
    ctx = PruneContext.build(bounds, networks, params, config, thresholds)
    logger.debug(f"查询 q={params.q}, Q={params.keywords}, 阈值 ω={thresholds.omega:.3f} π={thresholds.pi:.3f}")

    if not ctx.poi_q:
        logger.info(f"查询用户 {params.q} 没有访问过匹配关键词的 POI，结果为空")
        stats.total_seconds = time.perf_counter() - start
        return QueryResult(params=params, answer=CommunityAnswer.empty(), stats=stats)

    candidates = filter_candidates(tree, ctx, stats)
    filtered = time.perf_counter()
    stats.filter_seconds = filtered - start

    evaluator = CommunityEvaluator(networks, params, thresholds, distances)
    refiner = Refiner(evaluator, config)
    answer = refiner.refine(candidates.users(), priority=dict(candidates.entries()))
    stats.refine_mode = refiner.mode
    stats.refine_seconds = time.perf_counter() - filtered
    stats.total_seconds = time.perf_counter() - start
    logger.info(
        f"查询完成: 候选 {stats.candidates} 个, 社区 {len(answer.users)} 个用户 / {len(answer.pois)} 个 POI, "
        f"耗时 {stats.total_seconds * 1000:.1f} ms"
    )

    report = None
    if verify and not answer.is_empty:
        report = verify_community(answer, networks, params, thresholds, evaluator.distances)
        if not report.valid:
            logger.warning(f"查询结果未通过验证: {report.failed()}")
    return QueryResult(params=params, answer=answer, stats=stats, report=report)


# ---------------------------------------------------------------- 暴力求解


def brute_force_oracle(
    networks: Networks,
    params: QueryParams,
    config: Optional[EngineConfig] = None,
) -> CommunityAnswer:
    """枚举 q 的 d 跳内全部用户子集，返回排序最优的合法社区；只用于小实例"""
    config = config or EngineConfig()
    networks.social.require(params.q)
    q = params.q
    hops = nx.single_source_shortest_path_length(networks.skeleton, q, cutoff=params.d)
    nearby = sorted(u for u in hops if u != q)
    if len(nearby) > config.oracle_user_limit:
        logger.error(f"暴力求解实例过大: d 跳内 {len(nearby)} 个用户，上限 {config.oracle_user_limit}")
        raise InstanceTooLargeError(
            f"q 的 {params.d} 跳内有 {len(nearby)} 个用户，超过上限 {config.oracle_user_limit}"
        )
    evaluator = CommunityEvaluator(networks, params)
    if not evaluator.keyword_checkins(q):
        return CommunityAnswer.empty()
    pool = [
        u for u in nearby if evaluator.influence(u) >= params.theta and evaluator.keyword_checkins(u)
    ]
    logger.debug(f"暴力求解: d 跳内 {len(nearby)} 个用户，预过滤后 {len(pool)} 个")
    for size in range(len(pool), 0, -1):
        best = None
        for others in itertools.combinations(pool, size):
            found = evaluator.evaluate(frozenset(others) | {q})
            if found is not None and (best is None or _order_key(*found) < _order_key(*best)):
                best = found
        if best is not None:
            return CommunityAnswer.build(networks, *best)
    return CommunityAnswer.empty()


# ---------------------------------------------------------------- 查询负载


def sample_queries(
    networks: Networks,
    count: int,
    rng: np.random.Generator,
    keyword_count: int = 7,
    **overrides,
) -> List[QueryParams]:
    """随机生成查询：q 取有签到的用户，关键词优先取 q 已访问 POI 的关键词，不足时从词表补齐"""
    users = sorted(u for u in networks.social.users if networks.bipartite.checkins(u))
    if not users:
        logger.error("数据集中没有任何签到，无法生成查询")
        raise DataValidationError("数据集中没有任何签到")
    vocabulary = networks.pois.vocabulary
    picks = rng.choice(len(users), size=count, replace=len(users) < count)
    queries = []
    for index in picks:
        q = users[int(index)]
        own = sorted({kw for p in networks.bipartite.checkins(q) for kw in networks.pois.keywords(p)})
        chosen = [own[j] for j in rng.permutation(len(own))[:keyword_count]]
        rest = [kw for kw in vocabulary if kw not in chosen]
        missing = min(keyword_count - len(chosen), len(rest))
        if missing > 0:
            chosen += [rest[j] for j in sorted(rng.choice(len(rest), size=missing, replace=False))]
        queries.append(QueryParams(q=q, keywords=chosen, **overrides))
    return queries
