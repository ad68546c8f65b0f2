"""
精确约束评估：影响力、社交跳数、路网距离、边支持度、(k,d)-truss 与 (ω,π)-关键词核

细化阶段、暴力求解器与测试共用这里的实现。
"""

import heapq
import math
from collections import OrderedDict, deque
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

import networkx as nx
import numpy as np
from pydantic import BaseModel

from errors import DataValidationError, UnknownEntityError
from logger import get_logger
from networks import Networks, QueryParams, RoadNetwork, SocialNetwork

# 获取日志记录器
logger = get_logger()

# 跳数不可达时的取值
UNREACHABLE = math.inf

Edge = Tuple[str, str]


def edge_key(a: str, b: str) -> Edge:
    return (a, b) if a < b else (b, a)


# ---------------------------------------------------------------- 影响力


def isf_from(g: SocialNetwork, source: str, target: Optional[str] = None) -> Dict[str, float]:
    """最大乘积 Dijkstra：source 到各用户的最大路径影响力

    权重都不超过 1，路径延长时乘积不增，因此按乘积从大到小出堆即得到最优值。
    给定 target 时到达即停止。
    """
    g.require(source)
    best: Dict[str, float] = {source: 1.0}
    heap = [(-1.0, source)]
    settled: Set[str] = set()
    while heap:
        neg_score, u = heapq.heappop(heap)
        if u in settled:
            continue
        settled.add(u)
        if u == target:
            break
        score = -neg_score
        for v, w in g.out_edges(u):
            candidate = score * w
            if candidate > best.get(v, 0.0):
                best[v] = candidate
                heapq.heappush(heap, (-candidate, v))
    return best


def isf(g: SocialNetwork, u: str, v: str) -> float:
    g.require(u)
    g.require(v)
    if u == v:
        return 1.0
    return isf_from(g, u, target=v).get(v, 0.0)


# ---------------------------------------------------------------- 距离


def hop_distance(skeleton: nx.Graph, a: str, b: str) -> float:
    for user in (a, b):
        if user not in skeleton:
            raise UnknownEntityError(f"未知用户: {user}")
    try:
        return nx.shortest_path_length(skeleton, a, b)
    except nx.NetworkXNoPath:
        return UNREACHABLE


def road_distance(road: RoadNetwork, a: str, b: str) -> float:
    road.require(a)
    road.require(b)
    return nx.dijkstra_path_length(road.graph, a, b, weight="length")


class RoadDistances:
    """路网单源最短距离缓存，按顶点顺序存为 numpy 数组"""

    def __init__(self, road: RoadNetwork, max_sources: int = 512):
        self.road = road
        self.max_sources = max_sources
        self._cache: "OrderedDict[str, np.ndarray]" = OrderedDict()

    def from_vertex(self, v: str) -> np.ndarray:
        cached = self._cache.get(v)
        if cached is not None:
            self._cache.move_to_end(v)
            return cached
        self.road.require(v)
        lengths = nx.single_source_dijkstra_path_length(self.road.graph, v, weight="length")
        row = np.full(len(self.road.vertex_ids), np.inf)
        for vertex, length in lengths.items():
            row[self.road.vertex_index[vertex]] = length
        self._cache[v] = row
        if len(self._cache) > self.max_sources:
            self._cache.popitem(last=False)
        return row

    def between(self, a: str, b: str) -> float:
        return float(self.from_vertex(a)[self.road.vertex_index[b]])


def avg_dist(
    networks: Networks, u: str, p: str, distances: Optional[RoadDistances] = None
) -> float:
    """u 的所有签到位置到 p 的平均路网距离"""
    checkins = networks.bipartite.checkins(u)
    if not checkins:
        raise DataValidationError(f"用户 {u} 没有签到，平均距离无定义")
    distances = distances or RoadDistances(networks.road)
    row = distances.from_vertex(networks.poi_vertex(p))
    index = networks.road.vertex_index
    return float(np.mean([row[index[networks.poi_vertex(c)]] for c in checkins]))


# ---------------------------------------------------------------- 支持度与 truss


def _neighbourhoods(skeleton: nx.Graph, users: Iterable[str]) -> Dict[str, Set[str]]:
    nodes = set(users)
    for u in nodes:
        if u not in skeleton:
            raise UnknownEntityError(f"未知用户: {u}")
    return {u: set(skeleton.adj[u]) & nodes for u in nodes}


def edge_support(skeleton: nx.Graph, users: Optional[Iterable[str]] = None) -> Dict[Edge, int]:
    """诱导子图中每条边的支持度（两端点在子图内的公共邻居数）"""
    nbrs = _neighbourhoods(skeleton, skeleton.nodes if users is None else users)
    return {
        (u, v): len(nbrs[u] & nbrs[v]) for u in nbrs for v in nbrs[u] if u < v
    }


def truss_edges(skeleton: nx.Graph, users: Iterable[str], k: int) -> Set[Edge]:
    """诱导子图的 k-truss：反复删除支持度低于 k-2 的边"""
    nbrs = _neighbourhoods(skeleton, users)
    support = {(u, v): len(nbrs[u] & nbrs[v]) for u in nbrs for v in nbrs[u] if u < v}
    threshold = k - 2
    queue = deque(e for e, s in support.items() if s < threshold)
    removed: Set[Edge] = set()
    while queue:
        edge = queue.popleft()
        if edge in removed:
            continue
        removed.add(edge)
        a, b = edge
        nbrs[a].discard(b)
        nbrs[b].discard(a)
        for w in nbrs[a] & nbrs[b]:
            for other in (edge_key(a, w), edge_key(b, w)):
                support[other] -= 1
                if support[other] == threshold - 1:
                    queue.append(other)
    return set(support) - removed


def _bfs_hops(adjacency: Dict[str, Set[str]], source: str) -> Dict[str, int]:
    hops = {source: 0}
    frontier = deque([source])
    while frontier:
        u = frontier.popleft()
        for v in adjacency.get(u, ()):
            if v not in hops:
                hops[v] = hops[u] + 1
                frontier.append(v)
    return hops


def truss_hops(skeleton: nx.Graph, users: Iterable[str], q: str, k: int) -> Dict[str, int]:
    """q 在 k-truss 子图内能到达的用户及跳数"""
    adjacency: Dict[str, Set[str]] = {}
    for a, b in truss_edges(skeleton, users, k):
        adjacency.setdefault(a, set()).add(b)
        adjacency.setdefault(b, set()).add(a)
    if q not in adjacency:
        return {}
    return _bfs_hops(adjacency, q)


def verify_kd_truss(skeleton: nx.Graph, users: Iterable[str], q: str, k: int, d: int) -> bool:
    """用户集合的 k-truss 覆盖全部用户、连通，且都在 q 的 d 跳以内"""
    users = set(users)
    if q not in users:
        return False
    hops = truss_hops(skeleton, users, q, k)
    return set(hops) == users and all(h <= d for h in hops.values())


# ---------------------------------------------------------------- 关键词核


@dataclass(frozen=True)
class AbsoluteThresholds:
    omega: float
    pi: float


def resolve_thresholds(networks: Networks, params: QueryParams) -> AbsoluteThresholds:
    """把相对阈值 ω、π 换算成频次单位"""
    bipartite = networks.bipartite
    return AbsoluteThresholds(
        omega=params.omega * bipartite.max_f_sum(),
        pi=params.pi * bipartite.max_frequency(),
    )


def keyword_core_checks(
    networks: Networks,
    users: Iterable[str],
    pois: Iterable[str],
    keywords: Iterable[str],
    omega_abs: float,
    pi_abs: float,
) -> Dict[str, bool]:
    users, pois, wanted = set(users), set(pois), set(keywords)
    bipartite = networks.bipartite
    checks = {
        "keyword": all(networks.pois.keywords(p) & wanted for p in pois),
        "omega": all(bipartite.f_sum(u, pois) >= omega_abs for u in users),
        "pi": True,
        "connected": False,
    }
    for p in pois:
        visitors = [u for u in users if bipartite.frequency(u, p) != 0]
        if not visitors or bipartite.f_avg(visitors, p) < pi_abs:
            checks["pi"] = False
            break
    graph = nx.Graph()
    graph.add_nodes_from(("u", u) for u in users)
    graph.add_nodes_from(("p", p) for p in pois)
    graph.add_edges_from(
        (("u", u), ("p", p)) for u in users for p in pois if bipartite.frequency(u, p) > 0
    )
    checks["connected"] = graph.number_of_nodes() > 0 and nx.is_connected(graph)
    return checks


def verify_keyword_core(
    networks: Networks,
    users: Iterable[str],
    pois: Iterable[str],
    keywords: Iterable[str],
    omega_abs: float,
    pi_abs: float,
) -> bool:
    users, pois = set(users), set(pois)
    if not users or not pois:
        return False
    return all(keyword_core_checks(networks, users, pois, keywords, omega_abs, pi_abs).values())


# ---------------------------------------------------------------- 社区


class CommunityAnswer(BaseModel):
    """查询结果社区：用户集合、POI 集合及其间的签到边"""

    users: List[str] = []
    pois: List[str] = []
    edges: List[Tuple[str, str, float]] = []

    @classmethod
    def empty(cls) -> "CommunityAnswer":
        return cls()

    @classmethod
    def build(cls, networks: Networks, users: Iterable[str], pois: Iterable[str]) -> "CommunityAnswer":
        users, pois = sorted(set(users)), sorted(set(pois))
        bipartite = networks.bipartite
        edges = [
            (u, p, bipartite.frequency(u, p))
            for u in users
            for p in pois
            if bipartite.frequency(u, p) > 0
        ]
        return cls(users=users, pois=pois, edges=edges)

    @property
    def is_empty(self) -> bool:
        return not self.users

    @property
    def user_set(self) -> FrozenSet[str]:
        return frozenset(self.users)

    @property
    def poi_set(self) -> FrozenSet[str]:
        return frozenset(self.pois)


class CommunityReport(BaseModel):
    """逐条约束的验证结果"""

    membership: bool
    truss: bool
    influence: bool
    spatial: bool
    keyword_core: bool
    maximality: Optional[bool] = None

    @property
    def valid(self) -> bool:
        return self.membership and self.truss and self.influence and self.spatial and self.keyword_core

    def failed(self) -> List[str]:
        names = ["membership", "truss", "influence", "spatial", "keyword_core"]
        failed = [name for name in names if not getattr(self, name)]
        if self.maximality is False:
            failed.append("maximality")
        return failed


class CommunityEvaluator:
    """针对单个查询的社区判定器

    对用户集合 S 取规范 POI 集 Vp(S)：与 Q 匹配、被 S 访问、在 S 上平均频次达到 π_abs、
    且与 S 中每个用户的平均距离不超过 σ 的 POI。任何以 S 为用户集的合法社区都只用到
    Vp(S) 的子集，所以判定 S 是否能构成社区只需检查 (S, Vp(S))。
    """

    def __init__(
        self,
        networks: Networks,
        params: QueryParams,
        thresholds: Optional[AbsoluteThresholds] = None,
        distances: Optional[RoadDistances] = None,
        isf_scores: Optional[Dict[str, float]] = None,
    ):
        networks.social.require(params.q)
        self.networks = networks
        self.params = params
        self.q = params.q
        self.thresholds = thresholds or resolve_thresholds(networks, params)
        self.distances = distances or RoadDistances(networks.road)
        self.isf_scores = isf_scores if isf_scores is not None else isf_from(networks.social, params.q)
        self.keyword_pois = networks.pois.matching(params.keywords)
        self._avg: Dict[Tuple[str, str], float] = {}

    def influence(self, u: str) -> float:
        return 1.0 if u == self.q else self.isf_scores.get(u, 0.0)

    def avg_dist(self, u: str, p: str) -> float:
        key = (u, p)
        if key not in self._avg:
            if self.networks.bipartite.checkins(u):
                self._avg[key] = avg_dist(self.networks, u, p, self.distances)
            else:
                self._avg[key] = math.inf
        return self._avg[key]

    def keyword_checkins(self, u: str) -> List[str]:
        return [p for p in self.networks.bipartite.checkins(u) if p in self.keyword_pois]

    def canonical_pois(self, users: Iterable[str]) -> Set[str]:
        users = set(users)
        bipartite = self.networks.bipartite
        candidates = {p for u in users for p in self.keyword_checkins(u)}
        pois = set()
        for p in candidates:
            if bipartite.f_avg(users, p) < self.thresholds.pi:
                continue
            if any(self.avg_dist(u, p) > self.params.sigma for u in users):
                continue
            pois.add(p)
        return pois

    def evaluate(self, users: Iterable[str]) -> Optional[Tuple[FrozenSet[str], FrozenSet[str]]]:
        """S 能构成社区时返回 (S, Vp(S))，否则返回 None"""
        users = frozenset(users)
        params = self.params
        if self.q not in users:
            return None
        if any(self.influence(u) < params.theta for u in users):
            return None
        if not verify_kd_truss(self.networks.skeleton, users, self.q, params.k, params.d):
            return None
        pois = self.canonical_pois(users)
        if not pois:
            return None
        if not verify_keyword_core(
            self.networks, users, pois, params.keywords, self.thresholds.omega, self.thresholds.pi
        ):
            return None
        return users, frozenset(pois)


def verify_community(
    answer: CommunityAnswer,
    networks: Networks,
    params: QueryParams,
    thresholds: Optional[AbsoluteThresholds] = None,
    distances: Optional[RoadDistances] = None,
    check_maximality: bool = False,
) -> CommunityReport:
    """逐条检查社区定义的前五条约束；可选地用单元素扩展检查极大性（仅用于小实例）"""
    evaluator = CommunityEvaluator(networks, params, thresholds, distances)
    users, pois = answer.user_set, answer.poi_set
    membership = params.q in users
    truss = membership and verify_kd_truss(networks.skeleton, users, params.q, params.k, params.d)
    influence = all(evaluator.influence(u) >= params.theta for u in users)
    spatial = all(evaluator.avg_dist(u, p) <= params.sigma for u in users for p in pois)
    keyword_core = verify_keyword_core(
        networks, users, pois, params.keywords, evaluator.thresholds.omega, evaluator.thresholds.pi
    )
    report = CommunityReport(
        membership=membership,
        truss=truss,
        influence=influence,
        spatial=spatial,
        keyword_core=keyword_core,
    )
    if check_maximality and report.valid:
        maximal = not (evaluator.canonical_pois(users) - pois)
        if maximal:
            for w in sorted(networks.social.users - users):
                if evaluator.evaluate(users | {w}) is not None:
                    maximal = False
                    break
        report.maximality = maximal
    if not report.valid:
        logger.debug(f"社区验证未通过: {report.failed()}")
    return report
