"""
离线预计算：用户级剪枝上下界与社交/路网枢纽选择

每个用户保存：
- 关键词并集以及每个关键词的频次聚合 (f_sum, f_max)
- ub_f_sum / ub_f_avg：签到频次总和与最大值
- ub_w_in / ub_w_out：入边、出边最大影响力权重
- ub_sup：骨架上关联边的最大支持度
另外保存每个用户到社交枢纽的跳数，以及每个 POI 到路网枢纽的路网距离。
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from config import EngineConfig
from errors import DataValidationError, UnknownEntityError
from logger import get_logger
from metrics import AbsoluteThresholds, RoadDistances, edge_support, resolve_thresholds
from networks import Networks, QueryParams, SocialNetwork, undirected_skeleton

# 获取日志记录器
logger = get_logger()


class PruneReason(str, Enum):
    KEYWORD = "Keyword"
    OMEGA = "Omega"
    PI = "Pi"
    INFLUENCE = "Influence"
    SUPPORT = "Support"
    SOCIAL_DIST = "SocialDist"
    SPATIAL_DIST = "SpatialDist"


# prune_user 的检查顺序，代价低的在前
USER_CHECK_ORDER = (
    PruneReason.KEYWORD,
    PruneReason.OMEGA,
    PruneReason.PI,
    PruneReason.SUPPORT,
    PruneReason.SOCIAL_DIST,
    PruneReason.INFLUENCE,
    PruneReason.SPATIAL_DIST,
)


@dataclass
class PivotSets:
    social: List[str]
    road: List[str]


@dataclass
class UserBounds:
    """单个用户的离线数据"""

    checkins: List[str]
    keywords: FrozenSet[str]
    key_f_sum: Dict[str, float]
    key_f_max: Dict[str, float]
    ub_f_sum: float
    ub_f_avg: float
    ub_w_in: float = 0.0
    ub_w_out: float = 0.0
    ub_sup: int = 0


@dataclass
class OfflineBounds:
    users: Dict[str, UserBounds]
    pivots: PivotSets
    social_dist: Dict[str, np.ndarray]
    poi_road: Dict[str, np.ndarray]
    fingerprint: str = ""
    epoch: int = 0
    build_seconds: float = field(default=0.0, compare=False)

    def __getitem__(self, u: str) -> UserBounds:
        try:
            return self.users[u]
        except KeyError:
            raise UnknownEntityError(f"离线数据中没有用户: {u}") from None

    def checkin_road(self, u: str) -> np.ndarray:
        """u 每个签到位置到各路网枢纽的距离，形状 (|u.L|, 𝔟)"""
        checkins = self[u].checkins
        if not checkins:
            return np.zeros((0, len(self.pivots.road)))
        return np.vstack([self.poi_road[p] for p in checkins])


# ---------------------------------------------------------------- 用户上界


def _frequency_bounds(networks: Networks, u: str) -> UserBounds:
    visited = networks.bipartite.visited(u)
    key_f_sum: Dict[str, float] = {}
    key_f_max: Dict[str, float] = {}
    for p, f in visited.items():
        for kw in networks.pois.keywords(p):
            key_f_sum[kw] = key_f_sum.get(kw, 0.0) + f
            key_f_max[kw] = max(key_f_max.get(kw, 0.0), f)
    return UserBounds(
        checkins=sorted(visited),
        keywords=frozenset(key_f_sum),
        key_f_sum=key_f_sum,
        key_f_max=key_f_max,
        ub_f_sum=float(sum(visited.values())),
        ub_f_avg=float(max(visited.values(), default=0.0)),
    )


def _bounds_chunk(networks: Networks, users: List[str], best_support: Dict[str, int]) -> Dict[str, UserBounds]:
    social = networks.social
    result: Dict[str, UserBounds] = {}
    for u in users:
        bounds = _frequency_bounds(networks, u)
        bounds.ub_w_out = max((w for _, w in social.out_edges(u)), default=0.0)
        bounds.ub_w_in = max((w for _, w in social.in_edges(u)), default=0.0)
        bounds.ub_sup = best_support.get(u, 0)
        result[u] = bounds
    return result


def compute_user_bounds(networks: Networks, workers: int = 1) -> Dict[str, UserBounds]:
    """频次、影响力、支持度三部分上界；各用户互不依赖，workers > 1 时分块交给进程池"""
    support = edge_support(networks.skeleton)
    best_support: Dict[str, int] = {}
    for (a, b), s in support.items():
        best_support[a] = max(best_support.get(a, 0), s)
        best_support[b] = max(best_support.get(b, 0), s)

    users = sorted(networks.social.users)
    if workers <= 1 or len(users) < 2:
        return _bounds_chunk(networks, users, best_support)

    size = math.ceil(len(users) / workers)
    chunks = [users[i : i + size] for i in range(0, len(users), size)]
    logger.info(f"使用 {workers} 个工作进程计算 {len(users)} 个用户的上界")
    result: Dict[str, UserBounds] = {}
    with ProcessPoolExecutor(max_workers=workers) as executor:
        for part in executor.map(
            _bounds_chunk, [networks] * len(chunks), chunks, [best_support] * len(chunks)
        ):
            result.update(part)
    return {u: result[u] for u in users}


def recompute_user(bounds: OfflineBounds, networks: Networks, u: str) -> UserBounds:
    """签到变化后只需重算频次部分，社交部分不变"""
    old = bounds[u]
    fresh = _frequency_bounds(networks, u)
    fresh.ub_w_in, fresh.ub_w_out, fresh.ub_sup = old.ub_w_in, old.ub_w_out, old.ub_sup
    bounds.users[u] = fresh
    return fresh


def ub_isf(bounds: OfflineBounds, g: SocialNetwork, u: str, v: str) -> float:
    if u == v:
        return 1.0
    out_u, in_v = bounds[u].ub_w_out, bounds[v].ub_w_in
    if g.has_edge(u, v):
        return max(out_u, in_v)
    return out_u * in_v


# ---------------------------------------------------------------- 枢纽选择


def swap_refine(
    candidates: Sequence[str],
    size: int,
    iterations: int,
    rng: np.random.Generator,
    objective: Callable[[List[str]], float],
    maximize: bool = True,
    initial: Optional[List[str]] = None,
) -> Tuple[List[str], float]:
    """随机单点交换的局部搜索，只接受严格改进"""
    candidates = list(candidates)
    if size > len(candidates):
        raise DataValidationError(f"枢纽数 {size} 超过候选数 {len(candidates)}")
    if initial is None:
        chosen = [candidates[i] for i in rng.choice(len(candidates), size=size, replace=False)]
    else:
        chosen = list(initial)
    best = objective(chosen)
    for _ in range(iterations):
        members = set(chosen)
        outside = [c for c in candidates if c not in members]
        if not outside:
            break
        slot = int(rng.integers(size))
        trial = list(chosen)
        trial[slot] = outside[int(rng.integers(len(outside)))]
        value = objective(trial)
        if (value > best) if maximize else (value < best):
            chosen, best = trial, value
    return chosen, best


def _pair_sample(n: int, limit: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """不超过 limit 时取全部无序对，否则均匀采样"""
    total = n * (n - 1) // 2
    if total <= limit:
        left, right = np.triu_indices(n, k=1)
        return left, right
    left = rng.integers(n, size=limit)
    right = rng.integers(n - 1, size=limit)
    right = right + (right >= left)
    return left, right


def _hop_row(skeleton: nx.Graph, users: List[str], pivot: str) -> np.ndarray:
    hops = nx.single_source_shortest_path_length(skeleton, pivot)
    return np.array([hops.get(u, np.inf) for u in users], dtype=float)


def social_pivot_objective(rows: np.ndarray, left: np.ndarray, right: np.ndarray) -> float:
    """采样用户对上 lb_dist_s 之和，任一端不可达的枢纽不计入"""
    a, b = rows[:, left], rows[:, right]
    finite = np.isfinite(a) & np.isfinite(b)
    gaps = np.abs(np.where(finite, a, 0.0) - np.where(finite, b, 0.0))
    return float(gaps.max(axis=0).sum()) if gaps.size else 0.0


def select_social_pivots(
    g: SocialNetwork,
    count: int,
    iterations: int,
    sample_pairs: int,
    rng: np.random.Generator,
    maximize: bool = True,
    skeleton: Optional[nx.Graph] = None,
) -> List[str]:
    skeleton = skeleton if skeleton is not None else undirected_skeleton(g)
    users = sorted(g.users)
    left, right = _pair_sample(len(users), sample_pairs, rng)
    rows: Dict[str, np.ndarray] = {}

    def objective(pivots: List[str]) -> float:
        for p in pivots:
            if p not in rows:
                rows[p] = _hop_row(skeleton, users, p)
        return social_pivot_objective(np.vstack([rows[p] for p in pivots]), left, right)

    pivots, value = swap_refine(users, count, iterations, rng, objective, maximize)
    logger.info(f"社交枢纽选择完成: {pivots}, 目标值={value:.3f}")
    return pivots


def road_pivot_objective(
    rows: np.ndarray, checkin_cols: np.ndarray, poi_cols: np.ndarray, weights: np.ndarray
) -> float:
    """采样 (用户, POI) 对上 lb_avg_dist_r 之和；rows 为枢纽到全部路网顶点的距离"""
    gaps = np.abs(rows[:, checkin_cols] - rows[:, poi_cols]).max(axis=0)
    return float((gaps * weights).sum())


def select_road_pivots(
    networks: Networks,
    count: int,
    iterations: int,
    sample_pairs: int,
    rng: np.random.Generator,
    maximize: bool = True,
    distances: Optional[RoadDistances] = None,
) -> List[str]:
    road = networks.road
    distances = distances or RoadDistances(road, max_sources=max(count * 4, 64))
    active = [u for u in sorted(networks.social.users) if networks.bipartite.checkins(u)]
    pois = list(networks.pois)
    checkin_cols: List[int] = []
    poi_cols: List[int] = []
    weights: List[float] = []
    if active and pois:
        users_drawn = rng.integers(len(active), size=sample_pairs)
        pois_drawn = rng.integers(len(pois), size=sample_pairs)
        for ui, pi in zip(users_drawn, pois_drawn):
            checkins = networks.bipartite.checkins(active[ui])
            target = road.vertex_index[networks.poi_vertex(pois[pi])]
            for c in checkins:
                checkin_cols.append(road.vertex_index[networks.poi_vertex(c)])
                poi_cols.append(target)
                weights.append(1.0 / len(checkins))
    checkin_array = np.array(checkin_cols, dtype=int)
    poi_array = np.array(poi_cols, dtype=int)
    weight_array = np.array(weights, dtype=float)
    rows: Dict[str, np.ndarray] = {}

    def objective(pivots: List[str]) -> float:
        if weight_array.size == 0:
            return 0.0
        for p in pivots:
            if p not in rows:
                rows[p] = distances.from_vertex(p)
        return road_pivot_objective(
            np.vstack([rows[p] for p in pivots]), checkin_array, poi_array, weight_array
        )

    pivots, value = swap_refine(road.vertex_ids, count, iterations, rng, objective, maximize)
    logger.info(f"路网枢纽选择完成: {pivots}, 目标值={value:.3f}")
    return pivots


# ---------------------------------------------------------------- 下界


def lb_dist_s(bounds: OfflineBounds, u: str, q: str) -> float:
    """三角不等式给出的跳数下界；恰有一方能到达某枢纽时两者不连通"""
    if u == q:
        return 0.0
    a, b = bounds.social_dist[u], bounds.social_dist[q]
    reach_a, reach_b = np.isfinite(a), np.isfinite(b)
    if np.any(reach_a != reach_b):
        return math.inf
    both = reach_a & reach_b
    if not both.any():
        return 0.0
    return float(np.abs(a[both] - b[both]).max())


def lb_avg_dist_r(bounds: OfflineBounds, u: str, p: str) -> float:
    checkin_rows = bounds.checkin_road(u)
    if checkin_rows.shape[0] == 0:
        raise DataValidationError(f"用户 {u} 没有签到，无法计算平均距离下界")
    gaps = np.abs(checkin_rows - bounds.poi_road[p]).max(axis=1)
    return float(gaps.mean())


# ---------------------------------------------------------------- 用户级剪枝


@dataclass
class PruneContext:
    bounds: OfflineBounds
    params: QueryParams
    thresholds: AbsoluteThresholds
    social: SocialNetwork
    config: EngineConfig
    poi_q: List[str]
    out_neighbours: Set[str]

    @classmethod
    def build(
        cls,
        bounds: OfflineBounds,
        networks: Networks,
        params: QueryParams,
        config: EngineConfig,
        thresholds: Optional[AbsoluteThresholds] = None,
    ) -> "PruneContext":
        networks.social.require(params.q)
        wanted = params.Q
        poi_q = [p for p in networks.bipartite.checkins(params.q) if networks.pois.keywords(p) & wanted]
        return cls(
            bounds=bounds,
            params=params,
            thresholds=thresholds or resolve_thresholds(networks, params),
            social=networks.social,
            config=config,
            poi_q=poi_q,
            out_neighbours={v for v, _ in networks.social.out_edges(params.q)},
        )

    @property
    def q(self) -> str:
        return self.params.q

    def spatial_key(self, u: str) -> float:
        """min_{p∈POI_q} lb_avg_dist_r(u,p)，无签到的用户取 inf"""
        if not self.poi_q or not self.bounds[u].checkins:
            return math.inf
        return min(lb_avg_dist_r(self.bounds, u, p) for p in self.poi_q)


def lemma_fires(reason: PruneReason, u: str, ctx: PruneContext) -> bool:
    """单条引理是否剪掉 u（不考虑开关）"""
    user = ctx.bounds[u]
    params = ctx.params
    wanted = params.Q
    if reason is PruneReason.KEYWORD:
        return not (user.keywords & wanted)
    if reason is PruneReason.OMEGA:
        keyword_sum = sum(user.key_f_sum.get(kw, 0.0) for kw in wanted)
        return min(user.ub_f_sum, keyword_sum) < ctx.thresholds.omega
    if reason is PruneReason.PI:
        keyword_max = max((user.key_f_max.get(kw, 0.0) for kw in wanted), default=0.0)
        return min(user.ub_f_avg, keyword_max) < ctx.thresholds.pi
    if reason is PruneReason.SUPPORT:
        return user.ub_sup < params.k - 2
    if reason is PruneReason.SOCIAL_DIST:
        return lb_dist_s(ctx.bounds, u, ctx.q) > params.d
    if reason is PruneReason.INFLUENCE:
        return u != ctx.q and ub_isf(ctx.bounds, ctx.social, ctx.q, u) < params.theta
    if reason is PruneReason.SPATIAL_DIST:
        if ctx.thresholds.omega == 0 or not ctx.poi_q:
            return False
        return ctx.spatial_key(u) > params.sigma
    raise ValueError(f"未知的剪枝引理: {reason}")


def prune_user(u: str, ctx: PruneContext) -> Optional[PruneReason]:
    """返回第一条生效的引理；保留时返回 None"""
    for reason in USER_CHECK_ORDER:
        if ctx.config.lemma_enabled(reason) and lemma_fires(reason, u, ctx):
            return reason
    return None


# ---------------------------------------------------------------- 汇总


def build_offline_bounds(networks: Networks, config: EngineConfig) -> OfflineBounds:
    """计算全部用户上界并选择两类枢纽"""
    start = time.perf_counter()
    users = sorted(networks.social.users)
    if not users:
        raise DataValidationError("社交网络没有用户")
    if config.social_pivots > len(users):
        raise DataValidationError(f"社交枢纽数 {config.social_pivots} 超过用户数 {len(users)}")
    if config.road_pivots > len(networks.road):
        raise DataValidationError(f"路网枢纽数 {config.road_pivots} 超过路网顶点数 {len(networks.road)}")

    logger.info(f"开始离线预计算: {len(users)} 个用户")
    rng = np.random.default_rng(config.seed)
    maximize = config.pivot_objective == "maximize"
    user_bounds = compute_user_bounds(networks, config.workers)

    social_pivots = select_social_pivots(
        networks.social,
        config.social_pivots,
        config.pivot_iterations,
        config.pivot_sample_pairs,
        rng,
        maximize,
        skeleton=networks.skeleton,
    )
    distances = RoadDistances(networks.road, max_sources=max(config.distance_cache_size, config.road_pivots))
    road_pivots = select_road_pivots(
        networks,
        config.road_pivots,
        config.pivot_iterations,
        config.pivot_sample_pairs,
        rng,
        maximize,
        distances,
    )

    hop_rows = np.vstack([_hop_row(networks.skeleton, users, p) for p in social_pivots])
    social_dist = {u: hop_rows[:, i].copy() for i, u in enumerate(users)}
    road = networks.road
    road_rows = np.vstack([distances.from_vertex(p) for p in road_pivots])
    poi_road = {p: road_rows[:, road.vertex_index[networks.poi_vertex(p)]].copy() for p in networks.pois}

    bounds = OfflineBounds(
        users=user_bounds,
        pivots=PivotSets(social=social_pivots, road=road_pivots),
        social_dist=social_dist,
        poi_road=poi_road,
    )
    bounds.build_seconds = time.perf_counter() - start
    logger.info(f"离线预计算完成，耗时 {bounds.build_seconds:.2f} 秒")
    return bounds
