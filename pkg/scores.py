"""
索引构建用的打分函数与代价模型

用户对之间：
- bs_score：共享关键词上的频次聚合，越大兴趣越接近
- rs_score：平均路网距离，归一化到 [0,1]，越小越近
- ss_score：支持度之和、影响力上界与跳数
quality(u, piv) = W_bs·bs + W_ss·ss + (1 − W_rs·rs)

节点与上层枢纽之间只考虑二部结构和社交结构。
"""

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from pydantic import BaseModel, Field
from scipy import sparse

from config import EngineConfig
from logger import get_logger
from metrics import RoadDistances, avg_dist
from networks import Networks
from precompute import OfflineBounds

if TYPE_CHECKING:
    from index_tree import IndexNode

# 获取日志记录器
logger = get_logger()


class ScoreWeights(BaseModel):
    w_bs: float = Field(1.0 / 3.0, ge=0.0)
    w_ss: float = Field(1.0 / 3.0, ge=0.0)
    w_rs: float = Field(1.0 / 3.0, ge=0.0)

    @classmethod
    def from_config(cls, config: EngineConfig) -> "ScoreWeights":
        return cls(w_bs=config.w_bs, w_ss=config.w_ss, w_rs=config.w_rs)


@dataclass
class NormalizationConstants:
    largest_f_sum: float
    largest_f_max: float
    largest_sum_sup: float
    largest_ub_isf: float
    largest_dist_s: float
    largest_rs: float


def compute_normalization(bounds: OfflineBounds) -> NormalizationConstants:
    users = list(bounds.users.values())
    finite_hops = [
        float(row[np.isfinite(row)].max()) for row in bounds.social_dist.values() if np.isfinite(row).any()
    ]
    road_max = [float(row.max()) for row in bounds.poi_road.values() if row.size]
    return NormalizationConstants(
        largest_f_sum=max((f for b in users for f in b.key_f_sum.values()), default=0.0),
        largest_f_max=max((f for b in users for f in b.key_f_max.values()), default=0.0),
        largest_sum_sup=2.0 * max((b.ub_sup for b in users), default=0),
        largest_ub_isf=max((max(b.ub_w_out, b.ub_w_in) for b in users), default=0.0),
        largest_dist_s=max(finite_hops, default=0.0),
        largest_rs=2.0 * max(road_max, default=0.0),
    )


def _scale(values, largest: float):
    """除以归一化常数；常数为 0 时结果为 0"""
    if largest <= 0:
        return np.zeros_like(np.asarray(values, dtype=float))
    return np.asarray(values, dtype=float) / largest


def _unit(values, largest: float):
    return np.clip(_scale(values, largest), 0.0, 1.0)


def _hop_scale(hops, largest: float):
    """跳数归一化，不可达取 1"""
    hops = np.asarray(hops, dtype=float)
    finite = np.isfinite(hops)
    scaled = _unit(np.where(finite, hops, 0.0), largest)
    return np.where(finite, scaled, 1.0)


class ScoreModel:
    """按用户下标组织的打分矩阵，供划分、代价计算与迁移复用"""

    def __init__(
        self,
        networks: Networks,
        bounds: OfflineBounds,
        weights: ScoreWeights,
        constants: Optional[NormalizationConstants] = None,
        distances: Optional[RoadDistances] = None,
    ):
        self.networks = networks
        self.weights = weights
        self.users: List[str] = sorted(bounds.users)
        self.user_index: Dict[str, int] = {u: i for i, u in enumerate(self.users)}
        self.vocabulary: List[str] = networks.pois.vocabulary
        self.keyword_index: Dict[str, int] = {kw: i for i, kw in enumerate(self.vocabulary)}
        self.social_pivots: List[str] = list(bounds.pivots.social)
        self.distances = distances or RoadDistances(networks.road)
        self._hops: Dict[str, np.ndarray] = {}
        self.refresh(bounds, constants)

    # ------------------------------------------------------------ 状态

    def refresh(self, bounds: OfflineBounds, constants: Optional[NormalizationConstants] = None) -> None:
        """签到或上界变化后重建依赖频次的矩阵，社交跳数缓存保留"""
        self.bounds = bounds
        self.constants = constants or compute_normalization(bounds)
        n, width = len(self.users), len(self.vocabulary)
        self.f_sum = np.zeros((n, width))
        self.f_max = np.zeros((n, width))
        for i, u in enumerate(self.users):
            user = bounds.users[u]
            for kw, value in user.key_f_sum.items():
                self.f_sum[i, self.keyword_index[kw]] = value
            for kw, value in user.key_f_max.items():
                self.f_max[i, self.keyword_index[kw]] = value
        self.sup = np.array([bounds.users[u].ub_sup for u in self.users], dtype=float)
        self.w_out = np.array([bounds.users[u].ub_w_out for u in self.users])
        self.w_in = np.array([bounds.users[u].ub_w_in for u in self.users])
        self._keyword_strength = _scale(self.f_sum, self.constants.largest_f_sum) + _scale(
            self.f_max, self.constants.largest_f_max
        )
        self._keyword_mask = (self.f_sum > 0).astype(float)
        self._checkins = self._checkin_matrix()
        self._spread: Dict[str, np.ndarray] = {}
        self._columns: Dict[str, np.ndarray] = {}
        self._pair_cache: Dict[Tuple[bytes, bytes], Tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def _checkin_matrix(self) -> sparse.csr_matrix:
        road = self.networks.road
        rows, cols, vals = [], [], []
        for i, u in enumerate(self.users):
            checkins = self.bounds.users[u].checkins
            for p in checkins:
                rows.append(i)
                cols.append(road.vertex_index[self.networks.poi_vertex(p)])
                vals.append(1.0 / len(checkins))
        return sparse.csr_matrix((vals, (rows, cols)), shape=(len(self.users), len(road.vertex_ids)))

    def _has_checkins(self) -> np.ndarray:
        return np.diff(self._checkins.indptr) > 0

    def hops_from(self, v: str) -> np.ndarray:
        if v not in self._hops:
            lengths = nx.single_source_shortest_path_length(self.networks.skeleton, v)
            self._hops[v] = np.array([lengths.get(u, np.inf) for u in self.users], dtype=float)
        return self._hops[v]

    def spread(self, v: str) -> Optional[np.ndarray]:
        """v 的签到位置到每个路网顶点的平均距离；无签到时为 None"""
        if v not in self._spread:
            checkins = self.bounds.users[v].checkins
            if not checkins:
                self._spread[v] = None
            else:
                rows = [self.distances.from_vertex(self.networks.poi_vertex(p)) for p in checkins]
                self._spread[v] = np.mean(rows, axis=0)
        return self._spread[v]

    # ------------------------------------------------------------ 用户对

    def bs_score(self, u: str, v: str) -> float:
        i, j = self.user_index[u], self.user_index[v]
        shared = self._keyword_mask[i] * self._keyword_mask[j]
        return float((shared * (self._keyword_strength[i] + self._keyword_strength[j])).sum())

    def rs_score(self, u: str, v: str) -> float:
        v_checkins = self.bounds.users[v].checkins
        if not v_checkins or not self.bounds.users[u].checkins:
            return 1.0
        mean = sum(avg_dist(self.networks, u, p, self.distances) for p in v_checkins) / len(v_checkins)
        return float(_unit(mean, self.constants.largest_rs))

    def ub_isf(self, u: str, v: str) -> float:
        if u == v:
            return 1.0
        i, j = self.user_index[u], self.user_index[v]
        if self.networks.social.has_edge(u, v):
            return float(max(self.w_out[i], self.w_in[j]))
        return float(self.w_out[i] * self.w_in[j])

    def ss_score(self, u: str, v: str) -> float:
        i, j = self.user_index[u], self.user_index[v]
        c = self.constants
        hops = self.hops_from(v)[i]
        return float(
            _unit(self.sup[i] + self.sup[j], c.largest_sum_sup)
            + _unit(self.ub_isf(u, v), c.largest_ub_isf)
            + (1.0 - _hop_scale(hops, c.largest_dist_s))
        )

    def quality(self, u: str, piv: str) -> float:
        w = self.weights
        return (
            w.w_bs * self.bs_score(u, piv)
            + w.w_ss * self.ss_score(u, piv)
            + (1.0 - w.w_rs * self.rs_score(u, piv))
        )

    # ------------------------------------------------------------ 向量化

    def rs_column(self, piv: str) -> np.ndarray:
        spread = self.spread(piv)
        if spread is None:
            return np.ones(len(self.users))
        column = _unit(self._checkins @ spread, self.constants.largest_rs)
        return np.where(self._has_checkins(), column, 1.0)

    def ss_column(self, piv: str) -> np.ndarray:
        j = self.user_index[piv]
        c = self.constants
        isf = self.w_out * self.w_in[j]
        for source, _ in self.networks.social.in_edges(piv):
            i = self.user_index[source]
            isf[i] = max(self.w_out[i], self.w_in[j])
        isf[j] = 1.0
        return (
            _unit(self.sup + self.sup[j], c.largest_sum_sup)
            + _unit(isf, c.largest_ub_isf)
            + (1.0 - _hop_scale(self.hops_from(piv), c.largest_dist_s))
        )

    def bs_column(self, piv: str) -> np.ndarray:
        j = self.user_index[piv]
        return self._keyword_strength @ self._keyword_mask[j] + self._keyword_mask @ self._keyword_strength[j]

    def quality_column(self, piv: str) -> np.ndarray:
        """quality(u, piv) 对所有用户的取值"""
        if piv not in self._columns:
            w = self.weights
            self._columns[piv] = (
                w.w_bs * self.bs_column(piv)
                + w.w_ss * self.ss_column(piv)
                + (1.0 - w.w_rs * self.rs_column(piv))
            )
        return self._columns[piv]

    def quality_matrix(self, pivots: Sequence[str]) -> np.ndarray:
        if not pivots:
            return np.zeros((len(self.users), 0))
        return np.column_stack([self.quality_column(p) for p in pivots])

    # ------------------------------------------------------------ 划分代价

    def cost_pairs(self, limit: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """有序用户对 (u≠v)；总数不超过 limit 时取全部"""
        n = len(self.users)
        if n < 2:
            return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
        if n * (n - 1) <= limit:
            left, right = np.nonzero(~np.eye(n, dtype=bool))
            return left, right
        left = rng.integers(n, size=limit)
        right = rng.integers(n - 1, size=limit)
        return left, right + (right >= left)

    def pair_scores(self, left: np.ndarray, right: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        key = (left.tobytes(), right.tobytes())
        if key not in self._pair_cache:
            bs = (
                self._keyword_strength[left] * self._keyword_mask[right]
                + self._keyword_mask[left] * self._keyword_strength[right]
            ).sum(axis=1)
            rs = np.empty(len(left))
            ss = np.empty(len(left))
            for j in np.unique(right):
                mask = right == j
                v = self.users[int(j)]
                rs[mask] = self.rs_column(v)[left[mask]]
                ss[mask] = self.ss_column(v)[left[mask]]
            self._pair_cache[key] = (bs, rs, ss)
        return self._pair_cache[key]

    def pindex_cost(
        self,
        assignment: np.ndarray,
        pairs: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    ) -> float:
        """划分代价：同一子图内用户对的三类得分按权重汇总，越小越好

        assignment[i] 为第 i 个用户所属子图编号；pairs 为 None 时使用全部有序对。
        """
        assignment = np.asarray(assignment)
        if pairs is None:
            pairs = self.cost_pairs(len(self.users) ** 2, np.random.default_rng(0))
        left, right = pairs
        bs, rs, ss = self.pair_scores(left, right)
        same = assignment[left] == assignment[right]
        w = self.weights
        return float(
            w.w_bs * (1.0 - bs[same].sum()) + w.w_rs * rs[same].sum() + w.w_ss * (1.0 - ss[same].sum())
        )

    # ------------------------------------------------------------ 节点

    def bs_score_node(self, node: "IndexNode", piv: str) -> float:
        j = self.user_index[piv]
        c = self.constants
        shared = (node.key_f_sum > 0) & (self.f_sum[j] > 0)
        total_sum = (node.key_f_sum + self.f_sum[j])[shared].sum()
        total_max = (node.key_f_max + self.f_max[j])[shared].sum()
        return float(_scale(total_sum, c.largest_f_sum) + _scale(total_max, c.largest_f_max))

    def node_ub_isf(self, piv: str, node: "IndexNode") -> float:
        """ub_ISF(piv, N)：N 含 piv 时为 1，含 piv 的出邻居时取 max 分支"""
        if piv in node.members:
            return 1.0
        j = self.user_index[piv]
        if any(v in node.members for v, _ in self.networks.social.out_edges(piv)):
            return float(max(self.w_out[j], node.ub_w_in))
        return float(self.w_out[j] * node.ub_w_in)

    def node_lb_dist(self, piv: str, node: "IndexNode") -> float:
        return node_lb_dist_s(self.bounds.social_dist[piv], node, piv)

    def ss_score_node(self, node: "IndexNode", piv: str) -> float:
        j = self.user_index[piv]
        c = self.constants
        return float(
            _unit(node.ub_sup + self.sup[j], c.largest_sum_sup)
            + _unit(self.node_ub_isf(piv, node), c.largest_ub_isf)
            + (1.0 - _hop_scale(self.node_lb_dist(piv, node), c.largest_dist_s))
        )

    def quality_node(self, node: "IndexNode", piv: str) -> float:
        w = self.weights
        return w.w_bs * self.bs_score_node(node, piv) + w.w_ss * self.ss_score_node(node, piv)

    def tree_cost(self, nodes: Iterable["IndexNode"], pivots: Sequence[str]) -> float:
        """每个节点按最优上层枢纽计分后的树代价，越小越好"""
        bs_total = ss_total = 0.0
        for node in nodes:
            scores = [self.quality_node(node, p) for p in pivots]
            best = pivots[int(np.argmax(scores))]
            bs_total += self.bs_score_node(node, best)
            ss_total += self.ss_score_node(node, best)
        w = self.weights
        return w.w_bs * (1.0 - bs_total) + w.w_ss * (1.0 - ss_total)


def node_lb_dist_s(q_dist: np.ndarray, node: "IndexNode", q: str) -> float:
    """q 到节点内任一用户的跳数下界：各枢纽上区间间隙的最大值"""
    if q in node.members:
        return 0.0
    finite = np.isfinite(q_dist)
    if not finite.any():
        return 0.0
    dq = q_dist[finite]
    low, high = node.min_dist[finite], node.max_dist[finite]
    with np.errstate(invalid="ignore"):
        gaps = np.maximum(np.maximum(low - dq, dq - high), 0.0)
    gaps = np.nan_to_num(gaps, nan=0.0, posinf=math.inf)
    return float(gaps.max())
