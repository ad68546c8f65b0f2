"""
基于枢纽的层次索引树

叶节点按 quality(u, piv) 把用户划分到索引枢纽；上层节点按 quality_node 归并到上层枢纽，
直到只剩一个根。每个节点保存可用于整体剪枝的聚合值：
- 关键词频次聚合 key_f_sum / key_f_max（按词表顺序的数组）
- ub_sup、ub_w_in
- 每个社交枢纽上的跳数区间 [min_dist, max_dist]
"""

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np

from config import EngineConfig
from errors import DataValidationError
from logger import get_logger
from networks import Networks
from precompute import OfflineBounds, PruneContext, PruneReason, swap_refine
from scores import NormalizationConstants, ScoreModel, ScoreWeights, node_lb_dist_s

# 获取日志记录器
logger = get_logger()

NODE_CHECK_ORDER = (
    PruneReason.KEYWORD,
    PruneReason.OMEGA,
    PruneReason.PI,
    PruneReason.INFLUENCE,
    PruneReason.SUPPORT,
    PruneReason.SOCIAL_DIST,
)


class NodeKind(str, Enum):
    LEAF = "leaf"
    INTERNAL = "internal"


@dataclass
class IndexNode:
    node_id: int
    kind: NodeKind
    level: int
    pivot: str
    children: List = field(default_factory=list)
    parent: Optional[int] = None
    members: Set[str] = field(default_factory=set)
    key_f_sum: np.ndarray = None
    key_f_max: np.ndarray = None
    ub_sup: int = 0
    ub_w_in: float = 0.0
    min_dist: np.ndarray = None
    max_dist: np.ndarray = None

    @property
    def is_leaf(self) -> bool:
        return self.kind is NodeKind.LEAF


@dataclass
class IndexTree:
    nodes: Dict[int, IndexNode]
    root: int
    fanout: int
    leaf_capacity: int
    weights: ScoreWeights
    constants: NormalizationConstants
    vocabulary: List[str]
    index_pivots: List[str]
    pivot_leaf: Dict[str, int]
    user_leaf: Dict[str, int]
    bounds_fingerprint: str = ""
    epoch: int = 0
    build_seconds: float = 0.0

    def node(self, node_id: int) -> IndexNode:
        return self.nodes[node_id]

    def leaves(self) -> List[IndexNode]:
        return [self.nodes[self.pivot_leaf[p]] for p in self.index_pivots]

    def levels(self) -> Dict[int, List[IndexNode]]:
        grouped: Dict[int, List[IndexNode]] = {}
        for node in self.nodes.values():
            grouped.setdefault(node.level, []).append(node)
        return grouped

    def height(self) -> int:
        return self.nodes[self.root].level + 1

    def walk(self) -> Iterator[IndexNode]:
        """前序遍历"""
        stack = [self.root]
        while stack:
            node = self.nodes[stack.pop()]
            yield node
            if not node.is_leaf:
                stack.extend(reversed(node.children))

    def keyword_columns(self, keywords: Sequence[str]) -> List[int]:
        index = {kw: i for i, kw in enumerate(self.vocabulary)}
        return [index[kw] for kw in keywords if kw in index]


# ---------------------------------------------------------------- 聚合


def _empty_aggregates(node: IndexNode, width: int, pivots: int) -> None:
    node.key_f_sum = np.zeros(width)
    node.key_f_max = np.zeros(width)
    node.ub_sup = 0
    node.ub_w_in = 0.0
    node.min_dist = np.full(pivots, np.inf)
    node.max_dist = np.full(pivots, -np.inf)


def aggregate_leaf(node: IndexNode, model: ScoreModel) -> None:
    width, pivots = len(model.vocabulary), len(model.social_pivots)
    _empty_aggregates(node, width, pivots)
    if not node.members:
        return
    rows = [model.user_index[u] for u in node.members]
    node.key_f_sum = model.f_sum[rows].max(axis=0)
    node.key_f_max = model.f_max[rows].max(axis=0)
    node.ub_sup = int(model.sup[rows].max())
    node.ub_w_in = float(model.w_in[rows].max())
    table = np.vstack([model.bounds.social_dist[u] for u in node.members])
    node.min_dist = table.min(axis=0)
    node.max_dist = table.max(axis=0)


def aggregate_internal(node: IndexNode, tree_nodes: Dict[int, IndexNode]) -> None:
    children = [tree_nodes[c] for c in node.children]
    if not children:
        # 迁移后失去全部孩子的节点保留为空壳
        node.members = set()
        _empty_aggregates(node, len(node.key_f_sum), len(node.min_dist))
        return
    node.members = set().union(*(c.members for c in children))
    node.key_f_sum = np.max([c.key_f_sum for c in children], axis=0)
    node.key_f_max = np.max([c.key_f_max for c in children], axis=0)
    node.ub_sup = max(c.ub_sup for c in children)
    node.ub_w_in = max(c.ub_w_in for c in children)
    node.min_dist = np.min([c.min_dist for c in children], axis=0)
    node.max_dist = np.max([c.max_dist for c in children], axis=0)


def refresh_aggregates(tree: IndexTree, model: ScoreModel) -> None:
    """自底向上重算全部节点聚合值"""
    levels = tree.levels()
    for level in sorted(levels):
        for node in levels[level]:
            if node.is_leaf:
                aggregate_leaf(node, model)
            else:
                aggregate_internal(node, tree.nodes)


# ---------------------------------------------------------------- 叶层划分


def partition_social_network(model: ScoreModel, pivots: Sequence[str]) -> np.ndarray:
    """每个用户分到 quality 最高的枢纽，并列时取下标最小者"""
    if not pivots:
        raise DataValidationError("索引枢纽集合为空")
    return np.argmax(model.quality_matrix(pivots), axis=1)


def pivot_index_refinement(
    model: ScoreModel,
    count: int,
    iterations: int,
    rng: np.random.Generator,
    pairs: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    initial: Optional[List[str]] = None,
) -> Tuple[List[str], np.ndarray, float]:
    """随机交换索引枢纽，只接受使划分代价下降的交换"""

    def objective(pivots: List[str]) -> float:
        return model.pindex_cost(partition_social_network(model, pivots), pairs)

    pivots, cost = swap_refine(model.users, count, iterations, rng, objective, maximize=False, initial=initial)
    return pivots, partition_social_network(model, pivots), cost


# ---------------------------------------------------------------- 建树


def _assign_nodes(model: ScoreModel, nodes: List[IndexNode], pivots: Sequence[str]) -> List[int]:
    assignment = []
    for node in nodes:
        scores = [model.quality_node(node, p) for p in pivots]
        assignment.append(int(np.argmax(scores)))
    return assignment


def build_tree(
    model: ScoreModel,
    pivots: Sequence[str],
    assignment: np.ndarray,
    config: EngineConfig,
    rng: np.random.Generator,
) -> IndexTree:
    """由叶层划分自底向上建树"""
    nodes: Dict[int, IndexNode] = {}
    pivot_leaf: Dict[str, int] = {}
    user_leaf: Dict[str, int] = {}
    for i, piv in enumerate(pivots):
        leaf = IndexNode(node_id=len(nodes), kind=NodeKind.LEAF, level=0, pivot=piv)
        leaf.members = {model.users[j] for j in np.flatnonzero(assignment == i)}
        leaf.children = sorted(leaf.members)
        aggregate_leaf(leaf, model)
        nodes[leaf.node_id] = leaf
        pivot_leaf[piv] = leaf.node_id
        for u in leaf.members:
            user_leaf[u] = leaf.node_id

    current = list(nodes.values())
    level = 0
    while len(current) > 1 or current[0].is_leaf:
        level += 1
        if len(current) == 1:
            chosen = [current[0].pivot]
        else:
            target = math.ceil(len(current) / config.fanout)
            candidates = [node.pivot for node in current]
            chosen, _ = swap_refine(
                candidates,
                target,
                config.node_pivot_iterations,
                rng,
                lambda ps: model.tree_cost(current, ps),
                maximize=False,
            )
        groups: Dict[int, List[IndexNode]] = {}
        for node, slot in zip(current, _assign_nodes(model, current, chosen)):
            groups.setdefault(slot, []).append(node)
        parents = []
        for slot in sorted(groups):
            parent = IndexNode(node_id=len(nodes), kind=NodeKind.INTERNAL, level=level, pivot=chosen[slot])
            parent.children = [child.node_id for child in groups[slot]]
            for child in groups[slot]:
                child.parent = parent.node_id
            aggregate_internal(parent, nodes)
            nodes[parent.node_id] = parent
            parents.append(parent)
        logger.debug(f"索引第 {level} 层: {len(parents)} 个节点")
        current = parents

    return IndexTree(
        nodes=nodes,
        root=current[0].node_id,
        fanout=config.fanout,
        leaf_capacity=config.leaf_capacity,
        weights=model.weights,
        constants=model.constants,
        vocabulary=list(model.vocabulary),
        index_pivots=list(pivots),
        pivot_leaf=pivot_leaf,
        user_leaf=user_leaf,
    )


def build_index(
    networks: Networks,
    bounds: OfflineBounds,
    config: EngineConfig,
    model: Optional[ScoreModel] = None,
) -> IndexTree:
    """选择索引枢纽、划分用户并建树"""
    start = time.perf_counter()
    model = model or ScoreModel(networks, bounds, ScoreWeights.from_config(config))
    count = max(1, math.ceil(len(model.users) / config.leaf_capacity))
    rng = np.random.default_rng([config.seed, 1])
    pairs = model.cost_pairs(config.cost_sample_pairs, rng)
    logger.info(f"开始构建索引: {len(model.users)} 个用户, {count} 个叶节点")
    pivots, assignment, cost = pivot_index_refinement(model, count, config.index_iterations, rng, pairs)
    logger.info(f"索引枢纽选择完成，划分代价={cost:.4f}")
    tree = build_tree(model, pivots, assignment, config, rng)
    tree.bounds_fingerprint = bounds.fingerprint
    tree.epoch = bounds.epoch
    tree.build_seconds = time.perf_counter() - start
    logger.info(f"索引构建完成: {len(tree.nodes)} 个节点, 高度 {tree.height()}, 耗时 {tree.build_seconds:.2f} 秒")
    return tree


# ---------------------------------------------------------------- 节点剪枝


def node_lemma_fires(reason: PruneReason, node: IndexNode, ctx: PruneContext, columns: List[int]) -> bool:
    params = ctx.params
    if reason is PruneReason.KEYWORD:
        return not columns or not (node.key_f_sum[columns] > 0).any()
    if reason is PruneReason.OMEGA:
        return float(node.key_f_sum[columns].sum()) < ctx.thresholds.omega
    if reason is PruneReason.PI:
        return float(node.key_f_max[columns].max(initial=0.0)) < ctx.thresholds.pi
    if reason is PruneReason.INFLUENCE:
        if ctx.q in node.members:
            return False
        out_q = ctx.bounds[ctx.q].ub_w_out
        if node.members & ctx.out_neighbours:
            bound = max(out_q, node.ub_w_in)
        else:
            bound = out_q * node.ub_w_in
        return bound < params.theta
    if reason is PruneReason.SUPPORT:
        return node.ub_sup < params.k - 2
    if reason is PruneReason.SOCIAL_DIST:
        return node_lb_dist_s(ctx.bounds.social_dist[ctx.q], node, ctx.q) > params.d
    return False


def prune_node(node: IndexNode, ctx: PruneContext, columns: List[int]) -> Optional[PruneReason]:
    """columns 为查询关键词在词表中的下标"""
    for reason in NODE_CHECK_ORDER:
        if ctx.config.lemma_enabled(reason) and node_lemma_fires(reason, node, ctx, columns):
            return reason
    return None


def dominance_violations(tree: IndexTree, model: ScoreModel) -> List[str]:
    """检查每个节点的聚合值是否覆盖子树内全部用户"""
    problems = []
    for node in tree.nodes.values():
        for u in node.members:
            i = model.user_index[u]
            dist = model.bounds.social_dist[u]
            if (
                np.any(model.f_sum[i] > node.key_f_sum)
                or np.any(model.f_max[i] > node.key_f_max)
                or model.sup[i] > node.ub_sup
                or model.w_in[i] > node.ub_w_in
                or np.any(dist < node.min_dist)
                or np.any(dist > node.max_dist)
            ):
                problems.append(f"节点 {node.node_id} 未覆盖用户 {u}")
    return problems
