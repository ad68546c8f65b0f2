"""
二部时空社交网络的数据模型与文本加载器

三张网络：
- SocialNetwork: 用户间有向带权影响力图
- RoadNetwork + PoiTable: 平面路网与挂在路网顶点上的关键词 POI
- BipartiteNetwork: 用户到 POI 的签到边及访问频次
"""

import math
import os
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Iterator, List, Optional, Set, Tuple

import networkx as nx
from pydantic import BaseModel, Field, field_validator

from errors import DataValidationError, UnknownEntityError
from logger import get_logger

# 获取日志记录器
logger = get_logger()

# 数据集目录中的文件名
SOCIAL_FILE = "social.txt"
ROAD_VERTEX_FILE = "road_vertices.txt"
ROAD_EDGE_FILE = "road_edges.txt"
POI_FILE = "pois.txt"
CHECKIN_FILE = "checkins.txt"
VISIT_FILE = "visits.txt"
MANIFEST_FILE = "manifest.json"
DATASET_FILES = (SOCIAL_FILE, ROAD_VERTEX_FILE, ROAD_EDGE_FILE, POI_FILE, CHECKIN_FILE)


def _fail(path: str, lineno: int, message: str) -> None:
    logger.error(f"数据文件校验失败 {path}:{lineno}: {message}")
    raise DataValidationError(f"{path}:{lineno}: {message}")


def _records(path: str) -> Iterator[Tuple[int, List[str]]]:
    """逐行读取，去掉 # 注释与空行"""
    if not os.path.exists(path):
        logger.error(f"数据文件不存在: {path}")
        raise DataValidationError(f"数据文件不存在: {path}")
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            content = line.split("#", 1)[0].strip()
            if content:
                yield lineno, content.split()


def _number(path: str, lineno: int, token: str) -> float:
    try:
        value = float(token)
    except ValueError:
        _fail(path, lineno, f"无法解析数值: {token}")
    if math.isnan(value) or math.isinf(value):
        _fail(path, lineno, f"数值必须有限: {token}")
    return value


class SocialNetwork:
    """有向带权社交网络，权重位于 (0,1]"""

    def __init__(
        self,
        users: Iterable[str] = (),
        edges: Optional[Dict[Tuple[str, str], float]] = None,
    ):
        self.graph = nx.DiGraph()
        self.graph.add_nodes_from(users)
        for (u, v), w in (edges or {}).items():
            self.add_edge(u, v, w)

    def add_user(self, u: str) -> None:
        self.graph.add_node(u)

    def add_edge(self, u: str, v: str, w: float) -> None:
        if u == v:
            raise DataValidationError(f"不允许自环: {u}")
        if not 0.0 < w <= 1.0:
            raise DataValidationError(f"影响力权重必须位于 (0,1]: ({u},{v})={w}")
        if self.graph.has_edge(u, v):
            raise DataValidationError(f"重复的有向边: ({u},{v})")
        self.graph.add_edge(u, v, weight=float(w))

    @property
    def users(self) -> Set[str]:
        return set(self.graph.nodes)

    @property
    def edges(self) -> Dict[Tuple[str, str], float]:
        return {(u, v): w for u, v, w in self.graph.edges(data="weight")}

    def __contains__(self, u: str) -> bool:
        return u in self.graph

    def __len__(self) -> int:
        return self.graph.number_of_nodes()

    def require(self, u: str) -> None:
        if u not in self.graph:
            raise UnknownEntityError(f"未知用户: {u}")

    def has_edge(self, u: str, v: str) -> bool:
        return self.graph.has_edge(u, v)

    def weight(self, u: str, v: str) -> float:
        return self.graph[u][v]["weight"]

    def out_edges(self, u: str) -> Iterator[Tuple[str, float]]:
        for _, v, w in self.graph.out_edges(u, data="weight"):
            yield v, w

    def in_edges(self, u: str) -> Iterator[Tuple[str, float]]:
        for v, _, w in self.graph.in_edges(u, data="weight"):
            yield v, w

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SocialNetwork):
            return NotImplemented
        return self.users == other.users and self.edges == other.edges


class RoadNetwork:
    """无向路网，顶点带二维坐标，边长缺省为欧氏距离"""

    def __init__(
        self,
        coordinates: Dict[str, Tuple[float, float]],
        edges: Iterable[Tuple[str, str, Optional[float]]] = (),
    ):
        self.graph = nx.Graph()
        for vertex, (x, y) in coordinates.items():
            self.graph.add_node(vertex, x=float(x), y=float(y))
        for a, b, length in edges:
            self.add_edge(a, b, length)
        self.vertex_ids: List[str] = sorted(self.graph.nodes)
        self.vertex_index: Dict[str, int] = {v: i for i, v in enumerate(self.vertex_ids)}

    def add_edge(self, a: str, b: str, length: Optional[float] = None) -> None:
        for vertex in (a, b):
            if vertex not in self.graph:
                raise DataValidationError(f"路网边引用了不存在的顶点: {vertex}")
        if a == b:
            raise DataValidationError(f"路网不允许自环: {a}")
        if self.graph.has_edge(a, b):
            raise DataValidationError(f"重复的路网边: ({a},{b})")
        if length is None:
            length = self.euclidean(a, b)
        if length < 0:
            raise DataValidationError(f"路段长度不能为负: ({a},{b})={length}")
        self.graph.add_edge(a, b, length=float(length))

    def position(self, v: str) -> Tuple[float, float]:
        self.require(v)
        data = self.graph.nodes[v]
        return data["x"], data["y"]

    def euclidean(self, a: str, b: str) -> float:
        (xa, ya), (xb, yb) = self.position(a), self.position(b)
        return math.hypot(xa - xb, ya - yb)

    @property
    def edges(self) -> Dict[Tuple[str, str], float]:
        return {tuple(sorted((a, b))): w for a, b, w in self.graph.edges(data="length")}

    def require(self, v: str) -> None:
        if v not in self.graph:
            raise UnknownEntityError(f"未知路网顶点: {v}")

    def check_connected(self) -> None:
        if self.graph.number_of_nodes() == 0 or not nx.is_connected(self.graph):
            raise DataValidationError("路网必须是单个连通分量")

    def __len__(self) -> int:
        return self.graph.number_of_nodes()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RoadNetwork):
            return NotImplemented
        mine = {v: self.position(v) for v in self.vertex_ids}
        theirs = {v: other.position(v) for v in other.vertex_ids}
        return mine == theirs and self.edges == other.edges


@dataclass(frozen=True)
class Poi:
    vertex: str
    keywords: FrozenSet[str]


class PoiTable:
    """POI 表：poi id -> (路网顶点, 关键词集合)"""

    def __init__(self, pois: Optional[Dict[str, Poi]] = None):
        self._pois: Dict[str, Poi] = {}
        for poi_id, poi in (pois or {}).items():
            self.add(poi_id, poi.vertex, poi.keywords)

    def add(self, poi_id: str, vertex: str, keywords: Iterable[str]) -> None:
        keywords = frozenset(keywords)
        if not keywords:
            raise DataValidationError(f"POI {poi_id} 的关键词集合为空")
        if poi_id in self._pois:
            raise DataValidationError(f"重复的 POI: {poi_id}")
        self._pois[poi_id] = Poi(vertex, keywords)

    def __getitem__(self, poi_id: str) -> Poi:
        try:
            return self._pois[poi_id]
        except KeyError:
            raise UnknownEntityError(f"未知 POI: {poi_id}") from None

    def __contains__(self, poi_id: str) -> bool:
        return poi_id in self._pois

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._pois))

    def __len__(self) -> int:
        return len(self._pois)

    def vertex(self, poi_id: str) -> str:
        return self[poi_id].vertex

    def keywords(self, poi_id: str) -> FrozenSet[str]:
        return self[poi_id].keywords

    def matching(self, query_keywords: Iterable[str]) -> Set[str]:
        """与查询关键词有交集的 POI"""
        wanted = set(query_keywords)
        return {p for p, poi in self._pois.items() if poi.keywords & wanted}

    @property
    def vocabulary(self) -> List[str]:
        return sorted({kw for poi in self._pois.values() for kw in poi.keywords})

    def validate_against(self, road: RoadNetwork) -> None:
        for poi_id, poi in self._pois.items():
            if poi.vertex not in road.graph:
                raise DataValidationError(f"POI {poi_id} 引用了不存在的路网顶点 {poi.vertex}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PoiTable):
            return NotImplemented
        return self._pois == other._pois


class BipartiteNetwork:
    """用户-POI 签到二部图，频次为正；频次归零的边直接删除"""

    def __init__(
        self,
        users: Iterable[str],
        pois: Iterable[str],
        frequencies: Optional[Dict[Tuple[str, str], float]] = None,
    ):
        self._users: Set[str] = set(users)
        self._pois: Set[str] = set(pois)
        self._freq: Dict[str, Dict[str, float]] = {}
        self._visitors: Dict[str, Set[str]] = {}
        for (u, p), f in (frequencies or {}).items():
            if f <= 0:
                raise DataValidationError(f"签到频次必须为正: ({u},{p})={f}")
            self.set_frequency(u, p, f)

    def _require(self, u: str, p: str) -> None:
        if u not in self._users:
            raise UnknownEntityError(f"未知用户: {u}")
        if p not in self._pois:
            raise UnknownEntityError(f"未知 POI: {p}")

    @property
    def users(self) -> Set[str]:
        return set(self._users)

    @property
    def pois(self) -> Set[str]:
        return set(self._pois)

    def frequency(self, u: str, p: str) -> float:
        return self._freq.get(u, {}).get(p, 0.0)

    def set_frequency(self, u: str, p: str, f: float) -> None:
        self._require(u, p)
        if f < 0:
            raise DataValidationError(f"签到频次不能为负: ({u},{p})={f}")
        if f == 0:
            self._freq.get(u, {}).pop(p, None)
            self._visitors.get(p, set()).discard(u)
            return
        self._freq.setdefault(u, {})[p] = float(f)
        self._visitors.setdefault(p, set()).add(u)

    def add_frequency(self, u: str, p: str, delta: float) -> float:
        value = self.frequency(u, p) + delta
        self.set_frequency(u, p, max(value, 0.0))
        return self.frequency(u, p)

    def visited(self, u: str) -> Dict[str, float]:
        return dict(self._freq.get(u, {}))

    def checkins(self, u: str) -> List[str]:
        """u.L：有签到边的 POI"""
        return sorted(self._freq.get(u, {}))

    def visitors(self, p: str) -> Set[str]:
        return set(self._visitors.get(p, set()))

    def edges(self) -> Iterator[Tuple[str, str, float]]:
        for u in sorted(self._freq):
            for p in sorted(self._freq[u]):
                yield u, p, self._freq[u][p]

    def f_sum(self, u: str, pois: Iterable[str]) -> float:
        visited = self._freq.get(u, {})
        return sum(visited.get(p, 0.0) for p in pois)

    def f_avg(self, users: Iterable[str], p: str) -> float:
        """POI p 在给定用户中的平均访问频次，分母只计访问过 p 的用户"""
        values = [self.frequency(u, p) for u in users if self.frequency(u, p) != 0]
        return sum(values) / len(values) if values else 0.0

    def max_frequency(self) -> float:
        return max((f for _, _, f in self.edges()), default=0.0)

    def max_f_sum(self) -> float:
        return max((sum(v.values()) for v in self._freq.values()), default=0.0)

    def copy(self) -> "BipartiteNetwork":
        return BipartiteNetwork(self._users, self._pois, {(u, p): f for u, p, f in self.edges()})

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BipartiteNetwork):
            return NotImplemented
        return list(self.edges()) == list(other.edges())


def undirected_skeleton(g: SocialNetwork) -> nx.Graph:
    """无向骨架：u、v 之间有任一方向的边即相邻"""
    skeleton = nx.Graph()
    skeleton.add_nodes_from(g.graph.nodes)
    skeleton.add_edges_from(g.graph.edges())
    return skeleton


@dataclass
class Networks:
    """一个数据集的全部网络"""

    social: SocialNetwork
    road: RoadNetwork
    pois: PoiTable
    bipartite: BipartiteNetwork
    _skeleton: Optional[nx.Graph] = field(default=None, repr=False, compare=False)

    @property
    def skeleton(self) -> nx.Graph:
        if self._skeleton is None:
            self._skeleton = undirected_skeleton(self.social)
        return self._skeleton

    def poi_vertex(self, p: str) -> str:
        return self.pois.vertex(p)

    def with_bipartite(self, bipartite: BipartiteNetwork) -> "Networks":
        return Networks(self.social, self.road, self.pois, bipartite, self._skeleton)


class QueryParams(BaseModel):
    """KCS-BSSN 查询参数"""

    q: str = Field(..., description="查询用户")
    keywords: List[str] = Field(..., min_length=1, description="查询关键词集合 Q")
    k: int = Field(3, description="truss 参数，必须大于 2")
    d: int = Field(3, ge=1, description="社交跳数上限")
    omega: float = Field(0.4, gt=0.0, le=1.0, description="用户累计频次阈值（相对值）")
    pi: float = Field(0.4, gt=0.0, le=1.0, description="POI 平均频次阈值（相对值）")
    theta: float = Field(0.4, gt=0.0, le=1.0, description="影响力阈值")
    sigma: float = Field(5.0, ge=0.0, description="平均路网距离上限")

    @field_validator("k")
    @classmethod
    def _check_k(cls, value: int) -> int:
        if value <= 2:
            raise ValueError("k 必须大于 2")
        return value

    @field_validator("keywords")
    @classmethod
    def _normalize_keywords(cls, value: List[str]) -> List[str]:
        return sorted(set(value))

    @property
    def Q(self) -> FrozenSet[str]:
        return frozenset(self.keywords)


# ---------------------------------------------------------------- 加载


def load_social(path: str) -> SocialNetwork:
    """读取 `u v w` 有向边；单独一个 token 的行声明孤立用户"""
    network = SocialNetwork()
    for lineno, tokens in _records(path):
        if len(tokens) == 1:
            network.add_user(tokens[0])
            continue
        if len(tokens) != 3:
            _fail(path, lineno, f"格式应为 'u v w'，实际为 {tokens}")
        u, v, raw = tokens
        weight = _number(path, lineno, raw)
        network.add_user(u)
        network.add_user(v)
        try:
            network.add_edge(u, v, weight)
        except DataValidationError as e:
            _fail(path, lineno, str(e))
    logger.info(f"社交网络加载完成: {len(network)} 个用户, {network.graph.number_of_edges()} 条边")
    return network


def load_road(vertex_path: str, edge_path: str) -> RoadNetwork:
    coordinates: Dict[str, Tuple[float, float]] = {}
    for lineno, tokens in _records(vertex_path):
        if len(tokens) != 3:
            _fail(vertex_path, lineno, f"格式应为 'r x y'，实际为 {tokens}")
        if tokens[0] in coordinates:
            _fail(vertex_path, lineno, f"重复的路网顶点: {tokens[0]}")
        coordinates[tokens[0]] = (
            _number(vertex_path, lineno, tokens[1]),
            _number(vertex_path, lineno, tokens[2]),
        )
    road = RoadNetwork(coordinates)
    for lineno, tokens in _records(edge_path):
        if len(tokens) not in (2, 3):
            _fail(edge_path, lineno, f"格式应为 'r1 r2 [length]'，实际为 {tokens}")
        length = _number(edge_path, lineno, tokens[2]) if len(tokens) == 3 else None
        try:
            road.add_edge(tokens[0], tokens[1], length)
        except DataValidationError as e:
            _fail(edge_path, lineno, str(e))
    try:
        road.check_connected()
    except DataValidationError:
        logger.error(f"路网不连通: {edge_path}")
        raise
    logger.info(f"路网加载完成: {len(road)} 个顶点, {road.graph.number_of_edges()} 条边")
    return road


def load_pois(path: str, road: RoadNetwork) -> PoiTable:
    table = PoiTable()
    for lineno, tokens in _records(path):
        if len(tokens) != 3:
            _fail(path, lineno, f"格式应为 'p r kw1,kw2,...'，实际为 {tokens}")
        poi_id, vertex, raw = tokens
        if vertex not in road.graph:
            _fail(path, lineno, f"POI {poi_id} 引用了不存在的路网顶点 {vertex}")
        keywords = [kw for kw in raw.split(",") if kw]
        try:
            table.add(poi_id, vertex, keywords)
        except DataValidationError as e:
            _fail(path, lineno, str(e))
    logger.info(f"POI 加载完成: {len(table)} 个")
    return table


def load_checkins(path: str, social: SocialNetwork, pois: PoiTable) -> BipartiteNetwork:
    """读取静态签到 `u p f`"""
    bipartite = BipartiteNetwork(social.users, list(pois))
    for lineno, tokens in _records(path):
        if len(tokens) != 3:
            _fail(path, lineno, f"格式应为 'u p f'，实际为 {tokens}")
        u, p, raw = tokens
        if u not in social:
            _fail(path, lineno, f"签到引用了不存在的用户 {u}")
        if p not in pois:
            _fail(path, lineno, f"签到引用了不存在的 POI {p}")
        f = _number(path, lineno, raw)
        if f <= 0:
            _fail(path, lineno, f"签到频次必须为正: {raw}")
        if bipartite.frequency(u, p) > 0:
            _fail(path, lineno, f"重复的签到边 ({u},{p})")
        bipartite.set_frequency(u, p, f)
    logger.info(f"签到加载完成: {sum(1 for _ in bipartite.edges())} 条边")
    return bipartite


def load_visits(path: str, social: SocialNetwork, pois: PoiTable) -> List[Tuple[str, str, int]]:
    """读取带时间戳的访问事件 `u p t`，每次访问一行"""
    events: List[Tuple[str, str, int]] = []
    for lineno, tokens in _records(path):
        if len(tokens) != 3:
            _fail(path, lineno, f"格式应为 'u p t'，实际为 {tokens}")
        u, p, raw = tokens
        if u not in social:
            _fail(path, lineno, f"访问引用了不存在的用户 {u}")
        if p not in pois:
            _fail(path, lineno, f"访问引用了不存在的 POI {p}")
        try:
            t = int(raw)
        except ValueError:
            _fail(path, lineno, f"时间戳必须为整数: {raw}")
        if t < 0:
            _fail(path, lineno, f"时间戳不能为负: {raw}")
        events.append((u, p, t))
    logger.info(f"访问事件加载完成: {len(events)} 条")
    return events


def load_networks(directory: str) -> Networks:
    """按 路网 -> POI -> 社交 -> 签到 的顺序加载整个数据集"""
    road = load_road(
        os.path.join(directory, ROAD_VERTEX_FILE), os.path.join(directory, ROAD_EDGE_FILE)
    )
    pois = load_pois(os.path.join(directory, POI_FILE), road)
    social = load_social(os.path.join(directory, SOCIAL_FILE))
    bipartite = load_checkins(os.path.join(directory, CHECKIN_FILE), social, pois)
    return Networks(social, road, pois, bipartite)


# ---------------------------------------------------------------- 写出


def write_social(path: str, g: SocialNetwork) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("# u v w\n")
        linked = set()
        for (u, v), w in sorted(g.edges.items()):
            handle.write(f"{u} {v} {float(w)!r}\n")
            linked.update((u, v))
        for u in sorted(g.users - linked):
            handle.write(f"{u}\n")


def write_road(vertex_path: str, edge_path: str, road: RoadNetwork) -> None:
    with open(vertex_path, "w", encoding="utf-8") as handle:
        handle.write("# r x y\n")
        for v in road.vertex_ids:
            x, y = road.position(v)
            handle.write(f"{v} {float(x)!r} {float(y)!r}\n")
    with open(edge_path, "w", encoding="utf-8") as handle:
        handle.write("# r1 r2 length\n")
        for (a, b), length in sorted(road.edges.items()):
            handle.write(f"{a} {b} {float(length)!r}\n")


def write_pois(path: str, table: PoiTable) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("# p r kw1,kw2,...\n")
        for poi_id in table:
            poi = table[poi_id]
            handle.write(f"{poi_id} {poi.vertex} {','.join(sorted(poi.keywords))}\n")


def _format_count(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def write_checkins(path: str, bipartite: BipartiteNetwork) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("# u p f\n")
        for u, p, f in bipartite.edges():
            handle.write(f"{u} {p} {_format_count(f)}\n")


def write_visits(path: str, events: Iterable[Tuple[str, str, int]]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("# u p t\n")
        for u, p, t in events:
            handle.write(f"{u} {p} {int(t)}\n")


def write_networks(directory: str, networks: Networks) -> None:
    os.makedirs(directory, exist_ok=True)
    write_social(os.path.join(directory, SOCIAL_FILE), networks.social)
    write_road(
        os.path.join(directory, ROAD_VERTEX_FILE),
        os.path.join(directory, ROAD_EDGE_FILE),
        networks.road,
    )
    write_pois(os.path.join(directory, POI_FILE), networks.pois)
    write_checkins(os.path.join(directory, CHECKIN_FILE), networks.bipartite)
    logger.info(f"数据集已写出: {directory}")
