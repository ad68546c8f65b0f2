"""
可复现的合成数据集生成

- 社交网络：随机生成树保证连通，再按目标出度补充出边，影响力权重服从截断高斯分布
- 路网：[0,100]² 内均匀撒点，Gabriel 图连边
- POI：挂在均匀选取的路网顶点上，关键词来自固定词典
- 签到：每个用户 [1,10] 个签到位置，频次 [1,10]
三种数据集族 uniform / gaussian / skew 决定出度目标和关键词流行度的分布。
"""

import hashlib
import json
import os
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.spatial import Delaunay, QhullError, cKDTree

from errors import DataValidationError
from logger import get_logger
from networks import (
    DATASET_FILES,
    MANIFEST_FILE,
    VISIT_FILE,
    BipartiteNetwork,
    Networks,
    PoiTable,
    RoadNetwork,
    SocialNetwork,
    write_networks,
    write_visits,
)

# 获取日志记录器
logger = get_logger()

# 点数不超过该值时直接用 O(n³) 的定义判定 Gabriel 边
BRUTE_FORCE_GABRIEL = 64


class GenConfig(BaseModel):
    seed: int = 7
    users: int = Field(30000, ge=2)
    degree_min: int = Field(8, ge=1)
    degree_max: int = Field(40, ge=1)
    distribution: Literal["uniform", "gaussian", "skew"] = "uniform"
    zipf_s: float = Field(0.8, gt=0.0)
    weight_mean: float = Field(0.5, gt=0.0, le=1.0)
    weight_sd: float = Field(0.15, ge=0.0)
    road_vertices: int = Field(20000, ge=2)
    pois: int = Field(10000, ge=1)
    dictionary: int = Field(50, ge=1)
    keywords_min: int = Field(1, ge=1)
    keywords_max: int = Field(8, ge=1)
    checkins_min: int = Field(1, ge=1)
    checkins_max: int = Field(10, ge=1)
    freq_min: int = Field(1, ge=1)
    freq_max: int = Field(10, ge=1)
    horizon: Optional[int] = Field(None, ge=1, description="时间跨度，设置后生成带时间戳的访问事件")
    tau: Optional[int] = Field(None, ge=1, description="滑动窗口长度")

    @model_validator(mode="after")
    def _check_ranges(self) -> "GenConfig":
        for low, high in (
            ("degree_min", "degree_max"),
            ("keywords_min", "keywords_max"),
            ("checkins_min", "checkins_max"),
            ("freq_min", "freq_max"),
        ):
            if getattr(self, low) > getattr(self, high):
                raise ValueError(f"{low} 不能大于 {high}")
        return self


def _rng(cfg: GenConfig, stream: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, stream])


def _zipf_weights(size: int, s: float) -> np.ndarray:
    weights = 1.0 / np.arange(1, size + 1) ** s
    return weights / weights.sum()


def _draw_in_range(rng: np.random.Generator, low: int, high: int, count: int, family: str, s: float) -> np.ndarray:
    """按数据集族在 [low, high] 内抽取整数"""
    if family == "uniform" or low == high:
        return rng.integers(low, high + 1, size=count)
    if family == "gaussian":
        values = rng.normal((low + high) / 2.0, (high - low) / 6.0, size=count)
        return np.clip(np.rint(values), low, high).astype(int)
    values = np.arange(low, high + 1)
    return rng.choice(values, size=count, p=_zipf_weights(len(values), s))


def _popularity(size: int, family: str, s: float) -> np.ndarray:
    if family == "uniform":
        return np.full(size, 1.0 / size)
    if family == "gaussian":
        ranks = np.arange(size)
        weights = np.exp(-0.5 * ((ranks - (size - 1) / 2.0) / max(size / 6.0, 1e-9)) ** 2)
        return weights / weights.sum()
    return _zipf_weights(size, s)


def _weights(rng: np.random.Generator, cfg: GenConfig, count: int) -> np.ndarray:
    return np.clip(rng.normal(cfg.weight_mean, cfg.weight_sd, size=count), 1e-3, 1.0)


# ---------------------------------------------------------------- 社交网络


def gen_social(cfg: GenConfig) -> SocialNetwork:
    rng = _rng(cfg, 0)
    n = cfg.users
    low, high = min(cfg.degree_min, n - 1), min(cfg.degree_max, n - 1)
    targets = _draw_in_range(rng, low, high, n, cfg.distribution, cfg.zipf_s)

    out: List[set] = [set() for _ in range(n)]
    order = rng.permutation(n)
    for position in range(1, n):
        child = int(order[position])
        parent = int(order[rng.integers(position)])
        # 新挂上的 child 出度为 0，父节点出度已满时改由 child 指向父节点
        if rng.random() < 0.5 and len(out[parent]) < high:
            out[parent].add(child)
        else:
            out[child].add(parent)

    for u in range(n):
        attempts = 0
        while len(out[u]) < targets[u] and attempts < 20 * high:
            v = int(rng.integers(n))
            attempts += 1
            if v != u:
                out[u].add(v)

    pairs = sorted((u, v) for u in range(n) for v in out[u])
    weights = _weights(rng, cfg, len(pairs))
    network = SocialNetwork(users=[f"u{i}" for i in range(n)])
    for (u, v), w in zip(pairs, weights):
        network.add_edge(f"u{u}", f"u{v}", float(w))
    logger.info(f"社交网络生成完成: {n} 个用户, {len(pairs)} 条边")
    return network


def import_edge_list(path: str, cfg: GenConfig, limit: Optional[int] = None) -> SocialNetwork:
    """读取 SNAP 格式边表（`a b`，# 注释），按高斯分布补权重；limit 限制保留的用户数"""
    rng = _rng(cfg, 0)
    seen: Dict[str, int] = {}
    pairs = set()
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            content = line.split("#", 1)[0].strip()
            if not content:
                continue
            tokens = content.split()
            if len(tokens) < 2:
                logger.error(f"边表格式错误 {path}:{lineno}")
                raise DataValidationError(f"{path}:{lineno}: 格式应为 'a b'")
            a, b = tokens[0], tokens[1]
            for node in (a, b):
                if node not in seen and (limit is None or len(seen) < limit):
                    seen[node] = len(seen)
            if a == b or a not in seen or b not in seen:
                continue
            pairs.add((seen[a], seen[b]))
    ordered = sorted(pairs)
    weights = _weights(rng, cfg, len(ordered))
    network = SocialNetwork(users=[f"u{i}" for i in range(len(seen))])
    for (a, b), w in zip(ordered, weights):
        network.add_edge(f"u{a}", f"u{b}", float(w))
    logger.info(f"边表导入完成: {len(seen)} 个用户, {len(ordered)} 条边")
    return network


# ---------------------------------------------------------------- 路网


def _gabriel_brute_force(points: np.ndarray) -> List[Tuple[int, int]]:
    edges = []
    n = len(points)
    for a in range(n):
        for b in range(a + 1, n):
            centre = (points[a] + points[b]) / 2.0
            radius = np.linalg.norm(points[a] - points[b]) / 2.0
            others = np.delete(np.arange(n), [a, b])
            if not len(others) or np.all(np.linalg.norm(points[others] - centre, axis=1) >= radius):
                edges.append((a, b))
    return edges


def gabriel_edges(points: np.ndarray) -> List[Tuple[int, int]]:
    """Gabriel 图：以 ab 为直径的圆内部没有其它点时连边"""
    points = np.asarray(points, dtype=float)
    if len(points) <= BRUTE_FORCE_GABRIEL:
        return _gabriel_brute_force(points)
    try:
        triangulation = Delaunay(points)
    except QhullError:
        logger.warning("Delaunay 三角化退化，改用逐对判定")
        return _gabriel_brute_force(points)
    candidates = set()
    for simplex in triangulation.simplices:
        for i in range(3):
            a, b = sorted((int(simplex[i]), int(simplex[(i + 1) % 3])))
            candidates.add((a, b))
    lookup = cKDTree(points)
    edges = []
    for a, b in sorted(candidates):
        centre = (points[a] + points[b]) / 2.0
        radius = np.linalg.norm(points[a] - points[b]) / 2.0
        inside = [
            c
            for c in lookup.query_ball_point(centre, radius)
            if c not in (a, b) and np.linalg.norm(points[c] - centre) < radius
        ]
        if not inside:
            edges.append((a, b))
    return edges


def _unique_points(rng: np.random.Generator, count: int) -> np.ndarray:
    points = rng.uniform(0.0, 100.0, size=(count, 2))
    while True:
        _, first = np.unique(points, axis=0, return_index=True)
        duplicates = np.setdiff1d(np.arange(count), first)
        if not len(duplicates):
            return points
        points[duplicates] = rng.uniform(0.0, 100.0, size=(len(duplicates), 2))


def gen_road(cfg: GenConfig) -> Tuple[RoadNetwork, PoiTable]:
    rng = _rng(cfg, 1)
    points = _unique_points(rng, cfg.road_vertices)
    coordinates = {f"r{i}": (float(x), float(y)) for i, (x, y) in enumerate(points)}
    road = RoadNetwork(coordinates, [(f"r{a}", f"r{b}", None) for a, b in gabriel_edges(points)])
    road.check_connected()

    poi_rng = _rng(cfg, 2)
    vocabulary = [f"kw{i}" for i in range(cfg.dictionary)]
    popularity = _popularity(cfg.dictionary, cfg.distribution, cfg.zipf_s)
    anchors = poi_rng.integers(cfg.road_vertices, size=cfg.pois)
    counts = poi_rng.integers(cfg.keywords_min, min(cfg.keywords_max, cfg.dictionary) + 1, size=cfg.pois)
    table = PoiTable()
    for i in range(cfg.pois):
        chosen = poi_rng.choice(cfg.dictionary, size=int(counts[i]), replace=False, p=popularity)
        table.add(f"p{i}", f"r{anchors[i]}", [vocabulary[j] for j in sorted(chosen)])
    logger.info(f"路网生成完成: {len(road)} 个顶点, {road.graph.number_of_edges()} 条边, {len(table)} 个 POI")
    return road, table


# ---------------------------------------------------------------- 签到


def gen_bipartite(cfg: GenConfig, social: SocialNetwork, pois: PoiTable) -> BipartiteNetwork:
    rng = _rng(cfg, 3)
    poi_ids = list(pois)
    bipartite = BipartiteNetwork(social.users, poi_ids)
    high = min(cfg.checkins_max, len(poi_ids))
    for u in sorted(social.users):
        count = int(rng.integers(min(cfg.checkins_min, high), high + 1))
        for j in sorted(rng.choice(len(poi_ids), size=count, replace=False)):
            bipartite.set_frequency(u, poi_ids[j], int(rng.integers(cfg.freq_min, cfg.freq_max + 1)))
    return bipartite


def gen_temporal(cfg: GenConfig, bipartite: BipartiteNetwork) -> List[Tuple[str, str, int]]:
    """把每条签到频次展开为相同数量、在 [0, horizon) 内均匀分布的访问事件"""
    if cfg.horizon is None:
        raise DataValidationError("生成访问事件需要设置 horizon")
    rng = _rng(cfg, 4)
    events = []
    for u, p, f in bipartite.edges():
        for stamp in rng.integers(cfg.horizon, size=int(f)):
            events.append((u, p, int(stamp)))
    events.sort(key=lambda e: (e[2], e[0], e[1]))
    return events


def generate_networks(cfg: GenConfig, social: Optional[SocialNetwork] = None) -> Tuple[Networks, Optional[list]]:
    """完整流水线；传入 social 时只做路网、POI 与签到的合成补充"""
    social = social or gen_social(cfg)
    road, pois = gen_road(cfg)
    bipartite = gen_bipartite(cfg, social, pois)
    networks = Networks(social, road, pois, bipartite)
    events = gen_temporal(cfg, bipartite) if cfg.horizon is not None else None
    return networks, events


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_dataset(directory: str, networks: Networks, cfg: GenConfig, events: Optional[list] = None) -> dict:
    """写出数据文件与 manifest.json（配置 + 各文件哈希，不含时间戳）"""
    write_networks(directory, networks)
    files = list(DATASET_FILES)
    if events is not None:
        write_visits(os.path.join(directory, VISIT_FILE), events)
        files.append(VISIT_FILE)
    manifest = {
        "config": cfg.model_dump(),
        "files": {name: _sha256(os.path.join(directory, name)) for name in files},
    }
    with open(os.path.join(directory, MANIFEST_FILE), "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
    logger.info(f"数据集写出完成: {directory}")
    return manifest
