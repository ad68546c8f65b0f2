import os

os.environ.setdefault("LOG_TO_FILE", "false")
os.environ.setdefault("LOG_LEVEL", "WARNING")

import numpy as np
import pytest

from config import EngineConfig
from datagen import GenConfig, generate_networks
from index_tree import build_index
from networks import BipartiteNetwork, Networks, PoiTable, QueryParams, RoadNetwork, SocialNetwork
from precompute import build_offline_bounds


def small_config(**overrides) -> EngineConfig:
    values = dict(
        social_pivots=2,
        road_pivots=2,
        pivot_iterations=10,
        pivot_sample_pairs=200,
        fanout=2,
        leaf_capacity=3,
        index_iterations=5,
        node_pivot_iterations=5,
        cost_sample_pairs=400,
    )
    values.update(overrides)
    return EngineConfig(**values)


def clique_networks() -> Networks:
    """a,b,c,d 构成 4-团；e 只连 a；f 与 c、d 成三角形但签到点很远"""
    social = SocialNetwork(users=list("abcdef"))
    for u, v in [("a", "b"), ("a", "c"), ("a", "d"), ("b", "c"), ("b", "d"), ("c", "d"), ("a", "e"), ("c", "f"), ("d", "f")]:
        social.add_edge(u, v, 0.9)
        social.add_edge(v, u, 0.9)
    road = RoadNetwork(
        {"r0": (0.0, 0.0), "r1": (1.0, 0.0), "r2": (2.0, 0.0), "r3": (10.0, 0.0)},
        [("r0", "r1", None), ("r1", "r2", None), ("r2", "r3", None)],
    )
    pois = PoiTable()
    pois.add("p0", "r0", ["cafe"])
    pois.add("p1", "r1", ["cafe", "park"])
    pois.add("p2", "r3", ["cafe"])
    pois.add("p3", "r2", ["gym"])
    frequencies = {
        ("a", "p0"): 3,
        ("a", "p1"): 2,
        ("b", "p0"): 2,
        ("b", "p1"): 2,
        ("c", "p1"): 3,
        ("c", "p3"): 4,
        ("d", "p0"): 2,
        ("d", "p1"): 1,
        ("e", "p0"): 4,
        ("f", "p2"): 5,
    }
    bipartite = BipartiteNetwork(social.users, list(pois), frequencies)
    return Networks(social, road, pois, bipartite)


def clique_params(**overrides) -> QueryParams:
    values = dict(q="a", keywords=["cafe", "park"], k=3, d=2, omega=0.4, pi=0.3, theta=0.4, sigma=5.0)
    values.update(overrides)
    return QueryParams(**values)


def tiny_gen_config(seed: int, **overrides) -> GenConfig:
    rng = np.random.default_rng([seed, 99])
    values = dict(
        seed=seed,
        users=int(rng.integers(8, 15)),
        degree_min=2,
        degree_max=4,
        distribution=["uniform", "gaussian", "skew"][seed % 3],
        road_vertices=int(rng.integers(15, 30)),
        pois=int(rng.integers(6, 15)),
        dictionary=6,
        keywords_min=1,
        keywords_max=3,
        checkins_min=1,
        checkins_max=4,
        freq_min=1,
        freq_max=5,
    )
    values.update(overrides)
    return GenConfig(**values)


def tiny_instance(seed: int, **overrides) -> Networks:
    networks, _ = generate_networks(tiny_gen_config(seed, **overrides))
    return networks


def tiny_query(networks: Networks, seed: int) -> QueryParams:
    """参数在默认比例附近随机取值，σ 按 [0,100]² 的坐标范围放大"""
    rng = np.random.default_rng([seed, 7])
    users = sorted(u for u in networks.social.users if networks.bipartite.checkins(u))
    q = users[int(rng.integers(len(users)))]
    own = sorted({kw for p in networks.bipartite.checkins(q) for kw in networks.pois.keywords(p)})
    extra = sorted(networks.pois.vocabulary)
    keywords = own[: int(rng.integers(1, len(own) + 1))] + [extra[int(rng.integers(len(extra)))]]
    return QueryParams(
        q=q,
        keywords=keywords,
        k=3,
        d=int(rng.integers(1, 4)),
        omega=float(rng.choice([0.1, 0.2, 0.3, 0.4])),
        pi=float(rng.choice([0.1, 0.2, 0.3, 0.4])),
        theta=float(rng.choice([0.05, 0.1, 0.2])),
        sigma=float(rng.choice([20.0, 40.0, 80.0])),
    )


def build_engine(networks: Networks, config: EngineConfig = None):
    config = config or small_config()
    bounds = build_offline_bounds(networks, config)
    tree = build_index(networks, bounds, config)
    return bounds, tree


@pytest.fixture
def clique():
    return clique_networks()


@pytest.fixture
def clique_engine(clique):
    bounds, tree = build_engine(clique)
    return clique, bounds, tree
