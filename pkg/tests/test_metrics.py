import copy
import math

import networkx as nx
import numpy as np
import pytest

from errors import DataValidationError
from metrics import (
    CommunityAnswer,
    CommunityEvaluator,
    RoadDistances,
    avg_dist,
    edge_support,
    hop_distance,
    isf,
    isf_from,
    resolve_thresholds,
    road_distance,
    truss_edges,
    truss_hops,
    verify_community,
    verify_kd_truss,
    verify_keyword_core,
)
from networks import SocialNetwork

from conftest import clique_networks, clique_params, tiny_instance


def literal_isf(g: SocialNetwork, u: str, v: str) -> float:
    """枚举全部简单路径取乘积最大值"""
    if u == v:
        return 1.0
    best = 0.0
    for path in nx.all_simple_paths(g.graph, u, v):
        best = max(best, math.prod(g.weight(a, b) for a, b in zip(path, path[1:])))
    return best


class TestInfluence:
    def test_longer_path_can_win(self):
        g = SocialNetwork(users=["a", "b", "c"])
        g.add_edge("a", "c", 0.2)
        g.add_edge("a", "b", 0.9)
        g.add_edge("b", "c", 0.8)
        assert isf(g, "a", "c") == pytest.approx(0.72)

    def test_direction_matters(self):
        g = SocialNetwork(users=["a", "b"])
        g.add_edge("a", "b", 0.5)
        assert isf(g, "a", "b") == pytest.approx(0.5)
        assert isf(g, "b", "a") == 0.0
        assert isf(g, "a", "a") == 1.0

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_path_enumeration(self, seed):
        networks = tiny_instance(seed, users=8, degree_max=3)
        g = networks.social
        users = sorted(g.users)
        for u in users[:4]:
            scores = isf_from(g, u)
            for v in users:
                expected = literal_isf(g, u, v)
                got = 1.0 if u == v else scores.get(v, 0.0)
                assert got == pytest.approx(expected, rel=1e-9)


class TestDistances:
    def test_hops_and_unreachable(self):
        networks = clique_networks()
        skeleton = networks.skeleton
        assert hop_distance(skeleton, "e", "f") == 3
        skeleton.add_node("island")
        assert hop_distance(skeleton, "a", "island") == math.inf

    def test_road_distance_follows_edges(self):
        networks = clique_networks()
        assert road_distance(networks.road, "r0", "r3") == pytest.approx(10.0)
        cache = RoadDistances(networks.road, max_sources=1)
        assert cache.between("r3", "r1") == pytest.approx(9.0)
        assert cache.between("r0", "r2") == pytest.approx(2.0)

    def test_avg_dist_is_mean_over_checkins(self):
        networks = clique_networks()
        assert avg_dist(networks, "c", "p0") == pytest.approx(1.5)
        assert avg_dist(networks, "a", "p2") == pytest.approx(9.5)

    def test_avg_dist_matches_literal_mean(self):
        networks = tiny_instance(3)
        rng = np.random.default_rng(0)
        users = sorted(u for u in networks.social.users if networks.bipartite.checkins(u))
        pois = list(networks.pois)
        for _ in range(50):
            u = users[int(rng.integers(len(users)))]
            p = pois[int(rng.integers(len(pois)))]
            target = networks.poi_vertex(p)
            expected = np.mean(
                [
                    nx.dijkstra_path_length(networks.road.graph, networks.poi_vertex(c), target, weight="length")
                    for c in networks.bipartite.checkins(u)
                ]
            )
            assert avg_dist(networks, u, p) == pytest.approx(expected, rel=1e-9)

    def test_avg_dist_requires_checkins(self):
        networks = clique_networks()
        networks.bipartite.set_frequency("f", "p2", 0)
        with pytest.raises(DataValidationError):
            avg_dist(networks, "f", "p0")


class TestTruss:
    def test_support_counts_triangles(self):
        networks = clique_networks()
        support = edge_support(networks.skeleton)
        assert support[("c", "d")] == 3
        assert support[("a", "e")] == 0
        assert support[("c", "f")] == 1

    def test_truss_peeling(self):
        skeleton = clique_networks().skeleton
        everyone = "abcdef"
        assert ("a", "e") not in truss_edges(skeleton, everyone, 3)
        assert ("c", "f") in truss_edges(skeleton, everyone, 3)
        assert ("c", "f") not in truss_edges(skeleton, everyone, 4)
        assert truss_edges(skeleton, everyone, 5) == set()

    def test_truss_hops(self):
        skeleton = clique_networks().skeleton
        assert truss_hops(skeleton, "abcdef", "a", 3) == {"a": 0, "b": 1, "c": 1, "d": 1, "f": 2}
        assert truss_hops(skeleton, "ae", "a", 3) == {}

    def test_kd_truss(self):
        skeleton = clique_networks().skeleton
        assert verify_kd_truss(skeleton, "abcd", "a", 4, 1)
        assert not verify_kd_truss(skeleton, "abcde", "a", 3, 2)
        assert verify_kd_truss(skeleton, "abcdf", "a", 3, 2)
        assert not verify_kd_truss(skeleton, "abcdf", "a", 3, 1)
        assert not verify_kd_truss(skeleton, "bcd", "a", 3, 2)
        assert not verify_kd_truss(skeleton, "a", "a", 3, 2)


class TestKeywordCore:
    def test_thresholds_are_relative(self):
        thresholds = resolve_thresholds(clique_networks(), clique_params())
        assert thresholds.omega == pytest.approx(0.4 * 7)
        assert thresholds.pi == pytest.approx(0.3 * 5)

    def test_core_conditions(self):
        networks = clique_networks()
        keywords = ["cafe", "park"]
        assert verify_keyword_core(networks, "abcd", ["p0", "p1"], keywords, 2.8, 1.5)
        # c 在 {p0} 上频次为 0
        assert not verify_keyword_core(networks, "abcd", ["p0"], keywords, 2.8, 1.5)
        # p3 不匹配关键词
        assert not verify_keyword_core(networks, "c", ["p1", "p3"], keywords, 1.0, 1.0)
        assert not verify_keyword_core(networks, "abcd", ["p0", "p1"], keywords, 2.8, 2.5)


class TestCommunityEvaluator:
    def test_clique_community(self):
        evaluator = CommunityEvaluator(clique_networks(), clique_params())
        found = evaluator.evaluate("abcd")
        assert found == (frozenset("abcd"), frozenset({"p0", "p1"}))
        assert evaluator.evaluate("abcdf") is None
        assert evaluator.evaluate("bcd") is None

    def test_canonical_pois_respect_sigma(self):
        evaluator = CommunityEvaluator(clique_networks(), clique_params(sigma=0.5))
        assert evaluator.canonical_pois("abcd") == {"p1"}
        assert evaluator.evaluate("abcd") is None
        assert evaluator.evaluate("abd") == (frozenset("abd"), frozenset({"p0", "p1"}))

    def test_influence_threshold(self):
        evaluator = CommunityEvaluator(clique_networks(), clique_params(theta=0.95))
        assert evaluator.evaluate("abcd") is None


class TestVerifyCommunity:
    def test_valid_and_maximal(self):
        networks = clique_networks()
        params = clique_params()
        answer = CommunityAnswer.build(networks, "abcd", ["p0", "p1"])
        report = verify_community(answer, networks, params, check_maximality=True)
        assert report.valid
        assert report.maximality is True
        assert ("c", "p1", 3.0) in answer.edges

    def test_not_maximal(self):
        networks = clique_networks()
        answer = CommunityAnswer.build(networks, "abd", ["p0", "p1"])
        report = verify_community(answer, networks, clique_params(), check_maximality=True)
        assert report.valid
        assert report.maximality is False
        assert report.failed() == ["maximality"]

    def test_reports_each_failure(self):
        networks = clique_networks()
        answer = CommunityAnswer.build(networks, "abcdf", ["p0", "p1"])
        report = verify_community(answer, networks, clique_params())
        assert not report.valid
        assert "spatial" in report.failed()
        assert "keyword_core" in report.failed()


class TestInfluenceMonotone:
    @pytest.mark.parametrize("seed", range(6))
    def test_adding_edge_never_lowers_isf(self, seed):
        networks = tiny_instance(seed, users=10)
        before = networks.social
        after = copy.deepcopy(before)
        rng = np.random.default_rng(seed)
        users = sorted(before.users)
        missing = [(u, v) for u in users for v in users if u != v and not before.graph.has_edge(u, v)]
        u, v = missing[int(rng.integers(len(missing)))]
        after.add_edge(u, v, float(rng.uniform(0.1, 1.0)))
        for source in users:
            old, new = isf_from(before, source), isf_from(after, source)
            for target in users:
                assert new.get(target, 0.0) >= old.get(target, 0.0) - 1e-12
        assert isf(after, u, v) >= isf(before, u, v)
