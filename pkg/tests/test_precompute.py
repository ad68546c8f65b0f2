import math

import numpy as np
import pytest

from errors import DataValidationError
from metrics import avg_dist, edge_support, hop_distance, isf_from
from networks import BipartiteNetwork, Networks, PoiTable, RoadNetwork, SocialNetwork
from precompute import (
    PruneContext,
    PruneReason,
    build_offline_bounds,
    compute_user_bounds,
    lb_avg_dist_r,
    lb_dist_s,
    lemma_fires,
    prune_user,
    recompute_user,
    select_road_pivots,
    select_social_pivots,
    social_pivot_objective,
    swap_refine,
    ub_isf,
)

from conftest import clique_networks, clique_params, small_config, tiny_instance


class TestSwapRefine:
    def test_accepts_only_improvements(self):
        rng = np.random.default_rng(1)
        values = {c: i for i, c in enumerate("abcdefgh")}
        chosen, best = swap_refine(list("abcdefgh"), 3, 200, rng, lambda ps: sum(values[p] for p in ps))
        assert sorted(chosen) == ["f", "g", "h"]
        assert best == 18

    def test_minimize(self):
        rng = np.random.default_rng(2)
        values = {c: i for i, c in enumerate("abcdef")}
        chosen, best = swap_refine(list("abcdef"), 2, 200, rng, lambda ps: sum(values[p] for p in ps), maximize=False)
        assert sorted(chosen) == ["a", "b"]
        assert best == 1

    def test_too_many_pivots(self):
        with pytest.raises(DataValidationError):
            swap_refine(["a"], 2, 5, np.random.default_rng(0), lambda ps: 0.0)

    def test_deterministic(self):
        objective = lambda ps: float(len(set("".join(ps)) & set("aeiou")))
        first = swap_refine(list("abcdefghij"), 3, 30, np.random.default_rng(5), objective)
        second = swap_refine(list("abcdefghij"), 3, 30, np.random.default_rng(5), objective)
        assert first == second


class TestPivotObjective:
    def test_unreachable_entries_ignored(self):
        rows = np.array([[0.0, 2.0, np.inf], [1.0, 1.0, 3.0]])
        left, right = np.array([0, 0]), np.array([1, 2])
        # 第一对: max(|0-2|, |1-1|)=2；第二对只看第二个枢纽: |1-3|=2
        assert social_pivot_objective(rows, left, right) == pytest.approx(4.0)


def path_social() -> SocialNetwork:
    social = SocialNetwork(users=list("abcde"))
    for u, v in zip("abcd", "bcde"):
        social.add_edge(u, v, 0.5)
        social.add_edge(v, u, 0.5)
    return social


def path_road_networks() -> Networks:
    """r0–r4 一条路；每个用户都在两端的 POI 签到"""
    social = SocialNetwork(users=["u0", "u1", "u2"])
    road = RoadNetwork(
        {f"r{i}": (float(i), 0.0) for i in range(5)},
        [(f"r{i}", f"r{i + 1}", None) for i in range(4)],
    )
    pois = PoiTable()
    pois.add("west", "r0", ["cafe"])
    pois.add("east", "r4", ["cafe"])
    frequencies = {(u, p): 1 for u in social.users for p in ("west", "east")}
    return Networks(social, road, pois, BipartiteNetwork(social.users, list(pois), frequencies))


class TestSocialPivots:
    def test_path_endpoint_is_optimal(self):
        social = path_social()
        pivots = select_social_pivots(social, 1, 50, 100, np.random.default_rng(3))
        assert pivots in (["a"], ["e"])

        # 穷举五个单枢纽选择
        users = sorted(social.users)
        left, right = np.triu_indices(len(users), k=1)
        hops = {p: np.array([abs(users.index(p) - i) for i in range(len(users))], dtype=float) for p in users}
        values = {p: social_pivot_objective(hops[p][None, :], left, right) for p in users}
        assert values[pivots[0]] == max(values.values()) == 20.0
        assert values["c"] == 10.0

    @pytest.mark.parametrize("seed", range(4))
    def test_zero_iterations_keeps_initial_set(self, seed):
        pivots = select_social_pivots(path_social(), 2, 0, 100, np.random.default_rng(seed))
        expected = np.random.default_rng(seed).choice(5, size=2, replace=False)
        assert pivots == [list("abcde")[i] for i in expected]

    def test_saturated_set(self):
        pivots = select_social_pivots(path_social(), 5, 20, 100, np.random.default_rng(0))
        assert sorted(pivots) == list("abcde")

    def test_more_pivots_than_users(self):
        with pytest.raises(DataValidationError):
            select_social_pivots(path_social(), 6, 5, 100, np.random.default_rng(0))


class TestRoadPivots:
    def test_path_endpoint_is_optimal(self):
        pivots = select_road_pivots(path_road_networks(), 1, 50, 40, np.random.default_rng(2))
        assert pivots in (["r0"], ["r4"])

    def test_zero_iterations_keeps_initial_set(self):
        networks = path_road_networks()
        pivots = select_road_pivots(networks, 2, 0, 40, np.random.default_rng(6))
        rng = np.random.default_rng(6)
        rng.integers(3, size=40)
        rng.integers(2, size=40)
        expected = rng.choice(5, size=2, replace=False)
        assert pivots == [f"r{i}" for i in expected]

    def test_saturated_set(self):
        pivots = select_road_pivots(path_road_networks(), 5, 20, 40, np.random.default_rng(1))
        assert sorted(pivots) == [f"r{i}" for i in range(5)]

    def test_more_pivots_than_vertices(self):
        with pytest.raises(DataValidationError):
            select_road_pivots(path_road_networks(), 6, 5, 40, np.random.default_rng(0))


class TestOfflineBounds:
    @pytest.mark.parametrize("seed", range(12))
    def test_bounds_hold(self, seed):
        networks = tiny_instance(seed)
        bounds = build_offline_bounds(networks, small_config(seed=seed))
        g, skeleton = networks.social, networks.skeleton
        users = sorted(g.users)
        support = edge_support(skeleton)
        for (a, b), s in support.items():
            assert bounds[a].ub_sup >= s and bounds[b].ub_sup >= s
        for u in users:
            scores = isf_from(g, u)
            for v in users:
                if u != v:
                    assert ub_isf(bounds, g, u, v) >= scores.get(v, 0.0) - 1e-12
                assert lb_dist_s(bounds, u, v) <= hop_distance(skeleton, u, v)
            if not networks.bipartite.checkins(u):
                continue
            for p in networks.pois:
                assert lb_avg_dist_r(bounds, u, p) <= avg_dist(networks, u, p) + 1e-9

    def test_keyword_aggregates(self):
        networks = clique_networks()
        bounds = build_offline_bounds(networks, small_config())
        a = bounds["a"]
        assert a.keywords == frozenset({"cafe", "park"})
        assert a.key_f_sum == {"cafe": 5.0, "park": 2.0}
        assert a.key_f_max == {"cafe": 3.0, "park": 2.0}
        assert a.ub_f_sum == 5.0
        assert a.ub_f_avg == 3.0
        assert a.ub_w_out == pytest.approx(0.9)
        assert bounds["e"].ub_sup == 0

    def test_parallel_bounds_match_serial(self):
        networks = tiny_instance(3, users=14)
        serial = compute_user_bounds(networks)
        assert compute_user_bounds(networks, workers=3) == serial
        assert list(serial) == sorted(networks.social.users)

    def test_recompute_keeps_social_part(self):
        networks = clique_networks()
        bounds = build_offline_bounds(networks, small_config())
        networks.bipartite.set_frequency("e", "p1", 6)
        fresh = recompute_user(bounds, networks, "e")
        assert fresh.key_f_sum["park"] == 6.0
        assert fresh.ub_w_out == pytest.approx(0.9)
        assert bounds["e"] is fresh

    def test_rejects_excess_pivots(self):
        with pytest.raises(DataValidationError):
            build_offline_bounds(clique_networks(), small_config(social_pivots=10))
        with pytest.raises(DataValidationError):
            build_offline_bounds(clique_networks(), small_config(road_pivots=5))

    def test_seeded_pivots_repeat(self):
        first = build_offline_bounds(tiny_instance(4), small_config(seed=3))
        second = build_offline_bounds(tiny_instance(4), small_config(seed=3))
        assert first.pivots == second.pivots


class TestUserLemmas:
    def _ctx(self, params, config=None):
        networks = clique_networks()
        config = config or small_config()
        bounds = build_offline_bounds(networks, config)
        return PruneContext.build(bounds, networks, params, config)

    def test_community_members_survive(self):
        ctx = self._ctx(clique_params())
        for u in "abcd":
            assert prune_user(u, ctx) is None

    def test_individual_lemmas(self):
        ctx = self._ctx(clique_params(keywords=["park"]))
        assert lemma_fires(PruneReason.KEYWORD, "e", ctx)
        assert lemma_fires(PruneReason.SUPPORT, "e", ctx)
        assert not lemma_fires(PruneReason.KEYWORD, "c", ctx)
        assert not lemma_fires(PruneReason.INFLUENCE, "a", ctx)

    def test_omega_uses_keyword_sum(self):
        # b 在 park 上只有 2，低于 ω_abs = 0.4·7
        ctx = self._ctx(clique_params(keywords=["park"]))
        assert lemma_fires(PruneReason.OMEGA, "b", ctx)
        assert not lemma_fires(PruneReason.OMEGA, "c", ctx)

    def test_spatial_lemma(self):
        ctx = self._ctx(clique_params())
        assert ctx.poi_q == ["p0", "p1"]
        assert lemma_fires(PruneReason.SPATIAL_DIST, "f", ctx)
        assert not lemma_fires(PruneReason.SPATIAL_DIST, "c", ctx)

    def test_disabled_lemma_is_skipped(self):
        params = clique_params(keywords=["park"])
        ctx = self._ctx(params, small_config(disabled_lemmas=["Keyword", "Omega", "Pi", "Support", "SpatialDist"]))
        assert prune_user("e", ctx) is None

    def test_social_distance_for_isolated_user(self):
        networks = clique_networks()
        networks.social.add_user("z")
        config = small_config()
        bounds = build_offline_bounds(networks, config)
        assert lb_dist_s(bounds, "z", "a") == math.inf
        ctx = PruneContext.build(bounds, networks, clique_params(), config)
        assert lemma_fires(PruneReason.SOCIAL_DIST, "z", ctx)
        assert ctx.spatial_key("z") == math.inf
