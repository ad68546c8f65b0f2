import copy

import numpy as np
import pytest
from pydantic import ValidationError

from commands.stream_command import warm_start
from datagen import generate_networks
from errors import DataValidationError
from index_tree import build_index, dominance_violations, refresh_aggregates
from metrics import verify_community
from precompute import build_offline_bounds, compute_user_bounds
from query_engine import sample_queries
from scores import ScoreModel
from temporal import (
    EngineState,
    TemporalVisitLog,
    UpdateBatch,
    UpdateOp,
    _move_user,
    apply_batch,
    maintain_index,
    window_frequency,
    windowed_bipartite,
)

from conftest import clique_networks, clique_params, small_config, tiny_gen_config, tiny_instance

TAU = 30
BATCH_SIZES = (10, 25, 100)


def stream_setup(seed: int):
    cfg = tiny_gen_config(
        seed, users=16, checkins_min=4, checkins_max=6, freq_min=8, freq_max=12, horizon=120, tau=TAU
    )
    networks, events = generate_networks(cfg)
    networks, log, pending, t0 = warm_start(networks, events, 0.3, TAU)
    config = small_config(seed=seed)
    bounds = build_offline_bounds(networks, config)
    tree = build_index(networks, bounds, config)
    state = EngineState.create(networks, bounds, tree, config, log)
    queries = sample_queries(
        networks, 3, np.random.default_rng(seed), keyword_count=2, d=2, omega=0.2, pi=0.2, theta=0.1, sigma=60.0
    )
    for params in queries:
        state.register(params)
    return state, events, pending, t0


def replay(state, pending, t0, batch_size, check=None, individual=False):
    t = t0
    for start in range(0, len(pending), batch_size):
        chunk = pending[start : start + batch_size]
        t = max(t, chunk[-1][2])
        apply_batch(state, UpdateBatch(op=UpdateOp.INSERTION, events=chunk, t=t, tau=TAU), measure_individual=individual)
        if check:
            check(state)
        stale = state.log.stale(t, TAU)
        apply_batch(state, UpdateBatch(op=UpdateOp.DELETION, events=stale, t=t, tau=TAU), measure_individual=individual)
        if check:
            check(state)
    return t


def communities_verify(state):
    for community in state.communities:
        if community.active:
            report = verify_community(community.answer, state.networks, community.params, distances=state.distances)
            assert report.valid, report.failed()


class TestUpdateBatch:
    def test_insertion_after_now_rejected(self):
        with pytest.raises(ValidationError):
            UpdateBatch(op=UpdateOp.INSERTION, events=[("a", "p0", 9)], t=5, tau=3)

    def test_negative_stamp_rejected(self):
        with pytest.raises(ValidationError):
            UpdateBatch(op=UpdateOp.DELETION, events=[("a", "p0", -1)], t=5, tau=3)

    def test_window_start(self):
        batch = UpdateBatch(op=UpdateOp.DELETION, events=[("b", "p0", 1), ("a", "p1", 0)], t=10, tau=4)
        assert batch.window_start == 7
        assert batch.users() == ["a", "b"]


class TestVisitLog:
    def test_window_frequency_counts_stamps_in_window(self):
        log = TemporalVisitLog([("u", "p", 1), ("u", "p", 5), ("u", "p", 6), ("u", "q", 6), ("u", "p", 9)])
        assert window_frequency(log, "u", "p", 6, 2) == 2
        assert window_frequency(log, "u", "p", 9, 10) == 4
        assert window_frequency(log, "u", "p", 0, 1) == 0
        with pytest.raises(DataValidationError):
            window_frequency(log, "u", "p", 6, 0)

    def test_matches_literal_formula(self):
        rng = np.random.default_rng(4)
        events = [(f"u{rng.integers(3)}", f"p{rng.integers(3)}", int(rng.integers(50))) for _ in range(300)]
        log = TemporalVisitLog(events)
        for _ in range(1000):
            u, p = f"u{rng.integers(3)}", f"p{rng.integers(3)}"
            t, tau = int(rng.integers(60)), int(rng.integers(1, 20))
            expected = sum(1 for eu, ep, stamp in events if eu == u and ep == p and t - tau < stamp <= t)
            assert log.window_frequency(u, p, t, tau) == expected

    def test_expire_reports_pairs(self):
        log = TemporalVisitLog([("u", "p", 1), ("u", "q", 8), ("v", "p", 2)])
        assert log.expire(9, 3, ["u"]) == {("u", "p")}
        assert log.events("u") == [("q", 8)]
        assert log.events("v") == [("p", 2)]
        assert len(log) == 2

    def test_stale_lists_every_expired_event(self):
        log = TemporalVisitLog([("v", "p", 2), ("u", "p", 1), ("u", "q", 8), ("w", "q", 6)])
        assert log.stale(9, 3) == [("u", "p", 1), ("v", "p", 2), ("w", "q", 6)]
        assert log.stale(9, 10) == []

    def test_windowed_bipartite_drops_zero_edges(self):
        networks = clique_networks()
        log = TemporalVisitLog([("a", "p0", 1), ("a", "p0", 9), ("b", "p1", 2)])
        bipartite = windowed_bipartite(networks, log, 10, 5)
        assert list(bipartite.edges()) == [("a", "p0", 1.0)]


class TestBatches:
    def _state(self):
        networks = clique_networks()
        config = small_config()
        bounds = build_offline_bounds(networks, config)
        tree = build_index(networks, bounds, config)
        return EngineState.create(networks, bounds, tree, config)

    def test_empty_batch_is_noop(self):
        state = self._state()
        timings = apply_batch(state, UpdateBatch(op=UpdateOp.DELETION, events=[], t=3, tau=2))
        assert timings.size == 0
        assert state.bounds.epoch == 0

    def test_unknown_poi_rejected(self):
        state = self._state()
        with pytest.raises(DataValidationError):
            apply_batch(state, UpdateBatch(op=UpdateOp.INSERTION, events=[("a", "nowhere", 1)], t=1, tau=2))

    def test_insertion_bumps_epoch_and_frequency(self):
        state = self._state()
        before = state.networks.bipartite.frequency("e", "p1")
        timings = apply_batch(state, UpdateBatch(op=UpdateOp.INSERTION, events=[("e", "p1", 4)], t=4, tau=2))
        assert state.networks.bipartite.frequency("e", "p1") == before + 1
        assert state.bounds.epoch == 1 and state.tree.epoch == 1
        assert timings.data_b >= 0.0
        assert state.bounds["e"].key_f_sum["park"] == 1.0

    def test_stale_insertion_only_logged(self):
        state = self._state()
        apply_batch(state, UpdateBatch(op=UpdateOp.INSERTION, events=[("e", "p1", 1)], t=10, tau=2))
        assert state.networks.bipartite.frequency("e", "p1") == 0
        assert state.log.events("e") == [("p1", 1)]

    def _logged_state(self, events, t, tau):
        state = self._state()
        state.log = TemporalVisitLog(events)
        for u, p, _ in events:
            state.networks.bipartite.set_frequency(u, p, state.log.window_frequency(u, p, t, tau))
        return state

    def test_deletion_expires_users_not_named(self):
        events = [("a", "p0", 1), ("b", "p0", 1), ("c", "p1", 2), ("a", "p0", 9)]
        state = self._logged_state(events, 3, 3)
        apply_batch(state, UpdateBatch(op=UpdateOp.DELETION, events=[("a", "p0", 1)], t=10, tau=3))
        assert state.networks.bipartite.frequency("a", "p0") == 1
        assert state.networks.bipartite.frequency("b", "p0") == 0
        assert state.networks.bipartite.frequency("c", "p1") == 0
        assert state.log.stale(10, 3) == []
        assert len(state.log) == 1

    def test_empty_deletion_still_expires_log(self):
        events = [("b", "p0", 1), ("c", "p1", 2)]
        state = self._logged_state(events, 3, 3)
        apply_batch(state, UpdateBatch(op=UpdateOp.DELETION, events=[], t=10, tau=3))
        assert state.networks.bipartite.frequency("b", "p0") == 0
        assert state.networks.bipartite.frequency("c", "p1") == 0
        assert state.bounds.epoch == 1

    def test_registered_community_tracks_expiry(self):
        state = self._state()
        params = clique_params()
        community = state.register(params)
        assert community.answer.users == ["a", "b", "c", "d"]
        # d 的全部访问过期后，社区重新精化
        state.log = TemporalVisitLog([("d", "p0", 0), ("d", "p1", 0)])
        timings = apply_batch(state, UpdateBatch(op=UpdateOp.DELETION, events=[("d", "p0", 0)], t=10, tau=3))
        assert state.networks.bipartite.checkins("d") == []
        assert "d" not in state.communities[0].answer.users
        assert timings.community_changes >= 1
        communities_verify(state)


class TestRebuildEquivalence:
    @pytest.mark.parametrize("seed", range(20))
    def test_incremental_matches_rebuild(self, seed):
        state, events, pending, t0 = stream_setup(seed)
        assert len(events) >= 500
        t = replay(state, pending, t0, BATCH_SIZES[seed % 3], check=communities_verify)

        full = TemporalVisitLog([event for event in events if event[2] <= t])
        assert state.networks.bipartite == windowed_bipartite(state.networks, full, t, TAU)
        assert state.bounds.users == compute_user_bounds(state.networks)
        assert state.tree.epoch == state.bounds.epoch

        fresh_bounds = copy.deepcopy(state.bounds)
        fresh_bounds.users = compute_user_bounds(state.networks)
        fresh_model = ScoreModel(state.networks, fresh_bounds, state.tree.weights)
        rebuilt = copy.deepcopy(state.tree)
        refresh_aggregates(rebuilt, fresh_model)
        for node_id, node in state.tree.nodes.items():
            other = rebuilt.nodes[node_id]
            assert node.members == other.members
            np.testing.assert_array_equal(node.key_f_sum, other.key_f_sum)
            np.testing.assert_array_equal(node.key_f_max, other.key_f_max)
            assert node.ub_sup == other.ub_sup
            assert node.ub_w_in == other.ub_w_in
            np.testing.assert_array_equal(node.min_dist, other.min_dist)
            np.testing.assert_array_equal(node.max_dist, other.max_dist)
        assert dominance_violations(state.tree, state.model) == []

    def test_individual_measurement_does_not_change_results(self):
        first, _, pending, t0 = stream_setup(3)
        second, _, _, _ = stream_setup(3)
        replay(first, pending, t0, 25)
        replay(second, pending, t0, 25, individual=True)
        assert [c.answer for c in first.communities] == [c.answer for c in second.communities]
        assert [c.active for c in first.communities] == [c.active for c in second.communities]


class TestIndexMaintenance:
    def _displaced_state(self, seed):
        """把一个用户挪到别的叶子，制造可迁移的状态"""
        networks = tiny_instance(seed)
        config = small_config(seed=seed)
        bounds = build_offline_bounds(networks, config)
        state = EngineState.create(networks, bounds, build_index(networks, bounds, config), config)
        tree = state.tree
        crowded = next(leaf for leaf in tree.leaves() if len(leaf.members) >= 2)
        u = sorted(crowded.members)[0]
        target = next(leaf for leaf in tree.leaves() if leaf.node_id != crowded.node_id)
        _move_user(tree, u, target.node_id)
        return state

    @pytest.mark.parametrize("seed", range(5))
    def test_infinite_margin_never_migrates(self, seed):
        state = self._displaced_state(seed)
        before = dict(state.tree.user_leaf)
        migrations, remaps = maintain_index(state, set(state.networks.social.users), float("inf"))
        assert (migrations, remaps) == (0, 0)
        assert state.tree.user_leaf == before
        assert dominance_violations(state.tree, state.model) == []

    @pytest.mark.parametrize("seed", range(5))
    def test_zero_margin_migrates_on_strict_gain(self, seed):
        state = self._displaced_state(seed)
        tree = state.tree
        pivots = list(tree.index_pivots)
        leaf_pivot = {node_id: piv for piv, node_id in tree.pivot_leaf.items()}
        matrix = state.model.quality_matrix(pivots)
        expected = {}
        for u in sorted(state.networks.social.users):
            row = matrix[state.model.user_index[u]]
            best = int(np.argmax(row))
            current = pivots.index(leaf_pivot[tree.user_leaf[u]])
            target = best if row[best] > row[current] else current
            expected[u] = tree.pivot_leaf[pivots[target]]
        moved = sum(expected[u] != tree.user_leaf[u] for u in expected)

        migrations, _ = maintain_index(state, set(state.networks.social.users), 0.0)
        assert migrations == moved >= 0
        assert tree.user_leaf == expected
        for u, leaf_id in expected.items():
            assert u in tree.nodes[leaf_id].members
        assert dominance_violations(tree, state.model) == []
