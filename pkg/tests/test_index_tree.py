import numpy as np
import pytest

from index_tree import (
    build_index,
    dominance_violations,
    node_lemma_fires,
    partition_social_network,
    pivot_index_refinement,
    prune_node,
)
from precompute import PruneContext, PruneReason, build_offline_bounds
from scores import ScoreModel, ScoreWeights

from conftest import clique_networks, clique_params, small_config, tiny_instance


def engine(networks, config=None):
    config = config or small_config()
    bounds = build_offline_bounds(networks, config)
    model = ScoreModel(networks, bounds, ScoreWeights.from_config(config))
    return bounds, model, build_index(networks, bounds, config, model)


class TestTreeShape:
    @pytest.mark.parametrize("seed", range(6))
    def test_leaves_partition_users(self, seed):
        networks = tiny_instance(seed)
        _, model, tree = engine(networks)
        seen = []
        for leaf in tree.leaves():
            seen.extend(leaf.members)
            for u in leaf.members:
                assert tree.user_leaf[u] == leaf.node_id
        assert sorted(seen) == sorted(networks.social.users)
        assert tree.node(tree.root).members == networks.social.users

    @pytest.mark.parametrize("seed", range(6))
    def test_parent_links_and_fanout(self, seed):
        _, _, tree = engine(tiny_instance(seed))
        root = tree.node(tree.root)
        assert root.parent is None
        assert not root.is_leaf
        for node in tree.walk():
            if node.is_leaf:
                assert node.level == 0
                continue
            for child_id in node.children:
                child = tree.node(child_id)
                assert child.parent == node.node_id
                assert child.level == node.level - 1

    def test_single_leaf_is_wrapped(self):
        _, _, tree = engine(clique_networks(), small_config(leaf_capacity=64))
        assert len(tree.leaves()) == 1
        assert tree.height() == 2

    def test_epoch_copied_from_bounds(self):
        bounds, _, tree = engine(clique_networks())
        assert tree.epoch == bounds.epoch
        assert tree.bounds_fingerprint == bounds.fingerprint

    def test_seeded_build_repeats(self):
        _, _, first = engine(tiny_instance(5))
        _, _, second = engine(tiny_instance(5))
        assert first.index_pivots == second.index_pivots
        assert {n: sorted(node.members) for n, node in first.nodes.items()} == {
            n: sorted(node.members) for n, node in second.nodes.items()
        }


class TestAggregates:
    @pytest.mark.parametrize("seed", range(10))
    def test_dominance(self, seed):
        _, model, tree = engine(tiny_instance(seed))
        assert dominance_violations(tree, model) == []


class TestPartition:
    def test_assignment_is_argmax_quality(self):
        _, model, _ = engine(tiny_instance(0))
        pivots = model.users[:3]
        assignment = partition_social_network(model, pivots)
        matrix = model.quality_matrix(pivots)
        for i in range(len(model.users)):
            assert matrix[i, assignment[i]] == pytest.approx(matrix[i].max())

    def test_refinement_never_worsens(self):
        _, model, _ = engine(tiny_instance(1))
        pairs = model.cost_pairs(1000, np.random.default_rng(0))
        initial = model.users[:3]
        start = model.pindex_cost(partition_social_network(model, initial), pairs)
        _, _, cost = pivot_index_refinement(model, 3, 20, np.random.default_rng(0), pairs, initial=list(initial))
        assert cost <= start


class TestNodeLemmas:
    def test_nodes_holding_community_survive(self):
        networks = clique_networks()
        config = small_config()
        bounds, _, tree = engine(networks, config)
        params = clique_params()
        ctx = PruneContext.build(bounds, networks, params, config)
        columns = tree.keyword_columns(params.keywords)
        for node in tree.walk():
            if node.members & set("abcd"):
                assert prune_node(node, ctx, columns) is None

    def test_keyword_lemma(self):
        networks = clique_networks()
        config = small_config()
        bounds, _, tree = engine(networks, config)
        params = clique_params(keywords=["museum"])
        ctx = PruneContext.build(bounds, networks, params, config)
        root = tree.node(tree.root)
        assert node_lemma_fires(PruneReason.KEYWORD, root, ctx, tree.keyword_columns(params.keywords))

    def test_support_lemma(self):
        networks = clique_networks()
        config = small_config()
        bounds, _, tree = engine(networks, config)
        params = clique_params(k=6)
        ctx = PruneContext.build(bounds, networks, params, config)
        root = tree.node(tree.root)
        assert node_lemma_fires(PruneReason.SUPPORT, root, ctx, tree.keyword_columns(params.keywords))
