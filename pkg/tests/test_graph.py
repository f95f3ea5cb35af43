"""Tests for region graph construction."""

import numpy as np
import pytest

from graphebm.exceptions import ConfigurationError, ContractError
from graphebm.graph import (
    build_region_graph,
    case_study_graph,
    neighbors,
    parse_topology,
    permute_graph,
)
from graphebm.models import CASE_STUDY_LABELS, RegionGraph


class TestBuildRegionGraph:

    def test_case_study_is_complete(self):
        graph = case_study_graph()
        assert graph.node_labels == CASE_STUDY_LABELS
        assert graph.n_nodes == 4
        assert graph.n_edges == 6
        assert np.all(np.diag(graph.adjacency) == 0)

    def test_edgeless(self):
        graph = build_region_graph(["a", "b", "c"], "edgeless")
        assert graph.n_edges == 0
        assert not graph.adjacency.any()

    def test_edge_list_is_symmetric(self):
        graph = build_region_graph(["a", "b", "c"], [("a", "b"), ("c", "b")])
        np.testing.assert_array_equal(graph.adjacency, [[0, 1, 0], [1, 0, 1], [0, 1, 0]])

    def test_unknown_label(self):
        with pytest.raises(ConfigurationError, match="unknown label"):
            build_region_graph(["a", "b"], [("a", "z")])

    def test_self_edge(self):
        with pytest.raises(ConfigurationError, match="self-edge"):
            build_region_graph(["a", "b"], [("a", "a")])

    def test_duplicate_labels(self):
        with pytest.raises(ConfigurationError):
            build_region_graph(["a", "a"])

    def test_unknown_keyword(self):
        with pytest.raises(ConfigurationError):
            build_region_graph(["a", "b"], "ring")

    def test_asymmetric_adjacency_rejected(self):
        with pytest.raises(ContractError):
            RegionGraph(("a", "b"), np.array([[0, 1], [0, 0]]))

    def test_adjacency_is_read_only(self):
        graph = case_study_graph()
        with pytest.raises(ValueError):
            graph.adjacency[0, 1] = 0


class TestNeighbors:

    def test_complete_graph(self):
        assert neighbors(case_study_graph(), 2) == [0, 1, 3]

    def test_isolated_node(self):
        graph = build_region_graph(["a", "b", "c"], [("a", "b")])
        assert neighbors(graph, 2) == []

    @pytest.mark.parametrize("node", [-1, 4])
    def test_out_of_range(self, node):
        with pytest.raises(ContractError):
            neighbors(case_study_graph(), node)


class TestTopologyParsing:

    def test_keywords(self):
        assert parse_topology("complete") == "complete"
        assert parse_topology(" edgeless ") == "edgeless"

    def test_edge_pairs(self):
        assert parse_topology("urban-suburban; rural-outmigrated") == [
            ("urban", "suburban"), ("rural", "outmigrated")]

    def test_malformed(self):
        with pytest.raises(ConfigurationError):
            parse_topology("urban")


def test_permute_graph_relabels_consistently():
    graph = build_region_graph(["a", "b", "c"], [("a", "b")])
    permuted = permute_graph(graph, [2, 0, 1])
    assert permuted.node_labels == ("c", "a", "b")
    assert neighbors(permuted, 1) == [2]
