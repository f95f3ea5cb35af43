"""Region graph construction and neighbourhood queries."""

from __future__ import annotations

from typing import Iterable, Sequence, Union

import numpy as np

from .exceptions import ConfigurationError, ContractError
from .models import CASE_STUDY_LABELS, RegionGraph

EdgeList = Iterable[tuple[str, str]]


def build_region_graph(labels: Sequence[str],
                       topology: Union[str, EdgeList] = "complete") -> RegionGraph:
    """Build an undirected graph over *labels*.

    Parameters
    ----------
    labels : sequence of str
        Node labels in matrix order.
    topology : "complete" or iterable of (label, label)
        ``"complete"`` connects every pair of distinct nodes; ``"edgeless"``
        connects none; otherwise each pair is one undirected edge.
    """
    labels = tuple(labels)
    if not labels:
        raise ConfigurationError("a region graph needs at least one node")
    if len(set(labels)) != len(labels):
        raise ConfigurationError(f"duplicate node labels in {labels}")
    n = len(labels)

    if isinstance(topology, str):
        if topology == "complete":
            return RegionGraph(labels, np.ones((n, n), dtype=np.int8) - np.eye(n, dtype=np.int8))
        if topology == "edgeless":
            return RegionGraph(labels, np.zeros((n, n), dtype=np.int8))
        raise ConfigurationError(f"unknown topology {topology!r}")

    index = {label: i for i, label in enumerate(labels)}
    adjacency = np.zeros((n, n), dtype=np.int8)
    for a, b in topology:
        if a not in index or b not in index:
            unknown = a if a not in index else b
            raise ConfigurationError(f"edge ({a}, {b}) references unknown label {unknown!r}")
        if a == b:
            raise ConfigurationError(f"self-edge on {a!r} is not allowed")
        adjacency[index[a], index[b]] = 1
        adjacency[index[b], index[a]] = 1
    return RegionGraph(labels, adjacency)


def case_study_graph() -> RegionGraph:
    """Complete graph over urban, suburban, rural and outmigrated."""
    return build_region_graph(CASE_STUDY_LABELS, "complete")


def parse_topology(text: str) -> Union[str, list[tuple[str, str]]]:
    """Parse a topology setting: a keyword or ``a-b;c-d`` edge pairs."""
    text = text.strip()
    if text in ("complete", "edgeless"):
        return text
    edges = []
    for item in filter(None, (part.strip() for part in text.split(";"))):
        pair = [p.strip() for p in item.split("-")]
        if len(pair) != 2 or not all(pair):
            raise ConfigurationError(f"malformed edge {item!r}; expected 'a-b'")
        edges.append((pair[0], pair[1]))
    return edges


def neighbors(graph: RegionGraph, node: int) -> list[int]:
    """Sorted indices of the nodes adjacent to *node*."""
    if not 0 <= node < graph.n_nodes:
        raise ContractError(f"node {node} out of range (0..{graph.n_nodes - 1})")
    return [int(j) for j in np.flatnonzero(graph.adjacency[node])]


def permute_graph(graph: RegionGraph, order: Sequence[int]) -> RegionGraph:
    """Relabel nodes so that new node k is old node ``order[k]``."""
    order = list(order)
    labels = tuple(graph.node_labels[i] for i in order)
    return RegionGraph(labels, graph.adjacency[np.ix_(order, order)])
