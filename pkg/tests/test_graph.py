"""Tests for graph construction, spectral analysis and spectrum search."""

from __future__ import annotations

import numpy as np
import pytest

from src.errors import GraphError
from src.graph import (
    build_graph,
    has_spanning_tree,
    laplacian,
    search_graphs,
    sort_eigenvalues,
    spectral,
    to_digraph,
)

OSCILLATOR_EDGES = [(1, 3), (2, 1), (3, 2), (3, 4), (4, 1)]
TARGET_EIGENVALUES = [0, 1, 2 + 1j, 2 - 1j]
TARGET_PHI = [0.2, 0.2, 0.4, 0.2]


@pytest.fixture
def oscillator_graph():
    return build_graph(4, OSCILLATOR_EDGES)


def test_build_graph_rejects_bad_edges() -> None:
    with pytest.raises(GraphError, match="outside"):
        build_graph(3, [(1, 4)])
    with pytest.raises(GraphError, match="self-loop"):
        build_graph(3, [(2, 2)])
    with pytest.raises(GraphError, match="duplicate"):
        build_graph(3, [(1, 2), (1, 2)])
    with pytest.raises(GraphError):
        build_graph(0, [])


def test_neighbors_follow_edge_direction(oscillator_graph) -> None:
    assert oscillator_graph.neighbors(1) == [2, 4]
    assert oscillator_graph.neighbors(2) == [3]
    assert oscillator_graph.neighbors(3) == [1]
    assert oscillator_graph.neighbors(4) == [3]
    assert oscillator_graph.neighbor_sets[1] == frozenset({2, 4})


def test_laplacian_rows_carry_in_degree(oscillator_graph) -> None:
    expected = np.array(
        [
            [2.0, -1.0, 0.0, -1.0],
            [0.0, 1.0, -1.0, 0.0],
            [-1.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, -1.0, 1.0],
        ]
    )
    lap = laplacian(oscillator_graph)
    assert np.array_equal(lap, expected)
    assert np.allclose(lap.sum(axis=1), 0.0)
    assert np.trace(lap) == len(OSCILLATOR_EDGES)


def test_digraph_edges_point_along_information_flow(oscillator_graph) -> None:
    digraph = to_digraph(oscillator_graph)
    assert digraph.has_edge(2, 1)
    assert not digraph.has_edge(1, 2)


def test_spanning_tree_detection() -> None:
    assert has_spanning_tree(build_graph(3, [(1, 2), (2, 3)]))
    assert not has_spanning_tree(build_graph(3, [(1, 3), (2, 3)]))
    assert not has_spanning_tree(build_graph(2, []))
    assert has_spanning_tree(build_graph(1, []))


def test_spanning_tree_iff_single_zero_eigenvalue() -> None:
    rng = np.random.default_rng(31)
    found = {True: 0, False: 0}
    for _ in range(200):
        n_agents = int(rng.integers(2, 7))
        pairs = [(j, i) for j in range(1, n_agents + 1) for i in range(1, n_agents + 1) if j != i]
        keep = rng.random(len(pairs)) < rng.uniform(0.1, 0.6)
        graph = build_graph(n_agents, [pair for pair, k in zip(pairs, keep, strict=True) if k])
        zeros = int(np.sum(np.abs(np.linalg.eigvals(laplacian(graph))) < 1e-8))
        spans = has_spanning_tree(graph)
        assert spans == (zeros == 1)
        found[spans] += 1
    assert found[True] and found[False]


def test_sort_eigenvalues_by_real_then_imaginary() -> None:
    ordered = sort_eigenvalues(np.array([2 + 1j, 0, 2 - 1j, 1]))
    assert np.allclose(ordered, [0, 1, 2 - 1j, 2 + 1j])


def test_spectral_of_oscillator_graph(oscillator_graph) -> None:
    spectrum = spectral(oscillator_graph)
    assert np.allclose(spectrum.eigenvalues, [0, 1, 2 - 1j, 2 + 1j], atol=1e-9)
    assert np.allclose(spectrum.phi, TARGET_PHI, atol=1e-12)
    assert np.allclose(spectrum.phi @ spectrum.laplacian, 0.0, atol=1e-12)

    x1 = spectrum.x1
    assert x1.shape == (4, 3)
    assert np.allclose(x1.T @ x1, np.eye(3), atol=1e-12)
    assert np.allclose(spectrum.phi @ x1, 0.0, atol=1e-12)
    assert np.allclose(
        sort_eigenvalues(np.linalg.eigvals(spectrum.l_check)), [1, 2 - 1j, 2 + 1j], atol=1e-9
    )


def test_spectral_rejects_graph_without_spanning_tree() -> None:
    with pytest.raises(GraphError, match="spanning tree"):
        spectral(build_graph(4, [(1, 2), (3, 4)]))


def test_spectral_single_agent() -> None:
    spectrum = spectral(build_graph(1, []))
    assert np.allclose(spectrum.eigenvalues, [0.0])
    assert np.allclose(spectrum.phi, [1.0])
    assert spectrum.l_check.shape == (0, 0)


def test_spectral_two_agent_chain() -> None:
    spectrum = spectral(build_graph(2, [(1, 2)]))
    assert np.allclose(spectrum.phi, [1.0, 0.0])
    assert np.allclose(spectrum.l_check, [[1.0]])


def test_search_finds_oscillator_graph() -> None:
    matches = [g.sorted_edges() for g in search_graphs(4, TARGET_EIGENVALUES, TARGET_PHI)]
    assert sorted(OSCILLATOR_EDGES) in matches
    for edges in matches:
        spectrum = spectral(build_graph(4, edges))
        assert np.allclose(spectrum.eigenvalues, [0, 1, 2 - 1j, 2 + 1j], atol=1e-6)
        assert np.allclose(spectrum.phi, TARGET_PHI, atol=1e-6)


def test_search_is_deterministic() -> None:
    first = [g.sorted_edges() for g in search_graphs(4, TARGET_EIGENVALUES)]
    second = [g.sorted_edges() for g in search_graphs(4, TARGET_EIGENVALUES)]
    assert first == second
    assert len(first) >= 1


def test_search_rejects_wrong_target_count() -> None:
    with pytest.raises(GraphError):
        next(search_graphs(4, [0, 1]))
