"""
Accessibility graph construction and Laplacian spectral analysis.

Agents are numbered 1..N. An edge (j, i) lets agent i read agent j's record,
so row i of the Laplacian carries agent i's in-degree.
"""

from __future__ import annotations

import itertools
import logging
from collections.abc import Iterable, Iterator, Sequence

import networkx as nx
import numpy as np
from scipy.linalg import eigvals, null_space

from .errors import GraphError
from .models import AccessibilityGraph, Spectrum

logger = logging.getLogger(__name__)

ZERO_EIGENVALUE_TOL = 1e-8
RESIDUAL_TOL = 1e-8


def build_graph(n_agents: int, edges: Iterable[Sequence[int]]) -> AccessibilityGraph:
    if n_agents < 1:
        raise GraphError(f"need at least one agent, got {n_agents}")

    pairs: list[tuple[int, int]] = []
    for edge in edges:
        j, i = (int(v) for v in edge)
        if not (1 <= j <= n_agents and 1 <= i <= n_agents):
            raise GraphError(f"edge ({j}, {i}) references an agent outside 1..{n_agents}")
        if j == i:
            raise GraphError(f"self-loop on agent {i}")
        if (j, i) in pairs:
            raise GraphError(f"duplicate edge ({j}, {i})")
        pairs.append((j, i))

    return AccessibilityGraph(n_agents=n_agents, edges=frozenset(pairs))


def laplacian(graph: AccessibilityGraph) -> np.ndarray:
    lap = np.zeros((graph.n_agents, graph.n_agents))
    for j, i in graph.edges:
        lap[i - 1, j - 1] = -1.0
        lap[i - 1, i - 1] += 1.0
    return lap


def to_digraph(graph: AccessibilityGraph) -> nx.DiGraph:
    """Information-flow digraph: j -> i for every edge (j, i)."""
    digraph = nx.DiGraph()
    digraph.add_nodes_from(graph.agents)
    digraph.add_edges_from(graph.edges)
    return digraph


def has_spanning_tree(graph: AccessibilityGraph) -> bool:
    digraph = to_digraph(graph)
    spans = any(
        len(nx.descendants(digraph, root)) == graph.n_agents - 1 for root in graph.agents
    )
    rank_says = np.linalg.matrix_rank(laplacian(graph)) == graph.n_agents - 1
    if spans != rank_says:
        logger.warning(
            f"Reachability ({spans}) and Laplacian rank ({rank_says}) disagree for "
            f"{graph.sorted_edges()}"
        )
    return spans


def sort_eigenvalues(values: np.ndarray) -> np.ndarray:
    """Ascending real part, ties broken by ascending imaginary part."""
    values = np.asarray(values, dtype=complex)
    order = np.lexsort((values.imag, np.round(values.real, 9)))
    return values[order]


def spectral(graph: AccessibilityGraph) -> Spectrum:
    if not has_spanning_tree(graph):
        raise GraphError(
            "no directed spanning tree in the accessibility graph (connectivity assumption)"
        )

    lap = laplacian(graph)
    eigenvalues = sort_eigenvalues(eigvals(lap))
    zeros = int(np.sum(np.abs(eigenvalues) < ZERO_EIGENVALUE_TOL))
    if zeros != 1:
        raise GraphError(f"Laplacian has {zeros} zero eigenvalues, expected exactly one")

    left = null_space(lap.T)
    if left.shape[1] != 1:
        raise GraphError(f"left null space has dimension {left.shape[1]}, expected 1")
    phi = left[:, 0]
    total = phi.sum()
    if abs(total) < 1e-12:
        raise GraphError("left null vector cannot be normalized to sum one")
    phi = phi / total

    # Orthonormal basis of ker(phi^T); L maps this subspace into itself.
    x1 = null_space(phi[np.newaxis, :])
    l_check = x1.T @ lap @ x1
    residual = np.linalg.norm(lap @ x1 - x1 @ l_check) if x1.size else 0.0
    if residual > RESIDUAL_TOL:
        raise GraphError(f"reduced Laplacian residual {residual:.2e} exceeds {RESIDUAL_TOL}")

    logger.debug(f"Spectrum of {graph.sorted_edges()}: {np.round(eigenvalues, 6)}")
    return Spectrum(
        laplacian=lap,
        eigenvalues=eigenvalues,
        phi=phi,
        l_check=l_check,
        x1=x1,
    )


def _matches(values: np.ndarray, targets: np.ndarray, tol: float) -> bool:
    remaining = list(values)
    for target in targets:
        distances = [abs(v - target) for v in remaining]
        best = int(np.argmin(distances))
        if distances[best] > tol:
            return False
        remaining.pop(best)
    return True


def search_graphs(
    n_agents: int,
    eigenvalues: Sequence[complex],
    phi: Sequence[float] | None = None,
    tol: float = 1e-6,
) -> Iterator[AccessibilityGraph]:
    """
    Enumerate unit-weight digraphs whose Laplacian has the given spectrum.

    Candidates are visited by edge count, then in lexicographic edge order, so
    the sequence is deterministic. A Laplacian's trace equals its edge count,
    which prunes every other size.
    """
    targets = np.asarray(eigenvalues, dtype=complex)
    if targets.shape != (n_agents,):
        raise GraphError(f"expected {n_agents} target eigenvalues, got {targets.shape[0]}")
    phi_target = None if phi is None else np.asarray(phi, dtype=float)
    edge_count = int(round(targets.real.sum()))

    candidates = [(j, i) for j in range(1, n_agents + 1) for i in range(1, n_agents + 1) if j != i]
    for edges in itertools.combinations(candidates, edge_count):
        graph = AccessibilityGraph(n_agents=n_agents, edges=frozenset(edges))
        if not _matches(eigvals(laplacian(graph)), targets, tol):
            continue
        if not has_spanning_tree(graph):
            continue
        if phi_target is not None:
            if np.max(np.abs(spectral(graph).phi - phi_target)) > tol:
                continue
        yield graph
