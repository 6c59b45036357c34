#!/usr/bin/env python3
"""
Find unit-weight accessibility graphs with a prescribed Laplacian spectrum.

Enumerates every digraph on N agents whose edge count matches the Laplacian
trace, keeps those whose eigenvalues (and optionally left null vector) match
the targets, and writes the first match into a scenario's graph.edges.

Uses ruamel.yaml round-trip mode so comments and key order in the scenario
are preserved.

Usage:
    python scripts/reconstruct_graph.py --dry-run
    python scripts/reconstruct_graph.py --all --dry-run
    python scripts/reconstruct_graph.py --scenario data/scenarios/oscillator-4.yaml
    python scripts/reconstruct_graph.py --eigenvalues 0 1 2+1j 2-1j --phi 0.2 0.2 0.4 0.2
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ruamel.yaml import YAML
from ruamel.yaml.comments import CommentedSeq

SCRIPT_DIR = Path(__file__).parent
sys.path.insert(0, str(SCRIPT_DIR.parent))

from src.errors import GraphError  # noqa: E402
from src.graph import search_graphs  # noqa: E402

DEFAULT_EIGENVALUES = ("0", "1", "2+1j", "2-1j")
DEFAULT_PHI = ("0.2", "0.2", "0.4", "0.2")


def _yaml_loader() -> YAML:
    yaml = YAML()
    yaml.preserve_quotes = True
    yaml.default_flow_style = False
    yaml.width = 4096
    return yaml


def find_graphs(
    eigenvalues: list[complex], phi: list[float] | None, tol: float, limit: int | None = None
) -> list[list[tuple[int, int]]]:
    """Sorted edge lists of the matching graphs, in search order."""
    matches = []
    for graph in search_graphs(len(eigenvalues), eigenvalues, phi, tol):
        matches.append(graph.sorted_edges())
        if limit is not None and len(matches) >= limit:
            break
    return matches


def write_edges(
    scenario_path: Path, n_agents: int, edges: list[tuple[int, int]], yaml: YAML
) -> None:
    """Replace graph.n_agents and graph.edges, leaving everything else untouched."""
    with scenario_path.open(encoding="utf-8") as f:
        data = yaml.load(f)

    if not isinstance(data, dict) or not isinstance(data.get("graph"), dict):
        raise ValueError(f"Expected a mapping with a graph section in {scenario_path}")

    seq = CommentedSeq()
    for j, i in edges:
        pair = CommentedSeq([j, i])
        pair.fa.set_flow_style()
        seq.append(pair)

    data["graph"]["n_agents"] = n_agents
    data["graph"]["edges"] = seq

    with scenario_path.open("w", encoding="utf-8") as f:
        yaml.dump(data, f)


def main() -> int:
    parser = argparse.ArgumentParser(description="Reconstruct a graph from its Laplacian spectrum")
    parser.add_argument("--dry-run", action="store_true")
    parser.add_argument("--all", action="store_true", help="List every match, not just the first")
    parser.add_argument(
        "--scenario",
        type=Path,
        default=SCRIPT_DIR.parent / "data" / "scenarios" / "oscillator-4.yaml",
    )
    parser.add_argument("--eigenvalues", nargs="+", default=list(DEFAULT_EIGENVALUES))
    parser.add_argument("--phi", nargs="+", default=list(DEFAULT_PHI))
    parser.add_argument("--no-phi", action="store_true", help="Match eigenvalues only")
    parser.add_argument("--tol", type=float, default=1e-6)
    args = parser.parse_args()

    try:
        eigenvalues = [complex(v) for v in args.eigenvalues]
        phi = None if args.no_phi else [float(v) for v in args.phi]
    except ValueError as exc:
        print(f"ERROR: cannot parse targets: {exc}")
        return 1

    try:
        matches = find_graphs(eigenvalues, phi, args.tol, None if args.all else 1)
    except GraphError as exc:
        print(f"ERROR: {exc}")
        return 1

    print(f"Targets: eigenvalues {eigenvalues}, phi {phi}")
    if not matches:
        print("No graph matches the targets")
        return 1
    for edges in matches:
        print(f"  MATCH: {edges}")

    if args.dry_run:
        print(f"\nWOULD WRITE {matches[0]} to {args.scenario}")
        return 0
    if not args.scenario.exists():
        print(f"ERROR: scenario not found: {args.scenario}")
        return 1

    write_edges(args.scenario, len(eigenvalues), matches[0], _yaml_loader())
    print(f"\nUPDATED: {args.scenario}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
