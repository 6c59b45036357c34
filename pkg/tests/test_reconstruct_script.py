"""Tests for the graph reconstruction script."""

import shutil
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "scripts"))

from reconstruct_graph import _yaml_loader, find_graphs, write_edges  # noqa: E402

from src.scenario import load_scenario  # noqa: E402

BUNDLED = Path(__file__).resolve().parent.parent / "data" / "scenarios" / "oscillator-4.yaml"


def test_find_graphs_recovers_bundled_edges():
    matches = find_graphs([0, 1, 2 + 1j, 2 - 1j], [0.2, 0.2, 0.4, 0.2], 1e-6)
    assert [(1, 3), (2, 1), (3, 2), (3, 4), (4, 1)] in matches


def test_find_graphs_limit():
    assert len(find_graphs([0, 1, 2 + 1j, 2 - 1j], None, 1e-6, limit=1)) == 1


def test_write_edges_keeps_comments(tmp_path):
    target = tmp_path / "scenario.yaml"
    shutil.copy(BUNDLED, target)
    write_edges(target, 4, [(1, 2), (2, 3), (3, 4), (4, 1)], _yaml_loader())

    text = target.read_text(encoding="utf-8")
    assert text.startswith("# Four harmonic oscillators")
    assert "ACCESSIBILITY GRAPH" in text
    assert "- [1, 2]" in text

    scenario = load_scenario(target)
    assert scenario.graph.edges == [(1, 2), (2, 3), (3, 4), (4, 1)]
    assert scenario.design.eta0 == 15.12


def test_write_edges_requires_graph_section(tmp_path):
    target = tmp_path / "bare.yaml"
    target.write_text("name: bare\n", encoding="utf-8")
    with pytest.raises(ValueError, match="graph section"):
        write_edges(target, 2, [(1, 2)], _yaml_loader())
