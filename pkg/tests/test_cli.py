from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import k8_with_triangle
from expflow import io
from expflow.cli import main
from expflow.graph import CapGraph, barbell


def _write(tmp_path, G, name="g.txt", d=None, b=None):
    p = tmp_path / name
    p.write_text(io.write_problem(G, d, b))
    return str(p)


def _run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_parse_roundtrip():
    G = barbell(4)
    prob = io.parse_problem(io.write_problem(G))
    assert prob.graph.m == G.m and np.array_equal(prob.graph.cap, G.cap)
    assert prob.d is None and prob.b is None


@pytest.mark.parametrize("text", [
    "a 1 2 1\n",                      # missing header
    "p gr 2 1\na 1 3 1\n",            # vertex out of range
    "p gr 2 2\na 1 2 1\n",            # edge count mismatch
    "p gr 2 1\na 1 2 x\n",            # bad number
    "p gr 2 1\na 1 2 1\nq 1\n",       # unknown line
])
def test_malformed_input_exits_2(tmp_path, capsys, text):
    p = tmp_path / "bad.txt"
    p.write_text(text)
    code, out, err = _run(["decompose", str(p)], capsys)
    assert code == 2 and out == "" and "input error" in err


def test_missing_file_and_bad_option(tmp_path, capsys):
    assert _run(["decompose", str(tmp_path / "nope.txt")], capsys)[0] == 2
    assert _run(["maxflow", "--eps", "2", "x"], capsys)[0] == 2


def test_maxflow_single_edge(tmp_path, capsys):
    path = _write(tmp_path, CapGraph(2, [(0, 1, 5)]))
    code, out, _ = _run(["maxflow", path], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["value"] == 5 and rep["flow"] == [[1, 2, 5]]
    assert rep["checks"]["feasible"]


def test_maxflow_demand_lines_and_sherman(tmp_path, capsys):
    G = CapGraph(4, [(0, 1, 1), (1, 2, 1), (2, 3, 1), (0, 2, 1)])
    b = np.zeros(4)
    b[0], b[3] = 2, -2
    path = _write(tmp_path, G, b=b)
    for backend in ("exact", "sherman"):
        code, out, _ = _run(["maxflow", path, "--backend", backend, "--verify", "full-oracle"], capsys)
        rep = json.loads(out)
        assert code == 0 and rep["value"] >= 0.9 * 1 - 1e-9 and rep["value"] <= 1 + 1e-9


def test_decompose_barbell_report(tmp_path, capsys):
    path = _write(tmp_path, barbell(6))
    code, out, _ = _run(["decompose", path, "--verify", "full-oracle"], capsys)
    rep = json.loads(out)
    assert code == 0
    assert rep["format"] == io.FORMAT and rep["command"] == "decompose"
    assert rep["graph"]["n"] == 12 and rep["graph"]["connected_components"] == 1
    seen = sorted(v for B in rep["clusters"] + rep["discarded"] for v in B)
    assert seen == list(range(1, 13))
    assert rep["checks"]["certified_near_expanders"]
    assert "wall_s" not in rep["timing"]


def test_decompose_pendant_triangle(tmp_path, capsys):
    path = _write(tmp_path, k8_with_triangle())
    code, out, _ = _run(["decompose", path, "--phi", "1"], capsys)
    rep = json.loads(out)
    assert code == 0
    assert rep["certificates"]["cut_capacity"] == 1
    assert rep["clusters"] == [list(range(1, 9))]


def test_hierarchy_and_verify(tmp_path, capsys):
    path = _write(tmp_path, k8_with_triangle())
    code, out, _ = _run(["hierarchy", path, "--phi", "0.5", "--verify", "full-oracle"], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["complete"]
    assert [lv["delta"] for lv in rep["levels"]] == [32, 4, 0]
    assert rep["certificates"]["quality_ratio"] <= rep["certificates"]["congestions"]["quality"]
    code, out, _ = _run(["verify", path, "--phi", "0.5"], capsys)
    assert code == 0 and json.loads(out)["checks"]["invariants"]


def test_halving_failure_exits_1(tmp_path, capsys):
    # with phi far too large a level cannot halve the boundary
    path = _write(tmp_path, barbell(4))
    code, _, err = _run(["hierarchy", path, "--phi", "50", "--T", "1"], capsys)
    assert code == 1 and "contract failure" in err


def test_output_is_byte_identical(tmp_path, capsys):
    path = _write(tmp_path, barbell(5))
    outs = []
    for k in range(2):
        o = tmp_path / f"out{k}.json"
        assert main(["hierarchy", path, "--seed", "3", "-o", str(o)]) == 0
        outs.append(o.read_bytes())
    assert outs[0] == outs[1]
    assert main(["hierarchy", path, "--seed", "3", "--timing", "-o", str(tmp_path / "t.json")]) == 0
    assert "wall_s" in json.loads((tmp_path / "t.json").read_text())["timing"]


def test_bench_command(tmp_path, capsys):
    path = _write(tmp_path, barbell(5))
    code, out, _ = _run(["bench", path], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["rows"] and "wall_s" in rep["timing"]


def test_console_entry_point(tmp_path):
    path = _write(tmp_path, CapGraph(2, [(0, 1, 3)]))
    r = subprocess.run([sys.executable, "-m", "expflow", "maxflow", path], capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["value"] == 3
