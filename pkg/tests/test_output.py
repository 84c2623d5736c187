import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cawave.errors import DomainError, EmptyDataset
from cawave.output import fmt, read_csv, write_csv, write_json
from cawave.svg import Axes, Marker, Series, emit_figure, figure_rows, nice_ticks, write_figure


@settings(max_examples=200)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_seventeen_digits_round_trip(x):
    assert float(fmt(x)) == x


def test_csv_with_header_block(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["a", "b"], [(1.0, None), (0.1, 2)], {"kappa_T": 57.5, "note": "x"})
    text = path.read_text()
    assert text.splitlines()[:3] == ["# kappa_T: 57.5", "# note: x", "a,b"]
    meta, header, rows = read_csv(path)
    assert meta["kappa_T"] == "57.5" and header == ["a", "b"]
    assert rows[1, 0] == 0.1 and math.isnan(rows[0, 1])
    assert not [p for p in tmp_path.iterdir() if p.name.endswith(".tmp")]


def test_json_is_versioned_and_finite(tmp_path):
    path = write_json(tmp_path / "r.json", {"x": np.float64(np.nan), "v": np.arange(3), "z": 1 + 2j})
    data = json.loads(path.read_text())
    assert data == {"schema_version": 1, "x": None, "v": [0, 1, 2], "z": [1.0, 2.0]}


def test_stability_flags_become_line_styles():
    s = Series("N_F", [0, 1, 2, 3], [3, 2, 1, 0], stable=[True, True, False, None])
    assert s.point_styles() == ["solid", "solid", "dashed", "dotted"]
    svg = emit_figure("f", [s], Axes("t", "κ", "ts"))
    assert 'stroke-dasharray="7 4"' in svg and 'stroke-dasharray="2 3"' in svg
    assert svg.count("<polyline") == 3


def test_absent_branch_is_noted_not_drawn():
    svg = emit_figure("f", [Series("N_F", [0, 1], [1, 2]), Series("N_P", [], [])])
    assert "N_P: no data" in svg
    assert svg.count("<polyline") == 1


def test_empty_figure_is_an_error():
    with pytest.raises(EmptyDataset):
        emit_figure("f", [Series("N_P", [], [])])
    with pytest.raises(DomainError):
        Series("bad", [0, 1], [0])


def test_markers_are_labelled():
    svg = emit_figure("f", [Series("a", [0, 1], [0, 1]), Marker("P̃_T", 0.5, 0.5)])
    assert "P̃_T" in svg and "<circle" in svg


def test_sibling_csv_has_exactly_the_plotted_numbers(tmp_path):
    ds = [Series("a", [0.0, 1.0, np.nan], [0.5, 0.25, 1.0], stable=[True, False, None]),
          Marker("m", 0.125, 0.75)]
    svg_path, csv_path = write_figure(tmp_path / "fig", ds, Axes())
    assert svg_path.exists() and csv_path == tmp_path / "fig.csv"
    lines = csv_path.read_text().splitlines()
    assert lines == ["dataset,kind,x,y,style", "a,line,0,0.5,solid", "a,line,1,0.25,dashed", "m,point,0.125,0.75,"]
    assert len(figure_rows(ds)) == 3


def test_figure_output_is_deterministic():
    ds = [Series("a", np.linspace(0, 1, 50), np.linspace(0, 1, 50) ** 2)]
    assert emit_figure("f", ds) == emit_figure("f", ds)


@settings(max_examples=150)
@given(st.floats(-1e6, 1e6), st.floats(1e-6, 1e6))
def test_ticks_are_sorted_and_inside_range(lo, width):
    hi = lo + width
    t = nice_ticks(lo, hi)
    assert len(t) >= 2
    assert np.all(np.diff(t) > 0)
    span = hi - lo
    assert t[0] >= lo - 1e-6 * span and t[-1] <= hi + 1e-6 * span
