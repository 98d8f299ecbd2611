import re

import pytest

from plan_cl.plotting import Series, line_chart, series_csv


def test_single_series_points():
    svg = line_chart([Series("plan", [0.9, 0.8, 0.7])], "t", "x", "y")
    polys = re.findall(r'<polyline class="series"[^>]*points="([^"]+)"', svg)
    assert len(polys) == 1 and len(polys[0].split()) == 3
    assert svg.count('class="legend-entry"') == 1


def test_legend_per_series():
    svg = line_chart([Series("plan", [0.5, 0.6]), Series("inc_lora", [0.4, 0.5])], "t", "x", "y")
    assert svg.count('class="legend-entry"') == 2
    assert ">plan<" in svg and ">inc_lora<" in svg


def test_deterministic_and_escaped():
    s = [Series("a<b", [0.1, 0.2, 0.15])]
    assert line_chart(s, "T&C", "x", "y") == line_chart(s, "T&C", "x", "y")
    assert "a&lt;b" in line_chart(s, "T&C", "x", "y")


def test_constant_series_and_single_point():
    line_chart([Series("flat", [0.5, 0.5])], "t", "x", "y")
    line_chart([Series("one", [0.5])], "t", "x", "y")


def test_empty_rejected():
    with pytest.raises(ValueError):
        line_chart([], "t", "x", "y")


def test_csv_rows():
    text = series_csv([Series("a", [0.5, 0.25])])
    assert text.splitlines() == ["label,task,value", "a,1,0.5", "a,2,0.25"]
