import re

import pandas as pd
import pytest

from cli.charts import ChartError, ChartSpec, emit_svg, series_as_polylines


def _points(text: str) -> list[list[tuple[float, float]]]:
    series = re.findall(r'<polyline points="([^"]*)"', text)
    return [[tuple(float(v) for v in pair.split(",")) for pair in s.split()] for s in series]


@pytest.fixture
def curve_csv(tmp_path):
    path = tmp_path / "curve.csv"
    pd.DataFrame({"t": [0, 1, 2, 3], "loss": [1.0, 0.5, 0.3, 0.2], "bound": [2.0, 1.0, 0.6, 0.4]}).to_csv(
        path, index=False
    )
    return path


def test_svg_has_one_group_per_series(curve_csv):
    out = emit_svg(curve_csv, ChartSpec(x="t", y=["loss", "bound"], logy=True, title="curves"))
    text = out.read_text()
    assert out.suffix == ".svg"
    assert text.lstrip().startswith("<?xml")
    assert 'id="series-0"' in text
    assert 'id="series-1"' in text
    assert 'id="series-2"' not in text


def test_repeated_renders_are_byte_identical(curve_csv, tmp_path):
    spec = ChartSpec(x="t", y=["loss"])
    a = emit_svg(curve_csv, spec, tmp_path / "a.svg").read_bytes()
    b = emit_svg(curve_csv, spec, tmp_path / "b.svg").read_bytes()
    assert a == b


def test_header_only_csv_writes_nothing(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("t,loss\n")
    with pytest.raises(ChartError):
        emit_svg(path, ChartSpec(x="t", y=["loss"]))
    assert not path.with_suffix(".svg").exists()


def test_blank_csv_writes_nothing(tmp_path):
    path = tmp_path / "blank.csv"
    path.write_text("")
    with pytest.raises(ChartError):
        emit_svg(path, ChartSpec(x="t", y=["loss"]))
    assert not path.with_suffix(".svg").exists()


def test_missing_column(curve_csv):
    with pytest.raises(ChartError, match="accuracy"):
        emit_svg(curve_csv, ChartSpec(x="t", y=["accuracy"]))
    assert not curve_csv.with_suffix(".svg").exists()


def test_two_series_give_two_polylines(curve_csv):
    text = emit_svg(curve_csv, ChartSpec(x="t", y=["loss", "bound"])).read_text()
    assert text.count("<polyline") == 2
    assert [len(points) for points in _points(text)] == [4, 4]


def test_decreasing_curve_on_log_x_descends_on_screen(tmp_path):
    path = tmp_path / "mi.csv"
    N = [2, 5, 10, 20, 50, 100]
    pd.DataFrame({"N": N, "mi": [1.0 / (n - 1) for n in N]}).to_csv(path, index=False)
    (points,) = _points(emit_svg(path, ChartSpec(x="N", y=["mi"], logx=True)).read_text())
    xs, ys = zip(*points)
    assert all(a < b for a, b in zip(xs, xs[1:]))
    # screen y grows downwards
    assert all(a < b for a, b in zip(ys, ys[1:]))


def test_series_paths_split_at_gaps():
    svg = '<g id="series-0">\n   <path d="M 1 2 \nL 3 4 \nM 5 6 \nL 7 8 \n" style="fill: none"/>\n  </g>'
    rewritten = series_as_polylines(svg)
    assert '<polyline points="1,2 3,4" style="fill: none"/>' in rewritten
    assert '<polyline points="5,6 7,8" style="fill: none"/>' in rewritten
    assert "<path" not in rewritten
