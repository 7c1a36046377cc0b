"""Line charts rendered to standalone SVG text."""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
import seaborn as sns  # noqa: E402

from engine.utils.filesystem import atomic_write_text  # noqa: E402

# Fixed id salt keeps repeated renders byte-identical.
matplotlib.rcParams["svg.hashsalt"] = "otafl"
matplotlib.rcParams["svg.fonttype"] = "none"


class ChartError(ValueError):
    """Raised when a chart cannot be drawn from the given CSV."""

    pass


@dataclass(frozen=True)
class ChartSpec:
    x: str
    y: list[str] = field(default_factory=list)
    title: str = ""
    logx: bool = False
    logy: bool = False
    xlabel: str | None = None
    ylabel: str | None = None


def build_chart(frame: pd.DataFrame, spec: ChartSpec):
    """One line per y column; each line is tagged ``series-<i>`` in the SVG."""
    with sns.axes_style("whitegrid"):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        palette = sns.color_palette("deep", n_colors=max(1, len(spec.y)))
        for i, column in enumerate(spec.y):
            ax.plot(frame[spec.x], frame[column], label=column, color=palette[i], gid=f"series-{i}")
        if spec.logx:
            ax.set_xscale("log")
        if spec.logy:
            ax.set_yscale("log")
        ax.set_xlabel(spec.xlabel or spec.x)
        ax.set_ylabel(spec.ylabel or (spec.y[0] if len(spec.y) == 1 else "value"))
        if spec.title:
            ax.set_title(spec.title)
        if len(spec.y) > 1:
            ax.legend(loc="best", frameon=False)
        fig.tight_layout()
    return fig


_SERIES_PATH = re.compile(r'(<g id="series-\d+">\s*)<path d="([^"]*)"([^>]*)/>')


def _polyline_runs(d: str) -> list[str]:
    runs: list[list[str]] = []
    numbers: list[str] = []
    for token in d.split():
        if token == "M":
            runs.append([])
        elif token != "L":
            numbers.append(token)
            if len(numbers) == 2:
                runs[-1].append(",".join(numbers))
                numbers = []
    return [" ".join(points) for points in runs if points]


def series_as_polylines(svg: str) -> str:
    """Swap the line path of every ``series-<i>`` group for ``<polyline>`` elements, one per unbroken run."""

    def rewrite(match: re.Match) -> str:
        head, d, attributes = match.groups()
        lines = [f'<polyline points="{points}"{attributes}/>' for points in _polyline_runs(d)]
        return head + "\n  ".join(lines)

    return _SERIES_PATH.sub(rewrite, svg)


def emit_svg(csv_path: str | Path, spec: ChartSpec, out_path: str | Path | None = None) -> Path:
    """Render ``spec`` from ``csv_path``; nothing is written when the CSV is empty or a column is missing."""
    csv_path = Path(csv_path)
    if not spec.y:
        raise ChartError("chart needs at least one y column")
    try:
        frame = pd.read_csv(csv_path)
    except pd.errors.EmptyDataError as exc:
        raise ChartError(f"{csv_path} is empty") from exc
    if frame.empty:
        raise ChartError(f"{csv_path} has no data rows")
    for column in [spec.x, *spec.y]:
        if column not in frame.columns:
            raise ChartError(f"column '{column}' not found in {csv_path}")

    fig = build_chart(frame, spec)
    buffer = io.StringIO()
    try:
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    target = Path(out_path) if out_path is not None else csv_path.with_suffix(".svg")
    return atomic_write_text(target, series_as_polylines(buffer.getvalue()))
