from __future__ import annotations

import math

import pandas as pd
from rich import box
from rich.console import Console, Group
from rich.panel import Panel
from rich.rule import Rule
from rich.table import Table
from rich.text import Text

from config.sim_config import Version

CONSOLE_WIDTH = 120
console = Console(color_system="truecolor", width=CONSOLE_WIDTH)

SUMMARY_COLUMNS = [
    "cell_id",
    "final_loss",
    "R",
    "mean_discrepancy",
    "final_accuracy",
    "final_dist_sq",
    "mean_participants",
    "error",
]


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "-"
        return f"{value:.4g}"
    return str(value)


# Header panel
def header_panel(title: str, subtitle: str = ""):
    """
    Title panel printed before a command runs.
    """
    body = Group(Text(title, style="bold white"), Rule(style="red"), Text(subtitle, style="dim"))
    console.print(Panel(body, title=f"Version: {Version}", title_align="right", border_style="red"))


# Tabular view of a data frame
def frame_table(frame: pd.DataFrame, title: str, columns: list[str] | None = None, limit: int = 40) -> Table:
    columns = [c for c in (columns or list(frame.columns)) if c in frame.columns]
    table = Table(
        title=title,
        show_header=True,
        header_style="bold white",
        expand=True,
        box=box.ROUNDED,
        padding=(0, 1),
    )
    for i, column in enumerate(columns):
        table.add_column(column, style="bold red" if i == 0 else "white", overflow="fold")
    for _, row in frame.head(limit).iterrows():
        table.add_row(*(_fmt(row[c]) for c in columns))
    if len(frame) > limit:
        table.caption = f"{len(frame) - limit} more rows in the CSV"
    return table


def show_run(output) -> None:
    """Summary table, artifact locations and failures of one run."""
    if output.summary is not None and not output.summary.empty:
        columns = SUMMARY_COLUMNS if "cell_id" in output.summary.columns else None
        console.print(frame_table(output.summary, "Run summary", columns))
        if "hardening_slope" in output.summary.columns:
            slope = output.summary["hardening_slope"].iloc[0]
            console.print(f"[bold]Log-log slope of mean discrepancy vs N:[/bold] {_fmt(float(slope))}")

    lines = [f"Run directory: {output.run_dir}"]
    if output.summary_path:
        lines.append(f"Summary: {output.summary_path.name}")
    if output.cell_csvs:
        lines.append(f"Cell CSVs: {len(output.cell_csvs)}")
    if output.svgs:
        lines.append(f"Charts: {len(output.svgs)}")
    if output.manifest_path:
        lines.append(f"Manifest: {output.manifest_path.name}")
    console.print(Panel("\n".join(lines), title="Artifacts", style="dim", padding=(0, 1)))

    if output.failures:
        failures = Table(show_header=True, header_style="bold white", box=box.ROUNDED, expand=True)
        failures.add_column("Cell", style="bold red")
        failures.add_column("Error", style="white", overflow="fold")
        for cell, message in output.failures.items():
            failures.add_row(cell, message)
        console.print(Panel(failures, title="Failures", border_style="red"))


def show_presets(entries: list[tuple[str, str]]) -> None:
    table = Table(
        title="Presets",
        show_header=True,
        header_style="bold white",
        expand=True,
        box=box.ROUNDED,
        padding=(0, 1),
    )
    table.add_column("Name", style="bold red")
    table.add_column("Description", style="white")
    for name, description in entries:
        table.add_row(name, description)
    console.print(table)


def show_errors(title: str, errors: list[str]) -> None:
    console.print(Panel("\n".join(errors), title=title, border_style="red", padding=(0, 1)))
