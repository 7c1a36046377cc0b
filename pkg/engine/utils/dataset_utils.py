from __future__ import annotations

import math
import os
from pathlib import Path

try:  # Optional dependency guard
    import pandas as pd
except ImportError:  # pragma: no cover - runtime error surface via helper
    pd = None  # type: ignore


SUPPORTED_DATASET_EXTENSIONS = {
    ".csv",
    ".tsv",
    ".txt",
}


def ensure_pandas_available() -> None:
    """Raise an informative error if pandas is missing."""

    if pd is None:  # type: ignore
        raise ImportError("pandas is required for CSV ingestion. Install pandas to continue.")


def resolve_dataset_path(path: str | Path, base_dir: Path | None = None) -> Path:
    """Resolve a dataset path (relative paths against ``base_dir``) and check it is a readable table."""

    if not str(path).strip():
        raise ValueError("Provide a dataset path")

    candidate = Path(path)
    if not candidate.is_absolute() and base_dir is not None:
        candidate = base_dir / candidate
    candidate = candidate.resolve()
    if not candidate.exists():
        raise FileNotFoundError(f"Dataset not found: {path}")
    if not candidate.is_file():
        raise IsADirectoryError(f"Dataset path is a directory: {path}")
    if candidate.suffix.lower() not in SUPPORTED_DATASET_EXTENSIONS:
        raise ValueError(
            f"Unsupported dataset format '{candidate.suffix}'. Supported extensions: {', '.join(sorted(SUPPORTED_DATASET_EXTENSIONS))}"
        )
    return candidate


def load_dataframe(path: Path):
    """Load every column as text so the caller can report the first bad line itself.

    Blank rows are dropped but the index keeps each row's position in the file: row ``i`` sits on
    line ``i + 2`` (the header is line 1).
    """

    ensure_pandas_available()
    sep = "\t" if path.suffix.lower() == ".tsv" else ","
    frame = pd.read_csv(
        path,
        sep=sep,
        dtype=str,
        keep_default_na=False,
        encoding="utf-8",
        skip_blank_lines=False,
    )
    blank = (frame.isna() | frame.eq("")).all(axis=1)
    return frame[~blank]


def human_readable_size(num_bytes: int) -> str:
    """Return a compact human-readable string for byte counts."""

    if num_bytes <= 0:
        return "0 B"
    units = ["B", "KB", "MB", "GB", "TB"]
    idx = min(int(math.log(num_bytes, 1024)), len(units) - 1)
    return f"{num_bytes / (1024 ** idx):.2f} {units[idx]}"


def file_metadata(path: Path, rows: int, columns: int) -> dict:
    """Produce a minimal metadata dict for manifests."""

    return {
        "path": str(path),
        "format": path.suffix,
        "rows": rows,
        "columns": columns,
        "file_size": human_readable_size(os.path.getsize(path)),
    }
