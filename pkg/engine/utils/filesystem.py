import hashlib
import os
import tempfile
from pathlib import Path


class OutputPathError(PermissionError):
    """Exception raised when an artifact path escapes the run's output root."""

    pass


def resolve_inside(root: Path, relative_path: str | Path) -> Path:
    """Resolve ``relative_path`` under ``root`` and refuse anything that escapes it."""
    root = Path(root).resolve()
    full_path = (root / relative_path).resolve()
    try:
        full_path.relative_to(root)
    except ValueError as e:
        raise OutputPathError(f"Path '{relative_path}' would escape the output root {root}") from e
    return full_path


def ensure_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def atomic_write_bytes(path: Path, payload: bytes) -> Path:
    """Write via a temp file in the same directory and rename over the target."""
    path = Path(path)
    ensure_dir(path.parent)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def atomic_write_text(path: Path, content: str) -> Path:
    return atomic_write_bytes(path, content.encode("utf-8"))


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()
