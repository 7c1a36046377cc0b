import logging

from rich.console import Console
from rich.logging import RichHandler

from config.sim_config import LOG_LEVEL

console = Console(color_system="truecolor", stderr=True)

_ROOT_NAME = "otafl"
_configured = False


def _configure_root() -> logging.Logger:
    global _configured
    root = logging.getLogger(_ROOT_NAME)
    if not _configured:
        handler = RichHandler(console=console, show_path=False, rich_tracebacks=True)
        handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
        root.addHandler(handler)
        root.setLevel(LOG_LEVEL)
        root.propagate = False
        _configured = True
    return root


def get_logger(name: str) -> logging.Logger:
    """Return a logger under the shared rich-backed ``otafl`` hierarchy."""
    _configure_root()
    short = name.rsplit(".", 1)[-1]
    return logging.getLogger(f"{_ROOT_NAME}.{short}")
