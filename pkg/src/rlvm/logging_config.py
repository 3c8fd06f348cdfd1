"""Centralized logging configuration with Rich.

This module provides console output for experiment runs with:
- Color-coded log levels
- Run banners for simulations and training
- Summary tables for metric rows
"""

import logging
from typing import Iterable, Mapping, Optional, Sequence

from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table
from rich.text import Text
from rich.theme import Theme

CUSTOM_THEME = Theme({
    "method": "bold cyan",
    "system": "bold yellow",
    "error": "bold red",
    "success": "bold green",
    "warning": "bold yellow",
    "info": "bold blue",
    "file": "italic magenta",
    "metric": "bold white",
})

# Global console instance
console = Console(theme=CUSTOM_THEME)


def setup_logging(level: int | str = logging.INFO) -> None:
    """Configure centralized logging with Rich.

    Args:
        level: Logging level or level name (default: logging.INFO)
    """
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO

    rich_handler = RichHandler(
        console=console,
        show_time=True,
        show_path=False,
        markup=False,
        rich_tracebacks=True,
        tracebacks_show_locals=False,
    )

    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[rich_handler],
        force=True,
    )
    logging.getLogger("rlvm").setLevel(level)
    # matplotlib's font manager is chatty at DEBUG
    logging.getLogger("matplotlib").setLevel(logging.WARNING)


def log_system_message(message: str, title: str = "rlvm") -> None:
    """Print a run banner.

    Args:
        message: Banner body
        title: Panel title
    """
    panel = Panel(
        Text(message, style="system"),
        title=title,
        border_style="yellow",
        padding=(0, 2),
    )
    console.print(panel)


def log_summary_table(
    rows: Iterable[Mapping[str, object]],
    columns: Sequence[str],
    title: Optional[str] = None,
) -> None:
    """Print metric rows as a table.

    Args:
        rows: Mappings keyed by column name
        columns: Column order
        title: Optional table title
    """
    table = Table(title=title, header_style="method")
    for column in columns:
        table.add_column(column, justify="left" if column in ("method", "request") else "right")
    for row in rows:
        table.add_row(*(_format_cell(row.get(column)) for column in columns))
    console.print(table)


def log_error_message(message: str) -> None:
    """Print a failure message in the error style."""
    console.print(Text(message, style="error"))


def _format_cell(value: object) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return "" if value is None else str(value)
