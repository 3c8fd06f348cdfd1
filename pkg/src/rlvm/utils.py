"""Utility functions for file output."""

import logging
import os
import tempfile
from pathlib import Path
from typing import Union

import pandas as pd

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def ensure_dir(path: PathLike) -> Path:
    """Create ``path`` (and parents) if missing and return it."""
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Write ``text`` to ``path`` via a temp file in the same directory and rename."""
    target = Path(path)
    ensure_dir(target.parent)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.debug(f"Wrote {target}")
    return target


def atomic_write_csv(path: PathLike, frame: pd.DataFrame) -> Path:
    """Write a DataFrame as CSV atomically (no index, ``\\n`` line endings)."""
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))
