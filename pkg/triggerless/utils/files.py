import json
import os
import tempfile
from pathlib import Path
from typing import Any, Union

import pandas as pd

from triggerless.core.exceptions import OutputError

PathLike = Union[str, Path]


def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise OutputError(f"Cannot write output ({e.strerror})", str(path)) from e
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: PathLike, payload: Any) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_csv(path: PathLike, frame: pd.DataFrame) -> Path:
    # lineterminator pinned so files are byte-identical across platforms
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))


def read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise OutputError(f"Cannot read file ({e.strerror})", str(path)) from e
