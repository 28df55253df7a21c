"""Byte-stable JSON/text output helpers."""

import json
from pathlib import Path
from typing import Any, Union

import pandas as pd

from ..core.errors import IoFailure, MalformedDocument


def dumps_stable(obj: Any) -> str:
    """Serialize with sorted keys and a trailing newline so identical input gives identical bytes."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_text(path: Union[str, Path], text: str) -> Path:
    """Write UTF-8 text, creating parent directories; OSError becomes IoFailure."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    except OSError as e:
        raise IoFailure(f"could not write {path}: {e}") from e
    return path


def write_json(path: Union[str, Path], obj: Any) -> Path:
    return write_text(path, dumps_stable(obj))


def read_bytes(path: Union[str, Path]) -> bytes:
    path = Path(path)
    try:
        return path.read_bytes()
    except OSError as e:
        raise IoFailure(f"could not read {path}: {e}") from e


def read_json(path: Union[str, Path]) -> Any:
    """Read a JSON file; decoding problems become MalformedDocument."""
    data = read_bytes(path)
    try:
        return json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise MalformedDocument(f"{path} is not valid JSON: {e}") from e


def write_csv(path: Union[str, Path], frame: pd.DataFrame) -> Path:
    """Write a DataFrame as CSV without the index, with LF line endings."""
    return write_text(path, frame.to_csv(index=False, lineterminator="\n"))
