"""
Helpers for reading and writing pipeline artifacts on disk.
"""

import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Any, Dict, List

from errors import IoError, MalformedJson

_append_lock = threading.Lock()


def atomic_write_text(path, text: str) -> Path:
    """Write text to a sibling temp file, then rename it over path."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
                handle.write(text)
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
    except OSError as e:
        raise IoError(f"Failed to write {path}: {e}") from e
    return path


def dump_json(value: Any) -> str:
    return json.dumps(value, indent=2, ensure_ascii=False) + "\n"


def write_json(path, value: Any) -> Path:
    return atomic_write_text(path, dump_json(value))


def read_json(path) -> Any:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"Failed to read {path}: {e}") from e
    try:
        return json.loads(text)
    except ValueError as e:
        raise MalformedJson(f"{path}: {e}") from e


def append_jsonl(path, record: Dict) -> Path:
    """Append one JSON object as a single line."""
    path = Path(path)
    line = json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with _append_lock, open(path, "a", encoding="utf-8") as handle:
            handle.write(line)
    except OSError as e:
        raise IoError(f"Failed to append to {path}: {e}") from e
    return path


def read_jsonl(path) -> List[Dict]:
    """Read a JSON Lines file; blank and unparseable lines are skipped."""
    path = Path(path)
    if not path.is_file():
        return []
    records = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except ValueError:
                continue
    return records