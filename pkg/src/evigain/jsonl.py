"""JSONL read/write helpers and content hashing.

All files are UTF-8, one JSON object per line.  Writers emit a canonical
form (sorted keys, compact separators) so that identical data always
produces identical bytes; command idempotence and cache keys rely on it.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import RecordParseError


def dumps_canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def read_jsonl(path: str | os.PathLike) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, record) pairs; line numbers are 1-based."""
    p = Path(path)
    with p.open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise RecordParseError(str(e), path=str(p), line=line_no) from e
            if not isinstance(rec, dict):
                raise RecordParseError("record is not a JSON object", path=str(p), line=line_no)
            yield line_no, rec


def write_jsonl(path: str | os.PathLike, records: Iterable[dict]) -> int:
    """Write records in canonical form; returns the number written."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with p.open("w", encoding="utf-8") as f:
        for rec in records:
            f.write(dumps_canonical(rec) + "\n")
            n += 1
    return n


def append_jsonl(path: str | os.PathLike, record: dict) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("a", encoding="utf-8") as f:
        f.write(dumps_canonical(record) + "\n")


def file_hash(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def obj_hash(obj: Any) -> str:
    """Content hash of any JSON-serializable object (canonical form)."""
    return hashlib.sha256(dumps_canonical(obj).encode("utf-8")).hexdigest()
