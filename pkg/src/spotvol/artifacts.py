"""Deterministic artifact IO: atomic writes, lineage headers, hashing.

Every stage artifact is written through a temp-file + rename so readers
never observe partial files, and carries `# key=value` comment lines
recording the config hash and the content hash of the stage inputs.
Floats are serialized with repr (shortest round-trip), so rerunning a
seeded stage reproduces artifacts byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable

META_PREFIX = "# "


def fmt(x) -> str:
    """Shortest round-trip text for a value."""
    if isinstance(x, float):
        return repr(float(x))
    return str(x)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:12]


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:12]


def sha256_tree(path: str | Path) -> str:
    """Content hash of a file, or of a directory's files (sorted by name)."""
    p = Path(path)
    if p.is_file():
        return sha256_file(p)
    h = hashlib.sha256()
    for sub in sorted(p.rglob("*")):
        if sub.is_file():
            h.update(str(sub.relative_to(p)).encode())
            h.update(bytes.fromhex(sha256_file(sub)))
    return h.hexdigest()[:12]


def sha256_config(obj) -> str:
    return sha256_bytes(json.dumps(obj, sort_keys=True, default=str).encode())


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def render_csv(columns: list[str], rows: Iterable[Iterable],
               meta: dict[str, str] | None = None) -> str:
    lines = []
    for key in sorted(meta or {}):
        lines.append(f"{META_PREFIX}{key}={(meta or {})[key]}")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path: str | Path, columns: list[str], rows: Iterable[Iterable],
              meta: dict[str, str] | None = None) -> None:
    atomic_write_text(path, render_csv(columns, rows, meta))


def read_csv(path: str | Path) -> tuple[dict[str, str], list[str], list[list[str]]]:
    """Returns (meta, columns, raw string rows)."""
    meta: dict[str, str] = {}
    columns: list[str] = []
    rows: list[list[str]] = []
    with open(path, "r") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            if not columns:
                columns = line.split(",")
                continue
            rows.append(line.split(","))
    return meta, columns, rows


def write_json(path: str | Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=1, default=str) + "\n")


def read_json(path: str | Path):
    with open(path, "r") as f:
        return json.load(f)
