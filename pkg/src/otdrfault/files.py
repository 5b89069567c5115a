"""File formats: trace CSV, JSON documents, dataset manifests, atomic writes."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .plant import Trace, ValidationError

TRACE_HEADER = "distance_m,power_db"


class FormatError(ValueError):
    """A file could not be parsed; the message says where."""


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def trace_to_csv(t: Trace) -> str:
    meta = dict(t.meta)
    meta["spacing_m"] = repr(float(t.spacing_m))
    lines = [f"# {k}={meta[k]}" for k in sorted(meta)]
    lines.append(TRACE_HEADER)
    d = t.distances()
    lines.extend(f"{z!r},{y!r}" for z, y in zip(d.tolist(), t.samples.tolist()))
    return "\n".join(lines) + "\n"


def write_trace(path: str | os.PathLike, t: Trace) -> None:
    atomic_write_text(path, trace_to_csv(t))


def trace_from_csv(text: str, source: str = "<trace>") -> Trace:
    meta: dict[str, str] = {}
    dist: list[float] = []
    vals: list[float] = []
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                k, v = body.split("=", 1)
                meta[k.strip()] = v.strip()
            continue
        if not header_seen:
            if line.replace(" ", "") != TRACE_HEADER:
                raise FormatError(f"{source}:{lineno}: expected header '{TRACE_HEADER}'")
            header_seen = True
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise FormatError(f"{source}:{lineno}: expected 2 columns, got {len(parts)}")
        try:
            dist.append(float(parts[0]))
            vals.append(float(parts[1]))
        except ValueError as exc:
            raise FormatError(f"{source}:{lineno}: {exc}") from None
    if not header_seen:
        raise FormatError(f"{source}: missing header '{TRACE_HEADER}'")
    if len(vals) < 2:
        raise FormatError(f"{source}: trace needs at least 2 samples")
    d = np.asarray(dist)
    if d[0] != 0.0 or np.any(np.diff(d) <= 0):
        raise FormatError(f"{source}: distances must start at 0 and increase")
    if "spacing_m" in meta:
        try:
            spacing = float(meta["spacing_m"])
        except ValueError:
            raise FormatError(f"{source}: bad spacing_m {meta['spacing_m']!r}") from None
    else:
        spacing = float(d[1] - d[0])
    expected = np.arange(len(d)) * spacing
    if not np.allclose(d, expected, rtol=0, atol=1e-6 * max(spacing, 1.0)):
        raise FormatError(f"{source}: samples are not uniformly spaced at {spacing} m")
    meta.pop("spacing_m", None)
    try:
        return Trace(np.asarray(vals), spacing, meta)
    except ValidationError as exc:
        raise FormatError(f"{source}: {exc}") from None


def read_trace(path: str | os.PathLike) -> Trace:
    p = Path(path)
    return trace_from_csv(p.read_text(encoding="utf-8"), str(p))


def load_json(path: str | os.PathLike) -> Any:
    """Parse a JSON file, reporting line and column on syntax errors."""
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{p}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def dump_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def manifest_lines(entries: Iterable[Mapping[str, Any]]) -> str:
    return "".join(json.dumps(dict(e), sort_keys=True) + "\n" for e in entries)


def read_manifest(path: str | os.PathLike) -> list[dict[str, Any]]:
    p = Path(path)
    out = []
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{p}:{lineno}: column {exc.colno}: {exc.msg}") from None
        if not isinstance(entry, dict) or "trace" not in entry or "class" not in entry:
            raise FormatError(f"{p}:{lineno}: manifest entries need 'trace' and 'class'")
        out.append(entry)
    return out
