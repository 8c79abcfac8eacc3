"""Deterministic serialization for verdicts and traces.

All floats are written with 17 significant digits so artifacts round-trip
exactly and diff cleanly between runs; JSON objects are emitted with sorted
keys and no timestamps.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

__all__ = ["fmt_float", "to_jsonable", "dumps_json", "write_json", "write_csv"]


def fmt_float(x: float) -> str:
    """Format a float with 17 significant digits, round-trip exact."""
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    s = format(float(x), ".17g")
    # keep a float marker so JSON round-trips preserve the type
    if "." not in s and "e" not in s and "E" not in s and s not in ("NaN",):
        s += ".0"
    return s


def to_jsonable(obj):
    """Convert numpy scalars/arrays and dataclass-like values to plain types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "to_json_dict"):
        return to_jsonable(obj.to_json_dict())
    return obj


def _emit(obj, parts: list) -> None:
    if obj is None:
        parts.append("null")
    elif obj is True:
        parts.append("true")
    elif obj is False:
        parts.append("false")
    elif isinstance(obj, str):
        parts.append(_escape(obj))
    elif isinstance(obj, int):
        parts.append(str(obj))
    elif isinstance(obj, float):
        parts.append(fmt_float(obj))
    elif isinstance(obj, dict):
        parts.append("{")
        for i, key in enumerate(sorted(obj)):
            if i:
                parts.append(",")
            parts.append(_escape(str(key)))
            parts.append(":")
            _emit(obj[key], parts)
        parts.append("}")
    elif isinstance(obj, (list, tuple)):
        parts.append("[")
        for i, v in enumerate(obj):
            if i:
                parts.append(",")
            _emit(v, parts)
        parts.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def _escape(s: str) -> str:
    out = ['"']
    for ch in s:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def dumps_json(obj) -> str:
    parts: list = []
    _emit(to_jsonable(obj), parts)
    return "".join(parts)


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj) + "\n", encoding="utf-8")


def write_csv(path, header, rows) -> None:
    """Write a CSV of float columns with deterministic formatting."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt_float(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
