"""Deterministic JSON emission and float64 array codecs.

Reports and checkpoints must be byte-identical across runs with the
same inputs, so serialization cannot depend on dict hashing or on the
platform's float repr: keys keep insertion order, floats print with
17 significant digits (enough to round-trip IEEE doubles exactly) and
arrays are base64 of little-endian float64 in row-major order.
"""

from __future__ import annotations

import base64
import json
import math

import numpy as np

__all__ = ["dumps", "encode_array", "decode_array"]


def _format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError("JSON document cannot carry non-finite floats")
    if x == int(x) and abs(x) < 1e16:
        return f"{x:.1f}"  # keep e.g. 1.0 visibly a float
    return f"{x:.17g}"


def _write(obj, out: list[str], indent: int) -> None:
    pad = "  " * indent
    if obj is None or isinstance(obj, bool):
        out.append("null" if obj is None else ("true" if obj else "false"))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_format_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _write(obj.tolist(), out, indent)
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        out.append("[\n")
        for i, item in enumerate(obj):
            out.append(pad + "  ")
            _write(item, out, indent + 1)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(pad + "]")
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = list(obj.items())
        for i, (key, value) in enumerate(items):
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be strings, got {key!r}")
            out.append(pad + "  " + json.dumps(key) + ": ")
            _write(value, out, indent + 1)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(pad + "}")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    """Serialize to pretty JSON with deterministic layout."""
    out: list[str] = []
    _write(obj, out, 0)
    out.append("\n")
    return "".join(out)


def encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    return {
        "shape": list(arr.shape),
        "dtype": "<f8",
        "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
    }


def decode_array(doc: dict) -> np.ndarray:
    raw = base64.b64decode(doc["data"])
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return arr.reshape(doc["shape"]).copy()
