"""Deterministic text output: floats at 17 significant digits, stable key
order, no whitespace surprises. Identical inputs must yield byte-identical
files across runs and platforms."""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .errors import ValidationError


def format_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x == 0.0:  # normalize -0.0
        return "0"
    return format(x, ".17g")


def _emit(obj, out: list) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, str):
        import json

        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise ValidationError("non-finite float cannot be serialized to JSON")
        out.append(format_float(v))
    elif isinstance(obj, np.ndarray):
        _emit(obj.tolist(), out)
    elif isinstance(obj, dict):
        out.append("{")
        first = True
        for k in obj:
            if not isinstance(k, str):
                raise ValidationError("JSON object keys must be strings")
            if not first:
                out.append(",")
            _emit(k, out)
            out.append(":")
            _emit(obj[k], out)
            first = False
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _emit(v, out)
        out.append("]")
    else:
        raise ValidationError(f"cannot serialize {type(obj).__name__} to JSON")


def dumps(obj) -> str:
    """Compact JSON with fixed float formatting; key order is preserved."""
    out: list = []
    _emit(obj, out)
    return "".join(out)


def dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))
        fh.write("\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
