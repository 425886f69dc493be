"""Shared plumbing: float formatting, canonical JSON, digests."""

import hashlib
import math

import numpy as np

# All float text emitted by this package goes through fmt_float so that
# artifacts are byte-stable and lossless (17 significant digits round-trips
# any IEEE double).
FLOAT_DIGITS = 17


def fmt_float(x):
    """Format a float with 17 significant digits."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def to_json_text(obj, indent=0):
    """Serialize nested dicts/lists/scalars to JSON with pinned float format.

    The stdlib encoder writes floats with repr(); output here must use the
    same 17-digit convention as every other artifact, so floats are formatted
    explicitly.  Keys are emitted in insertion order (callers build dicts in
    a deliberate order); numpy scalars and arrays are converted on the way.
    """
    pieces = []
    _write_json(obj, pieces, indent, 0)
    return "".join(pieces)


def _write_json(obj, out, indent, depth):
    pad = " " * (indent * (depth + 1)) if indent else ""
    close_pad = " " * (indent * depth) if indent else ""
    nl = "\n" if indent else ""
    sep = "," + nl if indent else ", "
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, (np.integer,)):
        obj = int(obj)
    if isinstance(obj, (np.bool_,)):
        obj = bool(obj)
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, str):
        out.append('"' + obj.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"')
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            # JSON has no literals for these; emit as strings.
            out.append('"%s"' % fmt_float(obj))
        else:
            out.append(fmt_float(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{" + nl)
        for i, (k, v) in enumerate(obj.items()):
            out.append(pad)
            _write_json(str(k), out, indent, depth + 1)
            out.append(": ")
            _write_json(v, out, indent, depth + 1)
            if i + 1 < len(obj):
                out.append(sep)
        out.append(nl + close_pad + "}")
    elif isinstance(obj, (list, tuple)):
        if not len(obj):
            out.append("[]")
            return
        out.append("[" + nl)
        for i, v in enumerate(obj):
            out.append(pad)
            _write_json(v, out, indent, depth + 1)
            if i + 1 < len(obj):
                out.append(sep)
        out.append(nl + close_pad + "]")
    else:
        raise TypeError("cannot serialize %r" % type(obj))


def sha256_text(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def log_spaced_indices(n, count):
    """Pick ~count indices from range(n), log-spaced, always including 0 and n-1."""
    if n <= count:
        return np.arange(n)
    raw = np.unique(np.round(np.geomspace(1, n, count)).astype(int) - 1)
    return np.clip(raw, 0, n - 1)
