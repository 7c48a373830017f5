"""Small shared utilities: hashing, CSV/SVG output, slope fits."""

from __future__ import annotations

import csv
import hashlib
import json

import numpy as np


def content_hash(*parts) -> str:
    """sha256 over a mix of arrays, bytes and JSON-able values.

    Arrays are hashed from their raw little-endian bytes together with shape
    and dtype, so the hash is stable across sessions on the same data.
    """
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, np.ndarray):
            a = np.ascontiguousarray(p)
            h.update(str(a.dtype.str).encode())
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
        elif isinstance(p, bytes):
            h.update(p)
        else:
            h.update(json.dumps(p, sort_keys=True, default=str).encode())
    return h.hexdigest()


def write_csv(path, header, rows):
    """Write rows with a fixed float format so reruns are byte-identical."""

    def fmt(x):
        if isinstance(x, (float, np.floating)):
            return format(float(x), ".17g")
        if isinstance(x, (complex, np.complexfloating)):
            return format(complex(x).real, ".17g") + "+" + format(complex(x).imag, ".17g") + "j"
        return str(x)

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])


def loglog_slope(x, y):
    """Least-squares slope of log(y) against log(x); both must be positive."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive data")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def save_svg(fig, path):
    """Save a matplotlib figure as deterministic SVG (no timestamps)."""
    import matplotlib

    matplotlib.rcParams["svg.hashsalt"] = "wgtomo"
    fig.savefig(path, format="svg", metadata={"Date": None})
