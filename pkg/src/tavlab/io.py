"""Plain-text artifact writing: JSON with a fixed layout, CSV with frozen
columns, and per-directory manifests carrying file hashes."""
import csv
import hashlib
import json
import math
import os

import numpy as np

from tavlab import __version__

MANIFEST = "manifest.json"


def plain(obj):
    """Recursively convert to JSON-safe builtins; non-finite floats become
    the strings ``"nan"``, ``"inf"``, ``"-inf"``."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def unplain(x):
    """Inverse of ``plain`` for a single float field."""
    if isinstance(x, str):
        return float(x)
    return x


def dumps(obj):
    return json.dumps(plain(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_json(path, obj):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps(obj))
    return path


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _cell(v):
    v = plain(v)
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, columns, rows):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"row has {len(row)} cells, expected {len(columns)}")
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory, subcommand, cfg_hash, files, extra=None):
    """Manifest for ``directory``; ``files`` are paths relative to it."""
    entry = {
        "subcommand": subcommand,
        "config_hash": cfg_hash,
        "library_version": __version__,
        "files": {rel: sha256(os.path.join(directory, rel)) for rel in sorted(files)},
    }
    if extra:
        entry.update(extra)
    return write_json(os.path.join(directory, MANIFEST), entry)
