"""Atomic file output: write to a sibling temp file, then rename."""

import os
from pathlib import Path


def atomic_write(path, data):
    """Write ``data`` (str or bytes) to ``path`` so readers never see a partial file."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)
    return path
