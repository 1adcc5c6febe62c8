"""CSV and 16-bit PGM readers/writers with atomic replacement."""
from __future__ import annotations

import os
import re
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import FileError


@contextmanager
def atomic_open(path, mode="w", **kwargs):
    """Write to a temporary file next to ``path`` and rename on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, array):
    """Write a 1-D array one value per line, or a 2-D array row-major."""
    array = np.asarray(array, dtype=float)
    if array.ndim == 1:
        array = array[:, None]
    with atomic_open(path, newline="") as fh:
        for row in array:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_csv(path) -> np.ndarray:
    """Read a CSV written by :func:`write_csv` as a 2-D array."""
    path = Path(path)
    if not path.is_file():
        raise FileError(f"no such file: {path}")
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise FileError(f"cannot parse {path}: {exc}") from exc


def read_vector(path) -> np.ndarray:
    return read_csv(path).ravel()


def write_pgm(path, image):
    """Write a 2-D array as binary 16-bit PGM (P5).

    Values are scaled by ``round(65535 * (v - vmin) / (vmax - vmin))``;
    ``vmin`` and ``vmax`` are stored in the comment line so the scaling can
    be undone by :func:`read_pgm`.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError("PGM export needs a 2-D image")
    vmin, vmax = float(image.min()), float(image.max())
    span = vmax - vmin
    scaled = np.zeros(image.shape) if span == 0 else (image - vmin) / span
    data = np.round(65535 * scaled).astype(">u2")
    header = f"P5\n# vmin={vmin!r} vmax={vmax!r}\n{image.shape[1]} {image.shape[0]}\n65535\n"
    with atomic_open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes())


_PGM = re.compile(rb"P5\s*#\s*vmin=(\S+)\s+vmax=(\S+)\s+(\d+)\s+(\d+)\s+(\d+)\s")


def read_pgm(path) -> np.ndarray:
    """Read a PGM written by :func:`write_pgm`, restoring the value range."""
    raw = Path(path).read_bytes()
    m = _PGM.match(raw)
    if m is None:
        raise FileError(f"{path} is not a varlp 16-bit PGM")
    vmin, vmax = float(m.group(1)), float(m.group(2))
    width, height, maxval = int(m.group(3)), int(m.group(4)), int(m.group(5))
    if maxval != 65535:
        raise FileError(f"{path}: expected maxval 65535, got {maxval}")
    data = np.frombuffer(raw, dtype=">u2", count=width * height, offset=m.end())
    return vmin + (vmax - vmin) * data.reshape(height, width).astype(float) / 65535
