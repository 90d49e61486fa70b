"""Reading and writing single-channel images, CSV grids and CSV signals.

Images are 8- or 16-bit grayscale PNG or PGM files, mapped to reals in
``[0, 1]``.  Grids and signals are plain comma-separated numbers; lines
starting with ``#`` are comments and a non-numeric first row is a header.
Written CSV always uses ``.12e`` floats and LF line endings.
"""

from __future__ import annotations

import csv
import io as _io
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import InputFormatError

IMAGE_SUFFIXES = (".png", ".pgm", ".pnm")
FLOAT_FORMAT = ".12e"
_SCALE = {"1": 1.0, "L": 255.0, "I;16": 65535.0, "I;16B": 65535.0, "I;16L": 65535.0,
          "I": 65535.0}


def read_image(path) -> np.ndarray:
    """Grayscale image as float64 in ``[0, 1]``."""
    try:
        with Image.open(path) as img:
            mode = img.mode
            if mode not in _SCALE:
                raise InputFormatError(
                    f"{path}: image mode {mode!r} is not single-channel 8/16-bit grayscale")
            data = np.asarray(img, dtype=np.float64)
    except (OSError, UnidentifiedImageError) as exc:
        raise InputFormatError(f"{path}: cannot read image ({exc})") from exc
    if mode == "I" and data.max(initial=0) > 65535:
        raise InputFormatError(f"{path}: 32-bit images are not supported")
    return data / _SCALE[mode]


def write_image(path, values, bits: int = 8) -> None:
    """Store values in ``[0, 1]`` as a grayscale PNG (values are clipped)."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    top = 255 if bits == 8 else 65535
    scaled = np.rint(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * top)
    Image.fromarray(scaled.astype(np.uint8 if bits == 8 else np.uint16)).save(path, format="PNG")


def _numeric_rows(path) -> list:
    try:
        text = Path(path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise InputFormatError(f"{path}: cannot read ({exc})") from exc
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    rows = list(csv.reader(lines))
    out = []
    for lineno, row in enumerate(rows, 1):
        try:
            out.append([float(v) for v in row])
        except ValueError:
            if lineno == 1:
                continue  # header
            raise InputFormatError(f"{path}: non-numeric value in data row {lineno}") from None
    if not out:
        raise InputFormatError(f"{path}: no numeric rows")
    return out


def read_grid_csv(path) -> np.ndarray:
    """Rectangular grid of numbers (one CSV row per grid row)."""
    rows = _numeric_rows(path)
    if len({len(r) for r in rows}) != 1:
        raise InputFormatError(f"{path}: rows have different lengths")
    grid = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(grid)):
        raise InputFormatError(f"{path}: non-finite values")
    return grid


def read_signal_csv(path) -> np.ndarray:
    """1-D signal stored as one row or one column."""
    grid = read_grid_csv(path)
    if 1 not in grid.shape:
        raise InputFormatError(f"{path}: a signal must be a single row or column")
    return grid.ravel()


def read_input(path) -> np.ndarray:
    """Dispatch on the file suffix: images to :func:`read_image`, otherwise CSV."""
    if Path(path).suffix.lower() in IMAGE_SUFFIXES:
        return read_image(path)
    return read_grid_csv(path)


def format_float(value: float) -> str:
    return format(float(value), FLOAT_FORMAT)


def csv_text(header: Sequence[str] | None, rows: Iterable[Sequence], comments: Sequence[str] = ()) -> str:
    """CSV text with ``# `` comment lines first; floats use ``.12e``."""
    buf = _io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    if header is not None:
        writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v
                         for v in row])
    return buf.getvalue()


def write_text(path, text: str) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(text)


def write_grid_csv(path, values, comments: Sequence[str] = ()) -> None:
    """Grid as headerless CSV rows (a 1-D array becomes a single row)."""
    grid = np.atleast_2d(np.asarray(values, dtype=np.float64))
    write_text(path, csv_text(None, ([float(v) for v in row] for row in grid), comments))
