"""Matrix CSV I/O.

Format: comma-separated numeric rows, newline-terminated, no header, '.'
decimal separator, scientific notation accepted.  Row and column positions
in error messages are 0-based.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

__all__ = ["read_matrix_csv", "write_matrix_csv", "write_text_atomic"]


def write_text_atomic(path, text: str) -> None:
    """Write text via a temp file + rename so a crash never leaves a partial file."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def read_matrix_csv(path) -> np.ndarray:
    """Parse a numeric CSV file into a dense float matrix.

    Raises ValueError naming the offending 0-based row/column on ragged
    rows, non-numeric cells, or an empty file.
    """
    with open(path, "r") as fh:
        lines = fh.read().split("\n")
    while lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ValueError(f"{path}: empty matrix file")
    rows = []
    ncols = None
    for r, line in enumerate(lines):
        cells = line.strip("\r").split(",")
        if ncols is None:
            ncols = len(cells)
        elif len(cells) != ncols:
            raise ValueError(
                f"{path}: row {r}: expected {ncols} columns, found {len(cells)}"
            )
        values = []
        for c, cell in enumerate(cells):
            try:
                values.append(float(cell))
            except ValueError:
                raise ValueError(
                    f"{path}: row {r}, column {c}: not a number: {cell.strip()!r}"
                ) from None
        rows.append(values)
    return np.asarray(rows, dtype=float)


def write_matrix_csv(matrix, path) -> None:
    """Write a dense matrix with 17 significant digits so float64 round-trips
    exactly.  The write is atomic (temp file + rename)."""
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {M.shape}")
    if M.size == 0:
        raise ValueError("refusing to write an empty matrix")
    lines = [",".join(format(v, ".17g") for v in row) for row in M]
    write_text_atomic(path, "\n".join(lines) + "\n")
