"""Plain-text dense matrix files: first line "rows cols", then one row per line, "%.17g" decimals."""
import logging
from pathlib import Path
from typing import Union

import numpy as np

from funnel_sim.errors import ConfigError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def save_matrix(path: PathLike, matrix: np.ndarray) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    rows, cols = matrix.shape
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"{rows} {cols}\n")
        np.savetxt(fh, matrix, fmt="%.17g", delimiter=" ")
    logger.debug("Wrote %dx%d matrix to %s", rows, cols, path)


def load_matrix(path: PathLike) -> np.ndarray:
    path = Path(path)
    try:
        with path.open() as fh:
            header = fh.readline().split()
            body = fh.read().split()
    except OSError as exc:
        raise ConfigError(f"cannot read matrix file: {exc}", field_path=str(path)) from exc

    if len(header) != 2:
        raise ConfigError("first line must be 'rows cols'", field_path=str(path))
    try:
        rows, cols = int(header[0]), int(header[1])
        values = np.array([float(v) for v in body], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"malformed matrix entry: {exc}", field_path=str(path)) from exc

    if values.size != rows * cols:
        raise ConfigError(
            f"expected {rows * cols} entries for a {rows}x{cols} matrix, found {values.size}",
            field_path=str(path),
        )
    return values.reshape(rows, cols)
