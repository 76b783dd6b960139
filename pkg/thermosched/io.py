"""File formats shared by the pipeline stages: 17-digit CSV tables, sorted-key JSON documents,
token sample files and SHA-256 digests. Writers are byte-deterministic for identical inputs."""
import csv
import hashlib
import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

from thermosched.exceptions import CurveFormatError
from thermosched.typing import FloatArray, IntArray

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


def format_float(value: float) -> str:
    """17 significant digits; infinities as `inf`/`-inf`."""
    value = float(value)
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.17g}"


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fp:
        for block in iter(lambda: fp.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write a table, formatting floats with [`format_float`][thermosched.io.format_float]."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [format_float(v) if isinstance(v, (float, np.floating)) else v for v in row]
            )
    logger.info("Wrote %s", path)
    return path


def read_float_table(
    path: PathLike, required: Sequence[str], optional: Sequence[str] = ()
) -> Dict[str, FloatArray]:
    """Read a numeric CSV into column arrays.

    Args:
        path (PathLike): CSV file with a header row.
        required (Sequence[str]): Columns that must be present.
        optional (Sequence[str]): Columns read when present.

    Raises:
        CurveFormatError: If a required column is missing, a row has the wrong width, or a
            value does not parse as a float. The error carries the offending line number.

    Returns:
        Dict[str, FloatArray]: Mapping of column name to values.
    """
    try:
        with open(path, newline="") as fp:
            lines = list(csv.reader(fp))
    except OSError as e:
        raise CurveFormatError(path, None, f"cannot read file ({e})")
    if not lines:
        raise CurveFormatError(path, 1, "empty file")
    header = [h.strip() for h in lines[0]]
    missing = [c for c in required if c not in header]
    if missing:
        raise CurveFormatError(path, 1, f"missing columns {missing}")
    wanted = list(required) + [c for c in optional if c in header]
    index = {c: header.index(c) for c in wanted}
    columns: Dict[str, List[float]] = {c: [] for c in wanted}
    for lineno, row in enumerate(lines[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise CurveFormatError(
                path, lineno, f"expected {len(header)} fields, found {len(row)}"
            )
        for c in wanted:
            try:
                columns[c].append(float(row[index[c]]))
            except ValueError:
                raise CurveFormatError(
                    path, lineno, f"column {c!r}: not a number {row[index[c]]!r}"
                )
    if not columns[wanted[0]]:
        raise CurveFormatError(path, 2, "no data rows")
    return {c: np.asarray(v, dtype=np.float64) for c, v in columns.items()}


def dumps_json(document: Mapping[str, Any]) -> str:
    return json.dumps(document, sort_keys=True, indent=2, allow_nan=True) + "\n"


def write_json(path: PathLike, document: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(document))
    logger.info("Wrote %s", path)
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        line = getattr(e, "lineno", None)
        raise CurveFormatError(path, line, f"invalid JSON document ({e})")


def write_samples(path: PathLike, tokens: IntArray) -> Path:
    """One sequence per line, tokens separated by single spaces."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fp:
        for row in np.asarray(tokens, dtype=np.int64):
            fp.write(" ".join(str(int(v)) for v in row) + "\n")
    logger.info("Wrote %d sequences to %s", len(tokens), path)
    return path


def read_samples(path: PathLike, length: Optional[int] = None) -> IntArray:
    """Read a sample file written by [`write_samples`][thermosched.io.write_samples]. JSON
    array rows (`[1, 2, 3]`) are accepted as well."""
    rows: List[List[int]] = []
    try:
        with open(path) as fp:
            text = fp.readlines()
    except OSError as e:
        raise CurveFormatError(path, None, f"cannot read file ({e})")
    for lineno, line in enumerate(text, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            row = json.loads(line) if line.startswith("[") else [int(v) for v in line.split()]
            row = [int(v) for v in row]
        except (ValueError, TypeError):
            raise CurveFormatError(path, lineno, "rows must hold integer tokens")
        if length is None:
            length = len(row)
        if len(row) != length or length == 0:
            raise CurveFormatError(path, lineno, f"expected {length} tokens, found {len(row)}")
        rows.append(row)
    if not rows:
        raise CurveFormatError(path, None, "no sequences")
    return np.asarray(rows, dtype=np.int64)
