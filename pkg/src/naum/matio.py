"""Matrix file formats.

* ``dense-csv``: one comma-separated row per line.
* ``dense-binary``: three little-endian uint64 (magic, m, n) followed by
  ``m * n`` little-endian float64 values in row-major order.
* ``sparse-coordinate``: MatrixMarket ``coordinate real general`` text with
  1-based indices. Loaded as a :class:`CoordinateMatrix` with zero-based,
  sorted positions.
"""
from __future__ import annotations

import csv
import math
import os
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import InvalidParameter, ParseError
from .linalg import SamplingPattern, as_dense

BINARY_MAGIC = int.from_bytes(b"NAUMDENS", "little")
FORMATS = ("dense-csv", "dense-binary", "sparse-coordinate")
_EXTENSIONS = {".csv": "dense-csv", ".bin": "dense-binary", ".mtx": "sparse-coordinate"}
_HEADER = np.dtype([("magic", "<u8"), ("m", "<u8"), ("n", "<u8")])


class CoordinateMatrix(NamedTuple):
    pattern: SamplingPattern
    values: np.ndarray

    @property
    def shape(self):
        return self.pattern.shape

    def to_csr(self):
        return self.pattern.to_csr(self.values)

    def to_dense(self):
        return self.to_csr().toarray()


def infer_format(path):
    ext = os.path.splitext(str(path))[1].lower()
    try:
        return _EXTENSIONS[ext]
    except KeyError:
        raise InvalidParameter(f"cannot infer the matrix format of {path!r}; pass it explicitly") from None


def load_matrix(path, format=None):
    """Read a matrix; dense formats give an ndarray, the coordinate format a
    :class:`CoordinateMatrix`."""
    format = format or infer_format(path)
    if format == "dense-csv":
        return _read_csv(path)
    if format == "dense-binary":
        return _read_binary(path)
    if format == "sparse-coordinate":
        return _read_coordinate(path)
    raise InvalidParameter(f"unknown matrix format {format!r}; expected one of {FORMATS}")


def _parse_float(tok, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"not a number: {tok.strip()!r}", lineno) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {tok.strip()!r}", lineno)
    return v


def _read_csv(path):
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not t.strip() for t in rec):
                continue
            if width is None:
                width = len(rec)
            elif len(rec) != width:
                raise ParseError(f"expected {width} values, found {len(rec)}", lineno)
            rows.append([_parse_float(t, lineno) for t in rec])
    if not rows:
        raise ParseError("empty matrix file")
    return np.array(rows, dtype=np.float64)


def _read_binary(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.itemsize:
        raise ParseError("file too short for the header")
    head = np.frombuffer(raw, dtype=_HEADER, count=1)[0]
    if int(head["magic"]) != BINARY_MAGIC:
        raise ParseError("bad magic number")
    m, n = int(head["m"]), int(head["n"])
    body = len(raw) - _HEADER.itemsize
    if body != 8 * m * n:
        raise ParseError(f"header says {m}x{n} but the body holds {body} bytes")
    return np.frombuffer(raw, dtype="<f8", offset=_HEADER.itemsize).astype(np.float64).reshape(m, n)


def _read_coordinate(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty matrix file", 1)
    banner = lines[0].split()
    if (len(banner) != 5 or banner[0].lower() != "%%matrixmarket" or banner[1].lower() != "matrix"
            or banner[2].lower() != "coordinate"):
        raise ParseError("expected a '%%MatrixMarket matrix coordinate' header", 1)
    if banner[3].lower() not in ("real", "double", "integer") or banner[4].lower() != "general":
        raise ParseError(f"unsupported field/symmetry {banner[3]} {banner[4]}", 1)
    lineno = 1
    size = None
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        s = line.strip()
        if not s or s.startswith("%"):
            continue
        tok = s.split()
        if size is None:
            if len(tok) != 3 or not all(t.isdigit() for t in tok):
                raise ParseError("size line must be 'rows cols entries'", lineno)
            size = tuple(int(t) for t in tok)
            continue
        if len(tok) != 3:
            raise ParseError(f"expected 'row col value', found {len(tok)} fields", lineno)
        try:
            i, j = int(tok[0]), int(tok[1])
        except ValueError:
            raise ParseError("indices must be integers", lineno) from None
        if not (1 <= i <= size[0] and 1 <= j <= size[1]):
            raise ParseError(f"index ({i}, {j}) outside {size[0]}x{size[1]}", lineno)
        entries.append((i - 1, j - 1, _parse_float(tok[2], lineno), lineno))
    if size is None:
        raise ParseError("missing size line", lineno)
    if len(entries) != size[2]:
        raise ParseError(f"header declares {size[2]} entries, found {len(entries)}", lineno)
    entries.sort(key=lambda e: (e[0], e[1]))
    for a, b in zip(entries, entries[1:]):
        if a[:2] == b[:2]:
            raise ParseError(f"duplicate entry ({a[0] + 1}, {a[1] + 1})", max(a[3], b[3]))
    rows = np.array([e[0] for e in entries], dtype=np.int64)
    cols = np.array([e[1] for e in entries], dtype=np.int64)
    vals = np.array([e[2] for e in entries], dtype=np.float64)
    return CoordinateMatrix(SamplingPattern(size[0], size[1], rows, cols), vals)


def save_matrix(path, M, format=None):
    format = format or infer_format(path)
    if format == "dense-csv":
        M = as_dense(M, "M")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in M:
                w.writerow([repr(float(v)) for v in row])
    elif format == "dense-binary":
        M = as_dense(M, "M")
        head = np.array([(BINARY_MAGIC, M.shape[0], M.shape[1])], dtype=_HEADER)
        with open(path, "wb") as fh:
            fh.write(head.tobytes())
            fh.write(M.astype("<f8").tobytes())
    elif format == "sparse-coordinate":
        if isinstance(M, CoordinateMatrix):
            pat, vals = M.pattern, M.values
        else:
            C = sp.csr_matrix(M, dtype=np.float64)
            C.sum_duplicates()
            C.sort_indices()
            rows = np.repeat(np.arange(C.shape[0]), np.diff(C.indptr))
            pat = SamplingPattern(C.shape[0], C.shape[1], rows, C.indices)
            vals = C.data
        with open(path, "w") as fh:
            fh.write("%%MatrixMarket matrix coordinate real general\n")
            fh.write(f"{pat.rows} {pat.cols} {len(pat)}\n")
            for i, j, v in zip(pat.i, pat.j, vals):
                fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")
    else:
        raise InvalidParameter(f"unknown matrix format {format!r}; expected one of {FORMATS}")


__all__ = ["CoordinateMatrix", "load_matrix", "save_matrix", "infer_format", "FORMATS", "BINARY_MAGIC"]
