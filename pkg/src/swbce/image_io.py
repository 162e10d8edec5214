"""Binary PGM (P5) maps plus the JSON / CSV writers used for reports.

Reading accepts anything the netpbm grammar allows in the header (arbitrary
whitespace runs, ``#`` comments).  Writing always emits the single canonical
form ``P5\\n<w> <h>\\n<maxval>\\n`` so files are byte-reproducible.
"""

from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path

import numpy as np

from .errors import IoFailure, MalformedHeader, TruncatedData, UnsupportedMaxval
from .maps import as_binary_map, as_soft_map

SUPPORTED_MAXVALS = (255, 65535)
_WHITESPACE = b" \t\n\r\v\f"


def _parse_header(data: bytes):
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(data) and (data[pos] in _WHITESPACE or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                while pos < len(data) and data[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise TruncatedData("file ends inside the PGM header")
        tokens.append(data[start:pos])
    if pos >= len(data):
        raise TruncatedData("missing whitespace after maxval")
    magic, *numbers = tokens
    if magic != b"P5":
        raise MalformedHeader(f"not a binary PGM (magic {magic!r})")
    try:
        width, height, maxval = (int(t) for t in numbers)
    except ValueError:
        raise MalformedHeader(f"non-integer header field in {numbers!r}") from None
    if width <= 0 or height <= 0:
        raise MalformedHeader(f"invalid dimensions {width}x{height}")
    return width, height, maxval, pos + 1


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Return the raw samples as a ``(height, width)`` integer array and the maxval."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not data:
        raise TruncatedData(f"{path}: empty file")
    width, height, maxval, offset = _parse_header(data)
    if maxval not in SUPPORTED_MAXVALS:
        raise UnsupportedMaxval(f"{path}: maxval {maxval} (supported: 255, 65535)")
    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype("u1")
    nbytes = width * height * dtype.itemsize
    if len(data) - offset < nbytes:
        raise TruncatedData(f"{path}: expected {nbytes} sample bytes, got {len(data) - offset}")
    samples = np.frombuffer(data, dtype=dtype, count=width * height, offset=offset)
    return samples.reshape(height, width).astype(np.int64), maxval


def read_soft(path) -> np.ndarray:
    samples, maxval = read_pgm(path)
    return samples / float(maxval)


def read_binary(path, positive_threshold: float = 0.5) -> np.ndarray:
    return read_soft(path) >= positive_threshold


def _write_bytes(path, payload: bytes):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def encode_pgm(samples: np.ndarray, maxval: int) -> bytes:
    height, width = samples.shape
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    dtype = ">u2" if maxval == 65535 else "u1"
    return header + np.ascontiguousarray(samples, dtype=dtype).tobytes()


def quantize(values: np.ndarray, maxval: int) -> np.ndarray:
    # values are non-negative, so floor(x + 0.5) rounds ties away from zero
    return np.floor(values * maxval + 0.5).astype(np.int64)


def write_soft(values, path, maxval: int = 65535) -> None:
    if maxval not in SUPPORTED_MAXVALS:
        raise UnsupportedMaxval(f"maxval {maxval} (supported: 255, 65535)")
    values = as_soft_map(values)
    _write_bytes(path, encode_pgm(quantize(values, maxval), maxval))


def write_binary(values, path) -> None:
    values = as_binary_map(values)
    _write_bytes(path, encode_pgm(values.astype(np.int64) * 255, 255))


def write_json(obj, path) -> None:
    """UTF-8, keys kept in insertion order, LF line endings."""
    text = json.dumps(obj, indent=2, ensure_ascii=False) + "\n"
    _write_bytes(path, text.encode("utf-8"))


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IoFailure(f"{path}: invalid JSON ({exc})") from exc


def format_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_csv(header, rows, path) -> None:
    _write_bytes(path, format_csv(header, rows).encode("utf-8"))


def list_pgm_stems(directory) -> dict[str, Path]:
    try:
        entries = sorted(os.listdir(directory))
    except OSError as exc:
        raise IoFailure(f"cannot list {directory}: {exc}") from exc
    return {Path(e).stem: Path(directory) / e for e in entries if e.endswith(".pgm")}
