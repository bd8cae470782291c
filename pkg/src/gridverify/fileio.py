"""Line-oriented text format helpers shared by model/case/dataset/report files."""

from __future__ import annotations

import hashlib
from typing import List, Tuple

import numpy as np


class ParseError(ValueError):
    """Malformed document; carries line/field location."""

    def __init__(self, msg: str, line: int | None = None, field: str | None = None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field '{field}'")
        super().__init__(msg + (f" ({', '.join(loc)})" if loc else ""))
        self.line = line
        self.field = field


def fmt_float(x: float) -> str:
    """17 significant digits: exact float64 round trip."""
    return format(float(x), ".17g")


def fmt_vec(v) -> str:
    return " ".join(fmt_float(x) for x in np.asarray(v, dtype=np.float64).ravel())


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def file_hash(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]


class LineReader:
    """Cursor over a document's lines reporting locations on error."""

    def __init__(self, text: str):
        self.rows = text.splitlines()
        self.pos = 0

    def next(self, field: str) -> Tuple[int, List[str]]:
        while self.pos < len(self.rows):
            lineno = self.pos + 1
            raw = self.rows[self.pos].strip()
            self.pos += 1
            if raw and not raw.startswith("#"):
                return lineno, raw.split()
        raise ParseError("unexpected end of file", line=len(self.rows), field=field)

    def peek_key(self) -> str:
        pos = self.pos
        try:
            _, toks = self.next("peek")
        except ParseError:
            return ""
        self.pos = pos
        return toks[0]

    def header(self, tag: str, version: str) -> None:
        lineno, toks = self.next("header")
        if len(toks) != 2 or toks[0] != tag:
            raise ParseError(f"not a {tag} file", line=lineno, field="header")
        if toks[1] != version:
            raise ParseError(
                f"unsupported version '{toks[1]}' (expected {version})",
                line=lineno,
                field="version",
            )

    def take(self, field: str) -> List[str]:
        lineno, toks = self.next(field)
        if toks[0] != field:
            raise ParseError(
                f"expected field '{field}', found '{toks[0]}'", line=lineno, field=toks[0]
            )
        return toks[1:]

    def take_int(self, field: str) -> int:
        lineno = self.pos + 1
        toks = self.take(field)
        try:
            return int(toks[0])
        except (IndexError, ValueError):
            raise ParseError(f"bad integer for '{field}'", line=lineno, field=field)

    def take_float(self, field: str) -> float:
        lineno = self.pos + 1
        toks = self.take(field)
        try:
            return float(toks[0])
        except (IndexError, ValueError):
            raise ParseError(f"bad number for '{field}'", line=lineno, field=field)

    def take_str(self, field: str) -> str:
        lineno = self.pos + 1
        toks = self.take(field)
        if not toks:
            raise ParseError(f"missing value for '{field}'", line=lineno, field=field)
        return toks[0]

    def take_floats(self, field: str, n: int) -> np.ndarray:
        lineno = self.pos + 1
        toks = self.take(field)
        if len(toks) != n:
            raise ParseError(
                f"'{field}' expects {n} numbers, found {len(toks)}", line=lineno, field=field
            )
        try:
            return np.array([float(t) for t in toks], dtype=np.float64)
        except ValueError:
            raise ParseError(f"bad number in '{field}'", line=lineno, field=field)

    def row_floats(self, field: str, n: int) -> np.ndarray:
        """A data row: 'field v1 ... vn' already split by take()."""
        return self.take_floats(field, n)
