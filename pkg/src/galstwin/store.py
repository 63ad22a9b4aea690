"""In-memory time-series store for plant and twin data, with a small
SELECT query language."""
from __future__ import annotations

import math
import re
import threading
from array import array
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .analysis import TimeSeries

__all__ = ["StoreError", "UnknownLabel", "OrderingError", "QueryError", "Query",
           "DataStore", "parse_query"]


class StoreError(Exception):
    pass


class UnknownLabel(StoreError, KeyError):
    def __init__(self, label: str):
        self.label = label
        super().__init__(f"unknown label {label!r}")

    def __str__(self) -> str:
        return self.args[0]


class OrderingError(StoreError, ValueError):
    pass


class QueryError(StoreError, ValueError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} at position {position}")


class _Table:
    __slots__ = ("columns", "ticks", "times", "values", "notes", "last")

    def __init__(self, columns: tuple[str, ...]):
        self.columns = columns
        self.ticks = array("q")
        self.times = array("d")
        self.values = array("d")
        self.notes: list[str] = []
        self.last = -math.inf


class DataStore:
    """Columnar per-label storage; rows of one label are time-ordered.

    Appends and reads are serialised by a lock, so the simulation thread
    and API handlers can share one store.
    """

    def __init__(self):
        self._tables: dict[str, _Table] = {}
        self._lock = threading.Lock()

    def declare(self, label: str, columns: Sequence[str] = ("value",)) -> None:
        cols = tuple(columns)
        if not cols or len(set(cols)) != len(cols):
            raise StoreError(f"{label}: columns must be unique and non-empty")
        with self._lock:
            t = self._tables.get(label)
            if t is None:
                self._tables[label] = _Table(cols)
            elif t.columns != cols:
                raise StoreError(f"{label}: already declared with columns {t.columns}")

    def labels(self) -> list[str]:
        with self._lock:
            return sorted(self._tables)

    def columns(self, label: str) -> tuple[str, ...]:
        return self._table(label).columns

    def __len__(self) -> int:
        return len(self._tables)

    def _table(self, label: str) -> _Table:
        try:
            return self._tables[label]
        except KeyError:
            raise UnknownLabel(label) from None

    def append(self, label: str, tick: int, time: float, values: Sequence[float] | float,
               annotation: str = "") -> None:
        if isinstance(values, (int, float)):
            values = (values,)
        with self._lock:
            t = self._tables.get(label)
            if t is None:
                # ad-hoc labels get generic column names
                t = self._tables[label] = _Table(tuple(f"v{i}" for i in range(len(values)))
                                                 if len(values) > 1 else ("value",))
            if len(values) != len(t.columns):
                raise StoreError(f"{label}: expected {len(t.columns)} values, got {len(values)}")
            if time < t.last:
                raise OrderingError(f"{label}: time {time} before last sample {t.last}")
            t.last = time
            t.ticks.append(tick)
            t.times.append(time)
            t.values.extend(values)
            t.notes.append(annotation)

    def append_block(self, label: str, ticks: Sequence[int], times: Sequence[float],
                     values: np.ndarray) -> None:
        """Append many single-column rows at once (sorted by time)."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float).reshape(len(times), -1)
        with self._lock:
            t = self._table(label)
            if values.shape[1] != len(t.columns):
                raise StoreError(f"{label}: expected {len(t.columns)} columns")
            if len(times) == 0:
                return
            if times[0] < t.last or np.any(np.diff(times) < 0):
                raise OrderingError(f"{label}: block is not time-ordered")
            t.last = float(times[-1])
            t.ticks.extend(int(k) for k in ticks)
            t.times.frombytes(times.tobytes())
            t.values.frombytes(values.ravel().tobytes())
            t.notes.extend([""] * len(times))

    def count(self, label: str) -> int:
        with self._lock:
            return len(self._table(label).times)

    def arrays(self, label: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Snapshot (ticks, times, values[n, k]) of a label."""
        with self._lock:
            t = self._table(label)
            n = len(t.times)
            ticks = np.frombuffer(t.ticks, dtype=np.int64, count=n).copy()
            times = np.frombuffer(t.times, dtype=float, count=n).copy()
            vals = np.frombuffer(t.values, dtype=float,
                                 count=n * len(t.columns)).copy().reshape(n, len(t.columns))
        return ticks, times, vals

    def series(self, label: str, column: str | None = None) -> TimeSeries:
        cols = self.columns(label)
        col = cols[0] if column is None else column
        if col not in cols:
            raise StoreError(f"{label}: no column {col!r}")
        _, times, vals = self.arrays(label)
        return TimeSeries(f"{label}.{col}", times, vals[:, cols.index(col)])

    def query(self, text: str) -> list[dict]:
        q = parse_query(text)
        with self._lock:
            t = self._table(q.label)
            n = len(t.times)
            cols = t.columns
            notes = t.notes[:n]
            ticks = np.frombuffer(t.ticks, dtype=np.int64, count=n).copy()
            times = np.frombuffer(t.times, dtype=float, count=n).copy()
            vals = np.frombuffer(t.values, dtype=float, count=n * len(cols)).copy()
        vals = vals.reshape(n, len(cols))
        available = ("tick", "time", *cols, "annotation")
        select = available if q.columns == ("*",) else q.columns
        for c, pos in zip(q.columns, q.column_positions):
            if c != "*" and c not in available:
                raise QueryError(f"unknown column {c!r}", pos)
        mask = np.ones(n, dtype=bool)
        for field, op, value in q.where:
            arr = ticks if field == "tick" else times
            mask &= _OPS[op](arr, value)
        idx = np.nonzero(mask)[0]
        if q.limit is not None:
            idx = idx[:q.limit]
        rows = []
        for i in idx:
            row = {}
            for c in select:
                if c == "tick":
                    row[c] = int(ticks[i])
                elif c == "time":
                    row[c] = float(times[i])
                elif c == "annotation":
                    row[c] = notes[i]
                else:
                    row[c] = float(vals[i, cols.index(c)])
            rows.append(row)
        return rows

    def to_csv(self, label: str) -> str:
        cols = self.columns(label)
        ticks, times, vals = self.arrays(label)
        lines = [",".join(("tick", "time_s", *cols))]
        for k, r, row in zip(ticks, times, vals):
            lines.append(",".join((str(int(k)), repr(float(r)), *(repr(float(v)) for v in row))))
        return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ query
_OPS = {
    "<": np.less, "<=": np.less_equal, ">": np.greater, ">=": np.greater_equal,
    "=": np.equal, "!=": np.not_equal,
}

_TOKEN = re.compile(r"\s*(?:(?P<num>-?\d+(?:\.\d*)?(?:[eE][-+]?\d+)?)"
                    r"|(?P<op><=|>=|!=|<|>|=)"
                    r"|(?P<punct>[,*])"
                    r"|(?P<word>[A-Za-z_][A-Za-z0-9_.:\-]*))")


@dataclass(frozen=True)
class Query:
    label: str
    columns: tuple[str, ...]
    where: tuple[tuple[str, str, float], ...] = ()
    limit: int | None = None
    column_positions: tuple[int, ...] = ()


def _tokens(text: str) -> list[tuple[str, str, int]]:
    out = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise QueryError(f"unexpected character {text[start]!r}", start)
        kind = m.lastgroup
        out.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


def parse_query(text: str) -> Query:
    """Parse ``SELECT cols FROM label [WHERE f op x [AND ...]] [LIMIT n]``.

    ``f`` is ``time`` or ``tick``.  Keywords are case-insensitive.
    """
    toks = _tokens(text)
    i = 0

    def peek():
        return toks[i]

    def expect_word(word: str):
        nonlocal i
        kind, val, pos = toks[i]
        if kind != "word" or val.upper() != word:
            raise QueryError(f"expected {word}", pos)
        i += 1

    expect_word("SELECT")
    cols: list[str] = []
    positions: list[int] = []
    while True:
        kind, val, pos = peek()
        if kind == "punct" and val == "*" and not cols:
            cols.append("*")
            positions.append(pos)
            i += 1
            break
        if kind != "word" or val.upper() in ("FROM", "WHERE", "LIMIT"):
            raise QueryError("expected column name", pos)
        cols.append(val)
        positions.append(pos)
        i += 1
        kind, val, pos = peek()
        if kind == "punct" and val == ",":
            i += 1
            continue
        break
    expect_word("FROM")
    kind, label, pos = peek()
    if kind != "word":
        raise QueryError("expected label", pos)
    i += 1
    where: list[tuple[str, str, float]] = []
    limit = None
    kind, val, pos = peek()
    if kind == "word" and val.upper() == "WHERE":
        i += 1
        while True:
            kind, field, pos = peek()
            if kind != "word" or field.lower() not in ("time", "tick"):
                raise QueryError("expected 'time' or 'tick'", pos)
            i += 1
            kind, op, pos = peek()
            if kind != "op":
                raise QueryError("expected comparison operator", pos)
            i += 1
            kind, num, pos = peek()
            if kind != "num":
                raise QueryError("expected number", pos)
            i += 1
            where.append((field.lower(), op, float(num)))
            kind, val, pos = peek()
            if kind == "word" and val.upper() == "AND":
                i += 1
                continue
            break
    kind, val, pos = peek()
    if kind == "word" and val.upper() == "LIMIT":
        i += 1
        kind, num, pos = peek()
        if kind != "num" or not re.fullmatch(r"\d+", num):
            raise QueryError("expected non-negative integer", pos)
        limit = int(num)
        i += 1
    kind, val, pos = peek()
    if kind != "end":
        raise QueryError(f"unexpected token {val!r}", pos)
    return Query(label, tuple(cols), tuple(where), limit, tuple(positions))

