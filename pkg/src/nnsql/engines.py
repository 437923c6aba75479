"""Database backends: compiled embedded engine with a stdlib fallback.

The preferred backend is an embedded analytical engine compiled as a
native extension (``nnsql._duckdb``, built from ``native/`` with cargo).
When the extension is absent the package falls back to the standard
library's sqlite3 transparently; the fallback cannot aggregate inside
recursive queries, which the capability probe in :mod:`nnsql.runner`
detects, so depth-agnostic recursive evaluation is unavailable there
while every fixed-depth pipeline keeps working.

Both backends speak the same miniature interface: ``run_batch`` for
statement scripts, ``query`` for one parameterized statement, and
``executemany`` for bulk loads.  Parameters are always named
(``:param``); the native extension takes positional parameters, so the
query text is rewritten in first-occurrence order before it crosses the
boundary.
"""

from __future__ import annotations

import re
import sqlite3
from typing import Any

from .errors import EngineError, EngineUnavailable

try:
    from . import _duckdb as _native
except ImportError:  # extension not built; sqlite fallback only
    _native = None

NATIVE_AVAILABLE = _native is not None

_NAMED_PARAM = re.compile(r":([A-Za-z_][A-Za-z0-9_]*)")


def _to_positional(sql: str, params: dict[str, Any]) -> tuple[str, list[Any]]:
    """Rewrite :name placeholders to ? in first-occurrence order."""
    order: list[Any] = []

    def swap(match: re.Match[str]) -> str:
        name = match.group(1)
        if name not in params:
            raise EngineError(f"no value bound for :{name}", sql)
        order.append(params[name])
        return "?"

    return _NAMED_PARAM.sub(swap, sql), order


class DuckDbBackend:
    """Embedded analytical engine over the compiled extension."""

    dialect = "duckdb"

    def __init__(self, location: str = ":memory:", read_only: bool = False,
                 _conn: Any = None):
        if _native is None:
            raise EngineUnavailable(
                "native engine extension not built; see README (native build) "
                "or use backend='sqlite'"
            )
        self._location = location
        self._conn = _conn if _conn is not None else _native.connect(
            location, read_only=read_only
        )

    def run_batch(self, sql: str) -> None:
        try:
            self._conn.execute_batch(sql)
        except RuntimeError as e:
            raise EngineError(str(e), sql) from e

    def query(self, sql: str, params: dict[str, Any] | None = None
              ) -> tuple[list[str], list[tuple]]:
        text, positional = _to_positional(sql, params or {})
        try:
            names, rows = self._conn.query(text, positional)
        except RuntimeError as e:
            raise EngineError(str(e), sql) from e
        return names, [tuple(r) for r in rows]

    def executemany(self, sql: str, rows: list[tuple]) -> int:
        text, _ = _to_positional(sql, {})
        try:
            return self._conn.execute_many(text, [list(r) for r in rows])
        except RuntimeError as e:
            raise EngineError(str(e), sql) from e

    def append_rows(self, table: str, rows: list[tuple]) -> int:
        """Fast bulk load path; falls back to executemany-style inserts."""
        try:
            return self._conn.append_rows(table, [list(r) for r in rows])
        except RuntimeError as e:
            raise EngineError(str(e), f"APPEND INTO {table}") from e

    def clone(self) -> "DuckDbBackend":
        """Independent connection over the same database instance."""
        return DuckDbBackend(self._location, _conn=self._conn.clone_connection())

    def close(self) -> None:
        self._conn.close()


class SqliteBackend:
    """Standard-library fallback engine."""

    dialect = "sqlite"

    def __init__(self, location: str = ":memory:", read_only: bool = False,
                 _conn: sqlite3.Connection | None = None):
        self._location = location
        if _conn is not None:
            self._conn = _conn
        elif read_only and location != ":memory:":
            uri = f"file:{location}?mode=ro"
            self._conn = sqlite3.connect(uri, uri=True, check_same_thread=False)
        else:
            self._conn = sqlite3.connect(location, check_same_thread=False)
        # autocommit; transactions are driven explicitly with BEGIN/COMMIT
        self._conn.isolation_level = None

    def run_batch(self, sql: str) -> None:
        try:
            self._conn.executescript(sql)
        except sqlite3.Error as e:
            raise EngineError(str(e), sql) from e

    def query(self, sql: str, params: dict[str, Any] | None = None
              ) -> tuple[list[str], list[tuple]]:
        try:
            cur = self._conn.execute(sql, params or {})
            rows = cur.fetchall()
            names = [d[0] for d in cur.description] if cur.description else []
        except sqlite3.Error as e:
            raise EngineError(str(e), sql) from e
        return names, rows

    def executemany(self, sql: str, rows: list[tuple]) -> int:
        text, _ = _to_positional(sql, {})
        try:
            cur = self._conn.executemany(text, rows)
        except sqlite3.Error as e:
            raise EngineError(str(e), sql) from e
        return cur.rowcount if cur.rowcount >= 0 else len(rows)

    def append_rows(self, table: str, rows: list[tuple]) -> int:
        if not rows:
            return 0
        placeholders = ", ".join("?" for _ in rows[0])
        return self.executemany(
            f"INSERT INTO {table} VALUES ({placeholders})", rows
        )

    def clone(self) -> "SqliteBackend":
        """Independent connection: reopen files, snapshot-copy memory DBs."""
        if self._location != ":memory:":
            return SqliteBackend(self._location)
        twin = sqlite3.connect(":memory:", check_same_thread=False)
        self._conn.backup(twin)
        twin.isolation_level = None
        return SqliteBackend(self._location, _conn=twin)

    def close(self) -> None:
        self._conn.close()


Backend = DuckDbBackend | SqliteBackend


def open_backend(location: str = ":memory:", backend: str = "auto",
                 read_only: bool = False) -> Backend:
    """Open a database, preferring the compiled engine when built."""
    if backend == "auto":
        backend = "duckdb" if NATIVE_AVAILABLE else "sqlite"
    if backend == "duckdb":
        return DuckDbBackend(location, read_only=read_only)
    if backend == "sqlite":
        return SqliteBackend(location, read_only=read_only)
    raise EngineUnavailable(f"unknown backend {backend!r}")
