//! Embedded DuckDB bindings for the nnsql engine layer.
//!
//! Exposes the minimal surface the Python package needs: open a database,
//! run a statement batch, run one query with positional parameters, clone a
//! connection for concurrent workers. Values cross the boundary as plain
//! Python scalars (None, bool, int, float, str).

use std::sync::Mutex;

use duckdb::types::Value as DbValue;
use duckdb::{params_from_iter, AccessMode, Config, Connection};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::IntoPyObjectExt;

fn db_err(e: duckdb::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_db_value(v: &Bound<'_, PyAny>) -> PyResult<DbValue> {
    if v.is_none() {
        return Ok(DbValue::Null);
    }
    if v.is_instance_of::<pyo3::types::PyBool>() {
        return Ok(DbValue::Boolean(v.extract::<bool>()?));
    }
    if let Ok(i) = v.extract::<i64>() {
        return Ok(DbValue::BigInt(i));
    }
    if let Ok(f) = v.extract::<f64>() {
        return Ok(DbValue::Double(f));
    }
    if let Ok(s) = v.extract::<String>() {
        return Ok(DbValue::Text(s));
    }
    Err(PyValueError::new_err(format!(
        "unsupported SQL parameter type: {}",
        v.get_type().name()?
    )))
}

fn value_to_py(py: Python<'_>, v: DbValue) -> PyResult<Py<PyAny>> {
    match v {
        DbValue::Null => Ok(py.None()),
        DbValue::Boolean(b) => b.into_py_any(py),
        DbValue::TinyInt(i) => i64::from(i).into_py_any(py),
        DbValue::SmallInt(i) => i64::from(i).into_py_any(py),
        DbValue::Int(i) => i64::from(i).into_py_any(py),
        DbValue::BigInt(i) => i.into_py_any(py),
        DbValue::HugeInt(i) => i.into_py_any(py),
        DbValue::UHugeInt(u) => u.into_py_any(py),
        DbValue::UTinyInt(u) => u64::from(u).into_py_any(py),
        DbValue::USmallInt(u) => u64::from(u).into_py_any(py),
        DbValue::UInt(u) => u64::from(u).into_py_any(py),
        DbValue::UBigInt(u) => u.into_py_any(py),
        DbValue::Float(f) => f64::from(f).into_py_any(py),
        DbValue::Double(f) => f.into_py_any(py),
        DbValue::Decimal(d) => {
            let parsed: f64 = format!("{d}")
                .parse()
                .map_err(|e| PyRuntimeError::new_err(format!("bad decimal: {e}")))?;
            parsed.into_py_any(py)
        }
        DbValue::Text(s) => s.into_py_any(py),
        other => Err(PyRuntimeError::new_err(format!(
            "unsupported result value: {other:?}"
        ))),
    }
}

/// One DuckDB connection. Not shared between threads on the Python side;
/// use `clone_connection` to get an independent handle over the same
/// database instance for concurrent workers.
#[pyclass]
struct DuckConnection {
    inner: Mutex<Option<Connection>>,
}

impl DuckConnection {
    fn with_conn<T>(&self, f: impl FnOnce(&Connection) -> PyResult<T>) -> PyResult<T> {
        let guard = self
            .inner
            .lock()
            .map_err(|_| PyRuntimeError::new_err("connection mutex poisoned"))?;
        match guard.as_ref() {
            Some(conn) => f(conn),
            None => Err(PyRuntimeError::new_err("connection is closed")),
        }
    }
}

#[pymethods]
impl DuckConnection {
    /// Run a semicolon-separated batch of statements, discarding results.
    fn execute_batch(&self, py: Python<'_>, sql: &str) -> PyResult<()> {
        py.detach(|| self.with_conn(|conn| conn.execute_batch(sql).map_err(db_err)))
    }

    /// Run one query with positional `?` parameters.
    /// Returns (column_names, rows) with rows as lists of Python scalars.
    #[pyo3(signature = (sql, params=None))]
    fn query(
        &self,
        py: Python<'_>,
        sql: &str,
        params: Option<Vec<Bound<'_, PyAny>>>,
    ) -> PyResult<(Vec<String>, Vec<Vec<Py<PyAny>>>)> {
        let bound: Vec<DbValue> = params
            .unwrap_or_default()
            .iter()
            .map(to_db_value)
            .collect::<PyResult<_>>()?;

        let (names, raw_rows) = py.detach(|| {
            self.with_conn(|conn| {
                let mut stmt = conn.prepare(sql).map_err(db_err)?;
                let mut rows = stmt.query(params_from_iter(bound.iter())).map_err(db_err)?;
                let mut raw: Vec<Vec<DbValue>> = Vec::new();
                let mut ncols = 0usize;
                while let Some(row) = rows.next().map_err(db_err)? {
                    let stmt_ref = row.as_ref();
                    if ncols == 0 {
                        ncols = stmt_ref.column_count();
                    }
                    let mut rec = Vec::with_capacity(ncols);
                    for i in 0..ncols {
                        rec.push(row.get::<_, DbValue>(i).map_err(db_err)?);
                    }
                    raw.push(rec);
                }
                drop(rows);
                // query() executes eagerly, so result metadata is available
                // even for empty results.
                let names = stmt.column_names();
                Ok((names, raw))
            })
        })?;

        let rows = raw_rows
            .into_iter()
            .map(|rec| rec.into_iter().map(|v| value_to_py(py, v)).collect())
            .collect::<PyResult<Vec<Vec<Py<PyAny>>>>>()?;
        Ok((names, rows))
    }

    /// Prepare once, execute per row.  Rows are positional parameter lists.
    fn execute_many(
        &self,
        py: Python<'_>,
        sql: &str,
        rows: Vec<Vec<Bound<'_, PyAny>>>,
    ) -> PyResult<usize> {
        let converted: Vec<Vec<DbValue>> = rows
            .iter()
            .map(|r| r.iter().map(to_db_value).collect())
            .collect::<PyResult<_>>()?;
        py.detach(|| {
            self.with_conn(|conn| {
                let mut stmt = conn.prepare(sql).map_err(db_err)?;
                let mut n = 0usize;
                for row in &converted {
                    n += stmt
                        .execute(params_from_iter(row.iter()))
                        .map_err(db_err)?;
                }
                Ok(n)
            })
        })
    }

    /// Bulk-append rows to a table via the engine's appender path.
    fn append_rows(
        &self,
        py: Python<'_>,
        table: &str,
        rows: Vec<Vec<Bound<'_, PyAny>>>,
    ) -> PyResult<usize> {
        let converted: Vec<Vec<DbValue>> = rows
            .iter()
            .map(|r| r.iter().map(to_db_value).collect())
            .collect::<PyResult<_>>()?;
        py.detach(|| {
            self.with_conn(|conn| {
                let mut app = conn.appender(table).map_err(db_err)?;
                for row in &converted {
                    let refs: Vec<&dyn duckdb::ToSql> =
                        row.iter().map(|v| v as &dyn duckdb::ToSql).collect();
                    app.append_row(refs.as_slice()).map_err(db_err)?;
                }
                app.flush().map_err(db_err)?;
                Ok(converted.len())
            })
        })
    }

    /// Independent connection over the same database instance.
    fn clone_connection(&self) -> PyResult<DuckConnection> {
        let cloned = self.with_conn(|conn| conn.try_clone().map_err(db_err))?;
        Ok(DuckConnection {
            inner: Mutex::new(Some(cloned)),
        })
    }

    /// Engine version tag reported by libduckdb.
    fn engine_version(&self) -> PyResult<String> {
        self.with_conn(|conn| conn.version().map_err(db_err))
    }

    fn close(&self) -> PyResult<()> {
        let mut guard = self
            .inner
            .lock()
            .map_err(|_| PyRuntimeError::new_err("connection mutex poisoned"))?;
        guard.take();
        Ok(())
    }
}

/// Open a database. `path` of ":memory:" opens an in-memory instance.
#[pyfunction]
#[pyo3(signature = (path, read_only=false))]
fn connect(path: &str, read_only: bool) -> PyResult<DuckConnection> {
    let conn = if path == ":memory:" {
        Connection::open_in_memory().map_err(db_err)?
    } else if read_only {
        let config = Config::default()
            .access_mode(AccessMode::ReadOnly)
            .map_err(db_err)?;
        Connection::open_with_flags(path, config).map_err(db_err)?
    } else {
        Connection::open(path).map_err(db_err)?
    };
    Ok(DuckConnection {
        inner: Mutex::new(Some(conn)),
    })
}

#[pymodule(name = "_duckdb")]
fn nnsql_duckdb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(connect, m)?)?;
    m.add_class::<DuckConnection>()?;
    Ok(())
}
