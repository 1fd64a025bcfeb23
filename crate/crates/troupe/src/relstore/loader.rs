//! CSV loading: one file per (actor, relation), named
//! `<type>.<name>.<relation>.csv`, header row matching the schema's
//! column names. Rows load through a normal transaction on the owning
//! actor, so durability and OCC instrumentation apply as usual.

use crate::addr::ActorAddress;
use crate::engine::Engine;
use crate::error::{EngineError, Result};
use crate::value::{ColumnType, Value};
use std::path::Path;
use std::sync::Arc;

fn parse_value(raw: &str, ty: ColumnType, col: &str) -> Result<Value> {
    let raw = raw.trim();
    match ty {
        ColumnType::Int => raw
            .parse::<i64>()
            .map(Value::Int)
            .map_err(|_| EngineError::TypeMismatch(format!("column `{col}`: `{raw}` is not an int"))),
        ColumnType::Float => raw.parse::<f64>().map(Value::Float).map_err(|_| {
            EngineError::TypeMismatch(format!("column `{col}`: `{raw}` is not a float"))
        }),
        ColumnType::Timestamp => raw.parse::<i64>().map(Value::Timestamp).map_err(|_| {
            EngineError::TypeMismatch(format!("column `{col}`: `{raw}` is not a timestamp"))
        }),
        ColumnType::Str => Ok(Value::Str(raw.to_string())),
    }
}

/// Load one `<type>.<name>.<relation>.csv` file. Returns rows inserted.
pub fn load_csv_file(engine: &Arc<Engine>, path: &Path) -> Result<usize> {
    let stem = path
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| EngineError::Config(format!("bad csv path {path:?}")))?;
    let stem = stem
        .strip_suffix(".csv")
        .ok_or_else(|| EngineError::Config(format!("`{stem}` is not a .csv file")))?;
    let parts: Vec<&str> = stem.split('.').collect();
    if parts.len() != 3 {
        return Err(EngineError::Config(format!(
            "csv file name `{stem}.csv` must be <type>.<name>.<relation>.csv"
        )));
    }
    let addr = ActorAddress::new(parts[0], parts[1])?;
    let relation = parts[2].to_string();

    let actor = engine.actor(&addr)?;
    let schema = actor.relation(&relation)?.schema().clone();

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| EngineError::Io(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| EngineError::Io(e.to_string()))?
        .clone();
    let expected: Vec<&str> = schema.columns.iter().map(|(c, _)| c.as_str()).collect();
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(EngineError::TypeMismatch(format!(
            "csv header {got:?} does not match schema columns {expected:?} for `{relation}`"
        )));
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| EngineError::Io(e.to_string()))?;
        let mut tuple = Vec::with_capacity(schema.columns.len());
        for (raw, (col, ty)) in record.iter().zip(&schema.columns) {
            tuple.push(parse_value(raw, *ty, col)?);
        }
        schema.typecheck(&tuple)?;
        rows.push(tuple);
    }

    let count = rows.len();
    let txn = engine.begin_root(crate::txn::TxnOptions::default())?;
    let fut = txn.invoke_with(&addr, move |ctx| {
        let rel = ctx.relation(&relation)?;
        for row in rows {
            rel.insert(row)?;
        }
        Ok(Value::Unit)
    })?;
    match txn.get(&fut) {
        Ok(_) => match txn.commit() {
            crate::error::CommitResult::Committed(_) => Ok(count),
            crate::error::CommitResult::Aborted(r) => {
                Err(EngineError::Aborted(r))
            }
        },
        Err(e) => {
            txn.abort();
            Err(e)
        }
    }
}

/// Load every `*.csv` in a directory, in file-name order. Returns total
/// rows inserted.
pub fn load_csv_dir(engine: &Arc<Engine>, dir: &Path) -> Result<usize> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    let mut total = 0;
    for p in &paths {
        total += load_csv_file(engine, p)?;
    }
    Ok(total)
}
