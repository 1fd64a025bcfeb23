//! Per-actor relational state: schema-typed relations with record versions,
//! a relation-level version counter, and hash indexes on integer key
//! columns. Every access path is instrumented for optimistic validation:
//! record reads collect `(record, version)` pairs, scans collect the
//! version of the granule they examined (whole relation for full scans,
//! one hash bucket per key for index point scans), and writes stage
//! privately in the transaction context until commit installs them.

mod loader;
mod ops;
mod predicate;

pub use loader::{load_csv_dir, load_csv_file};
pub use ops::{AggSpec, RelationCtx, WindowStats};
pub use predicate::{CmpOp, Predicate};

use crate::addr::ActorAddress;
use crate::error::{EngineError, Result};
use crate::value::{ColumnType, Tuple, Value};
use parking_lot::RwLock;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

/// Schema of one relation: ordered, uniquely named, typed columns.
/// `encrypted` is metadata only; `indexed` names integer-like columns that
/// get a hash index for point predicates.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub name: String,
    pub columns: Vec<(String, ColumnType)>,
    pub encrypted: bool,
    pub indexed: Vec<String>,
}

impl Schema {
    pub fn new(name: impl Into<String>, columns: Vec<(&str, ColumnType)>) -> Result<Schema> {
        let name = name.into();
        if columns.is_empty() {
            return Err(EngineError::InvalidSchema(format!(
                "relation `{name}` has no columns"
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for (c, _) in &columns {
            if !seen.insert(*c) {
                return Err(EngineError::InvalidSchema(format!(
                    "duplicate column `{c}` in relation `{name}`"
                )));
            }
        }
        Ok(Schema {
            name,
            columns: columns
                .into_iter()
                .map(|(c, t)| (c.to_string(), t))
                .collect(),
            encrypted: false,
            indexed: Vec::new(),
        })
    }

    pub fn encrypted(mut self) -> Schema {
        self.encrypted = true;
        self
    }

    /// Declare a hash index on an int/timestamp column.
    pub fn with_index(mut self, column: &str) -> Schema {
        self.indexed.push(column.to_string());
        self
    }

    pub fn col_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|(c, _)| c == name)
    }

    pub fn col_index_or_err(&self, name: &str) -> Result<usize> {
        self.col_index(name)
            .ok_or_else(|| EngineError::UnknownColumn(name.to_string()))
    }

    pub fn typecheck(&self, tuple: &[Value]) -> Result<()> {
        if tuple.len() != self.columns.len() {
            return Err(EngineError::TypeMismatch(format!(
                "relation `{}` expects {} columns, got {}",
                self.name,
                self.columns.len(),
                tuple.len()
            )));
        }
        for (v, (c, t)) in tuple.iter().zip(&self.columns) {
            if !v.matches_type(*t) {
                return Err(EngineError::TypeMismatch(format!(
                    "column `{c}` of `{}` expects {t}, got {v:?}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    fn validate_indexes(&self) -> Result<Vec<u16>> {
        let mut out = Vec::new();
        for name in &self.indexed {
            let idx = self.col_index_or_err(name)?;
            match self.columns[idx].1 {
                ColumnType::Int | ColumnType::Timestamp => out.push(idx as u16),
                other => {
                    return Err(EngineError::InvalidSchema(format!(
                        "index on `{name}` requires an integer-like column, found {other}"
                    )))
                }
            }
        }
        Ok(out)
    }
}

/// Granule a scan examined, for validation and footprint purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Granule {
    /// The whole relation (validated against `relation_version`).
    Full,
    /// One hash bucket: (column index, key value).
    Bucket(u16, i64),
}

#[derive(Debug, Clone)]
pub(crate) struct Rec {
    pub version: u64,
    pub lock: Option<u64>,
    pub tuple: Tuple,
}

pub(crate) struct RelationInner {
    pub records: BTreeMap<u64, Rec>,
    pub relation_version: u64,
    pub struct_lock: Option<u64>,
    pub bucket_versions: HashMap<(u16, i64), u64>,
    pub indexes: HashMap<u16, HashMap<i64, BTreeSet<u64>>>,
}

impl RelationInner {
    fn index_add(&mut self, cols: &[u16], rec_id: u64, tuple: &[Value]) {
        for &c in cols {
            if let Some(key) = tuple[c as usize].index_key() {
                self.indexes
                    .entry(c)
                    .or_default()
                    .entry(key)
                    .or_default()
                    .insert(rec_id);
            }
        }
    }

    fn index_remove(&mut self, cols: &[u16], rec_id: u64, tuple: &[Value]) {
        for &c in cols {
            if let Some(key) = tuple[c as usize].index_key() {
                if let Some(m) = self.indexes.get_mut(&c) {
                    if let Some(set) = m.get_mut(&key) {
                        set.remove(&rec_id);
                        if set.is_empty() {
                            m.remove(&key);
                        }
                    }
                }
            }
        }
    }

    fn bump_buckets(&mut self, cols: &[u16], tuple: &[Value]) {
        for &c in cols {
            if let Some(key) = tuple[c as usize].index_key() {
                *self.bucket_versions.entry((c, key)).or_insert(0) += 1;
            }
        }
    }

    pub fn bucket_version(&self, col: u16, key: i64) -> u64 {
        self.bucket_versions.get(&(col, key)).copied().unwrap_or(0)
    }
}

/// A stored relation owned by exactly one actor.
pub struct Relation {
    pub(crate) id: u64,
    pub(crate) schema: Schema,
    pub(crate) owner: ActorAddress,
    pub(crate) durable_owner: bool,
    pub(crate) indexed_cols: Vec<u16>,
    next_record_id: AtomicU64,
    pub(crate) inner: RwLock<RelationInner>,
}

impl Relation {
    pub(crate) fn new(
        id: u64,
        schema: Schema,
        owner: ActorAddress,
        durable_owner: bool,
    ) -> Result<Relation> {
        let indexed_cols = schema.validate_indexes()?;
        Ok(Relation {
            id,
            schema,
            owner,
            durable_owner,
            indexed_cols,
            next_record_id: AtomicU64::new(0),
            inner: RwLock::new(RelationInner {
                records: BTreeMap::new(),
                relation_version: 0,
                struct_lock: None,
                bucket_versions: HashMap::new(),
                indexes: HashMap::new(),
            }),
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn owner(&self) -> &ActorAddress {
        &self.owner
    }

    pub(crate) fn alloc_record_id(&self) -> u64 {
        self.next_record_id.fetch_add(1, Ordering::Relaxed)
    }

    /// Keeps the id allocator ahead of replayed record ids during recovery.
    pub(crate) fn reserve_record_id(&self, id: u64) {
        let mut cur = self.next_record_id.load(Ordering::Relaxed);
        while cur <= id {
            match self.next_record_id.compare_exchange(
                cur,
                id + 1,
                Ordering::Relaxed,
                Ordering::Relaxed,
            ) {
                Ok(_) => break,
                Err(actual) => cur = actual,
            }
        }
    }

    /// Install a committed insert. Caller must hold whatever commit locks
    /// apply; replay and loading call this directly.
    pub(crate) fn install_insert(&self, inner: &mut RelationInner, rec_id: u64, tuple: Tuple, version: u64) {
        inner.bump_buckets(&self.indexed_cols, &tuple);
        inner.index_add(&self.indexed_cols, rec_id, &tuple);
        inner.relation_version += 1;
        inner.records.insert(
            rec_id,
            Rec {
                version,
                lock: None,
                tuple,
            },
        );
        self.reserve_record_id(rec_id);
    }

    pub(crate) fn install_update(&self, inner: &mut RelationInner, rec_id: u64, tuple: Tuple, version: u64) {
        // An update that moves an indexed key is structural for the two
        // buckets involved.
        let old = match inner.records.get(&rec_id) {
            Some(r) => r.tuple.clone(),
            None => {
                // Replay against a state that never saw the insert: upsert.
                self.install_insert(inner, rec_id, tuple, version);
                return;
            }
        };
        for &c in &self.indexed_cols {
            let (ko, kn) = (old[c as usize].index_key(), tuple[c as usize].index_key());
            if ko != kn {
                if let Some(k) = ko {
                    *inner.bucket_versions.entry((c, k)).or_insert(0) += 1;
                }
                if let Some(k) = kn {
                    *inner.bucket_versions.entry((c, k)).or_insert(0) += 1;
                }
            }
        }
        inner.index_remove(&self.indexed_cols, rec_id, &old);
        inner.index_add(&self.indexed_cols, rec_id, &tuple);
        let rec = inner.records.get_mut(&rec_id).expect("checked above");
        rec.tuple = tuple;
        rec.version = version;
        rec.lock = None;
    }

    pub(crate) fn install_delete(&self, inner: &mut RelationInner, rec_id: u64) {
        if let Some(rec) = inner.records.remove(&rec_id) {
            inner.bump_buckets(&self.indexed_cols, &rec.tuple);
            inner.index_remove(&self.indexed_cols, rec_id, &rec.tuple);
            inner.relation_version += 1;
        }
    }

    /// Committed state snapshot, sorted by record id: (id, version, tuple).
    pub fn snapshot(&self) -> Vec<(u64, u64, Tuple)> {
        let inner = self.inner.read();
        inner
            .records
            .iter()
            .map(|(id, r)| (*id, r.version, r.tuple.clone()))
            .collect()
    }

    pub fn relation_version(&self) -> u64 {
        self.inner.read().relation_version
    }

    pub fn len(&self) -> usize {
        self.inner.read().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A free-standing, untracked set of rows: the result shape of
/// `bulk_invoke` and of list/relation conversions.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSet {
    pub columns: Vec<(String, ColumnType)>,
    pub rows: Vec<Tuple>,
}

impl RowSet {
    pub fn new(columns: Vec<(String, ColumnType)>) -> RowSet {
        RowSet {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn col_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|(c, _)| c == name)
            .ok_or_else(|| EngineError::UnknownColumn(name.to_string()))
    }

    pub fn push(&mut self, row: Tuple) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(EngineError::TypeMismatch(format!(
                "row set expects {} columns, got {}",
                self.columns.len(),
                row.len()
            )));
        }
        for (v, (c, t)) in row.iter().zip(&self.columns) {
            if !v.matches_type(*t) {
                return Err(EngineError::TypeMismatch(format!(
                    "row set column `{c}` expects {t}, got {v:?}"
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// SUM over a column; `None` when no rows (SQL-null analogue).
    pub fn sum(&self, column: &str) -> Result<Option<f64>> {
        let i = self.col_index(column)?;
        if self.rows.is_empty() {
            return Ok(None);
        }
        Ok(Some(
            self.rows
                .iter()
                .map(|r| r[i].as_float().unwrap_or(0.0))
                .sum(),
        ))
    }
}

/// LIST analogue: a relation-shaped value from a list of tuples, preserving
/// order. Lossless with `rowset_to_list`.
pub fn list_to_rowset(values: Vec<Tuple>, columns: Vec<(String, ColumnType)>) -> Result<RowSet> {
    let mut rs = RowSet::new(columns);
    for row in values {
        rs.push(row)?;
    }
    Ok(rs)
}

/// TABLE analogue inverse: back to an ordered list of tuples.
pub fn rowset_to_list(rs: &RowSet) -> Vec<Tuple> {
    rs.rows.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addr::addr;

    fn schema() -> Schema {
        Schema::new(
            "inventory",
            vec![
                ("i_id", ColumnType::Int),
                ("i_price", ColumnType::Float),
                ("i_quantity", ColumnType::Int),
            ],
        )
        .unwrap()
        .with_index("i_id")
    }

    #[test]
    fn zero_column_schema_is_invalid() {
        let err = Schema::new("empty", vec![]).unwrap_err();
        assert!(matches!(err, EngineError::InvalidSchema(_)));
    }

    #[test]
    fn duplicate_column_is_invalid() {
        let err = Schema::new(
            "r",
            vec![("a", ColumnType::Int), ("a", ColumnType::Float)],
        )
        .unwrap_err();
        assert!(matches!(err, EngineError::InvalidSchema(_)));
    }

    #[test]
    fn typecheck_rejects_wrong_arity_and_type() {
        let s = schema();
        assert!(s.typecheck(&[Value::Int(1), Value::Float(2.0), Value::Int(3)]).is_ok());
        assert!(s.typecheck(&[Value::Int(1)]).is_err());
        assert!(s
            .typecheck(&[Value::Int(1), Value::Int(2), Value::Int(3)])
            .is_err());
    }

    #[test]
    fn install_maintains_indexes_and_versions() {
        let rel = Relation::new(1, schema(), addr("Store_Section", "100"), true).unwrap();
        {
            let mut inner = rel.inner.write();
            rel.install_insert(&mut inner, 0, vec![Value::Int(7), Value::Float(1.5), Value::Int(10)], 1);
            rel.install_insert(&mut inner, 1, vec![Value::Int(8), Value::Float(2.5), Value::Int(20)], 1);
        }
        assert_eq!(rel.relation_version(), 2);
        {
            let inner = rel.inner.read();
            assert_eq!(inner.bucket_version(0, 7), 1);
            assert_eq!(inner.indexes[&0][&7].iter().copied().collect::<Vec<_>>(), vec![0]);
        }
        {
            let mut inner = rel.inner.write();
            rel.install_update(&mut inner, 0, vec![Value::Int(7), Value::Float(9.0), Value::Int(5)], 2);
        }
        // non-key update: no structural bumps
        assert_eq!(rel.relation_version(), 2);
        assert_eq!(rel.inner.read().bucket_version(0, 7), 1);
        {
            let mut inner = rel.inner.write();
            rel.install_delete(&mut inner, 0);
        }
        assert_eq!(rel.relation_version(), 3);
        assert_eq!(rel.inner.read().bucket_version(0, 7), 2);
    }

    #[test]
    fn rowset_round_trip_preserves_order() {
        let cols = vec![("a".to_string(), ColumnType::Int)];
        let rows = vec![vec![Value::Int(3)], vec![Value::Int(1)], vec![Value::Int(2)]];
        let rs = list_to_rowset(rows.clone(), cols).unwrap();
        assert_eq!(rowset_to_list(&rs), rows);
    }
}
