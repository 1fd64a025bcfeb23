//! Transaction-context views over stored relations: scans, updates,
//! aggregates, and windowed statistics, all recording what they examined
//! into the owning root transaction.

use super::predicate::Predicate;
use super::{Granule, Relation};
use crate::error::{EngineError, Result};
use crate::txn::{NodeId, RootTxn, StageKind};
use crate::value::{ColumnType, Tuple, Value};
use std::collections::BTreeSet;
use std::sync::Arc;

/// Mean and sample standard deviation over a recency window of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStats {
    pub key: i64,
    pub mean: f64,
    pub sample_stddev: f64,
    pub window_count: usize,
}

#[derive(Debug, Clone, Copy)]
pub enum AggSpec<'a> {
    Sum(&'a str),
    Avg(&'a str),
    Count,
}

/// One relation as seen from inside a transaction node.
pub struct RelationCtx<'a> {
    pub(crate) rel: &'a Arc<Relation>,
    pub(crate) root: &'a RootTxn,
    pub(crate) node: NodeId,
}

struct VisibleRow {
    rec_id: u64,
    tuple: Tuple,
}

impl<'a> RelationCtx<'a> {
    pub fn new(rel: &'a Arc<Relation>, root: &'a RootTxn, node: NodeId) -> RelationCtx<'a> {
        RelationCtx { rel, root, node }
    }

    pub fn schema(&self) -> &super::Schema {
        &self.rel.schema
    }

    /// Stage an insert; the record is visible to this context immediately
    /// and installs at commit.
    pub fn insert(&self, tuple: Tuple) -> Result<u64> {
        self.root.ensure_active().map_err(|_| EngineError::TxnNotActive)?;
        self.rel.schema.typecheck(&tuple)?;
        let rec_id = self.rel.alloc_record_id();
        self.root.stage_insert(self.rel, self.node, rec_id, tuple);
        Ok(rec_id)
    }

    /// Matching tuples under this context's view (committed state plus own
    /// staged writes), optionally projected, ordered by record id.
    pub fn scan(&self, pred: &Predicate, projection: Option<&[&str]>) -> Result<Vec<Tuple>> {
        let proj = self.resolve_projection(projection)?;
        let rows = self.visible_rows(pred)?;
        Ok(rows
            .into_iter()
            .map(|r| project(r.tuple, &proj))
            .collect())
    }

    /// Stage updates for every matching record; returns the match count.
    pub fn update(&self, pred: &Predicate, assignments: &[(&str, Value)]) -> Result<usize> {
        self.root.ensure_active().map_err(|_| EngineError::TxnNotActive)?;
        let schema = &self.rel.schema;
        let mut resolved = Vec::with_capacity(assignments.len());
        for (col, v) in assignments {
            let idx = schema.col_index_or_err(col)?;
            if !v.matches_type(schema.columns[idx].1) {
                return Err(EngineError::TypeMismatch(format!(
                    "assignment to `{col}` expects {}, got {v:?}",
                    schema.columns[idx].1
                )));
            }
            resolved.push((idx, v.clone()));
        }
        let rows = self.visible_rows(pred)?;
        let count = rows.len();
        for row in rows {
            let mut tuple = row.tuple;
            for (idx, v) in &resolved {
                tuple[*idx] = v.clone();
            }
            self.root.stage_update(self.rel, self.node, row.rec_id, tuple);
        }
        Ok(count)
    }

    /// Stage deletes for every matching record; returns the match count.
    pub fn delete(&self, pred: &Predicate) -> Result<usize> {
        self.root.ensure_active().map_err(|_| EngineError::TxnNotActive)?;
        let rows = self.visible_rows(pred)?;
        let count = rows.len();
        for row in rows {
            self.root.stage_delete(self.rel, self.node, row.rec_id);
        }
        Ok(count)
    }

    /// SUM/AVG/COUNT over matching rows. SUM and AVG over zero rows yield
    /// the absent marker `Value::Unit`; COUNT yields 0. SUM over an int
    /// column stays integral.
    pub fn aggregate(&self, pred: &Predicate, specs: &[AggSpec<'_>]) -> Result<Tuple> {
        let schema = &self.rel.schema;
        let mut cols = Vec::with_capacity(specs.len());
        for spec in specs {
            match spec {
                AggSpec::Sum(c) | AggSpec::Avg(c) => {
                    let idx = schema.col_index_or_err(c)?;
                    match schema.columns[idx].1 {
                        ColumnType::Int | ColumnType::Float | ColumnType::Timestamp => {
                            cols.push(Some(idx))
                        }
                        ColumnType::Str => {
                            return Err(EngineError::TypeMismatch(format!(
                                "aggregate over non-numeric column `{c}`"
                            )))
                        }
                    }
                }
                AggSpec::Count => cols.push(None),
            }
        }
        let rows = self.visible_rows(pred)?;
        let n = rows.len();
        let mut out = Vec::with_capacity(specs.len());
        for (spec, col) in specs.iter().zip(cols) {
            match spec {
                AggSpec::Count => out.push(Value::Int(n as i64)),
                AggSpec::Sum(_) if n == 0 => out.push(Value::Unit),
                AggSpec::Avg(_) if n == 0 => out.push(Value::Unit),
                AggSpec::Sum(_) => {
                    let idx = col.unwrap();
                    if schema.columns[idx].1 == ColumnType::Float {
                        out.push(Value::Float(
                            rows.iter().map(|r| r.tuple[idx].as_float().unwrap_or(0.0)).sum(),
                        ));
                    } else {
                        out.push(Value::Int(
                            rows.iter().map(|r| r.tuple[idx].as_int().unwrap_or(0)).sum(),
                        ));
                    }
                }
                AggSpec::Avg(_) => {
                    let idx = col.unwrap();
                    let sum: f64 = rows.iter().map(|r| r.tuple[idx].as_float().unwrap_or(0.0)).sum();
                    out.push(Value::Float(sum / n as f64));
                }
            }
        }
        Ok(out)
    }

    /// Per requested group key, mean and sample standard deviation of
    /// `value_col` over the at most `k` rows with the largest `order_col`
    /// values (ties broken by larger record id = more recent insert).
    /// Own staged writes are included; absent groups report a zero window.
    pub fn window_stats(
        &self,
        partition_col: &str,
        order_col: &str,
        value_col: &str,
        k: usize,
        keys: &[i64],
    ) -> Result<Vec<WindowStats>> {
        if k == 0 {
            return Err(EngineError::Config("window size k must be >= 1".into()));
        }
        let schema = &self.rel.schema;
        let p_idx = schema.col_index_or_err(partition_col)?;
        let o_idx = schema.col_index_or_err(order_col)?;
        let v_idx = schema.col_index_or_err(value_col)?;
        let p_type = schema.columns[p_idx].1;
        match schema.columns[o_idx].1 {
            ColumnType::Int | ColumnType::Timestamp => {}
            other => {
                return Err(EngineError::TypeMismatch(format!(
                    "window order column `{order_col}` must be int or timestamp, found {other}"
                )))
            }
        }
        let mut out = Vec::with_capacity(keys.len());
        for &key in keys {
            let key_value = match p_type {
                ColumnType::Int => Value::Int(key),
                ColumnType::Timestamp => Value::Timestamp(key),
                other => {
                    return Err(EngineError::TypeMismatch(format!(
                        "window partition column `{partition_col}` must be int-like, found {other}"
                    )))
                }
            };
            let mut rows = self.visible_rows(&Predicate::eq(partition_col, key_value))?;
            rows.sort_by(|a, b| {
                let oa = a.tuple[o_idx].index_key().unwrap_or(i64::MIN);
                let ob = b.tuple[o_idx].index_key().unwrap_or(i64::MIN);
                ob.cmp(&oa).then(b.rec_id.cmp(&a.rec_id))
            });
            rows.truncate(k);
            let n = rows.len();
            let (mean, stddev) = if n == 0 {
                (0.0, 0.0)
            } else {
                let xs: Vec<f64> = rows
                    .iter()
                    .map(|r| r.tuple[v_idx].as_float().unwrap_or(0.0))
                    .collect();
                let mean = xs.iter().sum::<f64>() / n as f64;
                let stddev = if n <= 1 {
                    0.0
                } else {
                    let var =
                        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
                    var.sqrt()
                };
                (mean, stddev)
            };
            out.push(WindowStats {
                key,
                mean,
                sample_stddev: stddev,
                window_count: n,
            });
        }
        Ok(out)
    }

    fn resolve_projection(&self, projection: Option<&[&str]>) -> Result<Option<Vec<usize>>> {
        match projection {
            None => Ok(None),
            Some(cols) => {
                let mut idxs = Vec::with_capacity(cols.len());
                for c in cols {
                    idxs.push(self.rel.schema.col_index_or_err(c)?);
                }
                Ok(Some(idxs))
            }
        }
    }

    /// Core read path: committed candidates for the predicate's plan merged
    /// with this transaction's staged rows, with read/scan tracking.
    fn visible_rows(&self, pred: &Predicate) -> Result<Vec<VisibleRow>> {
        let schema = &self.rel.schema;
        let compiled = pred.compile(schema)?;
        let overlay = self.root.overlay_for(self.rel.id());
        let mut reads: Vec<(u64, u64)> = Vec::new();
        let mut scans: Vec<(Granule, u64)> = Vec::new();
        let mut out: Vec<VisibleRow> = Vec::new();

        {
            let inner = self.rel.inner.read();
            let candidates: BTreeSet<u64> = match pred.index_plan(schema, &self.rel.indexed_cols) {
                Some((col, keys)) => {
                    let mut set = BTreeSet::new();
                    for key in keys {
                        scans.push((Granule::Bucket(col, key), inner.bucket_version(col, key)));
                        if let Some(ids) = inner.indexes.get(&col).and_then(|m| m.get(&key)) {
                            set.extend(ids.iter().copied());
                        }
                    }
                    set
                }
                None => {
                    scans.push((Granule::Full, inner.relation_version));
                    inner.records.keys().copied().collect()
                }
            };
            for rec_id in &candidates {
                let rec = match inner.records.get(rec_id) {
                    Some(r) => r,
                    None => continue,
                };
                reads.push((*rec_id, rec.version));
                let visible = match overlay.get(rec_id) {
                    Some((StageKind::Delete, _)) => continue,
                    Some((_, Some(t))) => t.clone(),
                    _ => rec.tuple.clone(),
                };
                if compiled.eval(&visible) {
                    out.push(VisibleRow {
                        rec_id: *rec_id,
                        tuple: visible,
                    });
                }
            }
            // Staged rows the candidate set missed: our own inserts, and
            // updates whose new image falls into a scanned bucket the
            // committed image was not in.
            for (rec_id, (kind, tuple)) in &overlay {
                if candidates.contains(rec_id) {
                    continue;
                }
                match kind {
                    StageKind::Insert => {
                        if let Some(t) = tuple {
                            if compiled.eval(t) {
                                out.push(VisibleRow {
                                    rec_id: *rec_id,
                                    tuple: t.clone(),
                                });
                            }
                        }
                    }
                    StageKind::Update => {
                        if let (Some(t), Some(rec)) = (tuple, inner.records.get(rec_id)) {
                            reads.push((*rec_id, rec.version));
                            if compiled.eval(t) {
                                out.push(VisibleRow {
                                    rec_id: *rec_id,
                                    tuple: t.clone(),
                                });
                            }
                        }
                    }
                    StageKind::Delete => {}
                }
            }
        }

        out.sort_by_key(|r| r.rec_id);
        self.root.record_reads(self.rel, self.node, reads, scans);
        Ok(out)
    }
}

fn project(tuple: Tuple, proj: &Option<Vec<usize>>) -> Tuple {
    match proj {
        None => tuple,
        Some(idxs) => idxs.iter().map(|&i| tuple[i].clone()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addr::addr;
    use crate::relstore::Schema;
    use crate::txn::{RootTxn, TxnOptions, ROOT_NODE};

    fn history_rel() -> Arc<Relation> {
        let schema = Schema::new(
            "purchase_history",
            vec![
                ("i_id", ColumnType::Int),
                ("time", ColumnType::Timestamp),
                ("i_quantity", ColumnType::Int),
            ],
        )
        .unwrap()
        .with_index("i_id");
        Arc::new(Relation::new(1, schema, addr("Store_Section", "100"), true).unwrap())
    }

    fn ctx_on<'a>(rel: &'a Arc<Relation>, root: &'a Arc<RootTxn>) -> RelationCtx<'a> {
        RelationCtx::new(rel, root, ROOT_NODE)
    }

    fn row(i: i64, t: i64, q: i64) -> Tuple {
        vec![Value::Int(i), Value::Timestamp(t), Value::Int(q)]
    }

    #[test]
    fn read_your_writes_within_context() {
        let rel = history_rel();
        let root = RootTxn::new(1, TxnOptions::default());
        let ctx = ctx_on(&rel, &root);
        ctx.insert(row(7, 1, 10)).unwrap();
        let rows = ctx.scan(&Predicate::eq("i_id", Value::Int(7)), None).unwrap();
        assert_eq!(rows, vec![row(7, 1, 10)]);
    }

    #[test]
    fn wrong_arity_is_type_mismatch() {
        let rel = history_rel();
        let root = RootTxn::new(1, TxnOptions::default());
        let ctx = ctx_on(&rel, &root);
        let err = ctx.insert(vec![Value::Int(1)]).unwrap_err();
        assert!(matches!(err, EngineError::TypeMismatch(_)));
    }

    #[test]
    fn scan_empty_relation_is_empty() {
        let rel = history_rel();
        let root = RootTxn::new(1, TxnOptions::default());
        let ctx = ctx_on(&rel, &root);
        assert!(ctx.scan(&Predicate::True, None).unwrap().is_empty());
    }

    #[test]
    fn point_scan_matches_linear_filter_oracle() {
        let rel = history_rel();
        let root = RootTxn::new(1, TxnOptions::default());
        let ctx = ctx_on(&rel, &root);
        let mut all = Vec::new();
        for i in 0..40 {
            let r = row(i % 5, i, i % 7);
            ctx.insert(r.clone()).unwrap();
            all.push(r);
        }
        let wanted = [Value::Int(1), Value::Int(3)];
        let got = ctx
            .scan(&Predicate::in_list("i_id", wanted.to_vec()), None)
            .unwrap();
        let expected: Vec<Tuple> = all
            .into_iter()
            .filter(|t| wanted.contains(&t[0]))
            .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn update_counts_and_missing_predicate() {
        let rel = history_rel();
        let root = RootTxn::new(1, TxnOptions::default());
        let ctx = ctx_on(&rel, &root);
        ctx.insert(row(1, 1, 5)).unwrap();
        let n = ctx
            .update(
                &Predicate::eq("i_id", Value::Int(1)),
                &[("i_quantity", Value::Int(6))],
            )
            .unwrap();
        assert_eq!(n, 1);
        let n = ctx
            .update(
                &Predicate::eq("i_id", Value::Int(99)),
                &[("i_quantity", Value::Int(0))],
            )
            .unwrap();
        assert_eq!(n, 0);
        let rows = ctx.scan(&Predicate::eq("i_id", Value::Int(1)), None).unwrap();
        assert_eq!(rows[0][2], Value::Int(6));
    }

    #[test]
    fn update_assignment_type_checked() {
        let rel = history_rel();
        let root = RootTxn::new(1, TxnOptions::default());
        let ctx = ctx_on(&rel, &root);
        let err = ctx
            .update(&Predicate::True, &[("i_quantity", Value::Float(1.0))])
            .unwrap_err();
        assert!(matches!(err, EngineError::TypeMismatch(_)));
        let err = ctx
            .update(&Predicate::True, &[("nope", Value::Int(1))])
            .unwrap_err();
        assert!(matches!(err, EngineError::UnknownColumn(_)));
    }

    #[test]
    fn aggregate_examples() {
        let rel = Arc::new(
            Relation::new(
                2,
                Schema::new("amounts", vec![("amount", ColumnType::Float)]).unwrap(),
                addr("Cart", "42"),
                false,
            )
            .unwrap(),
        );
        let root = RootTxn::new(1, TxnOptions::default());
        let ctx = RelationCtx::new(&rel, &root, ROOT_NODE);
        // COUNT over empty -> 0; SUM over empty -> absent marker
        let t = ctx
            .aggregate(&Predicate::True, &[AggSpec::Count, AggSpec::Sum("amount")])
            .unwrap();
        assert_eq!(t, vec![Value::Int(0), Value::Unit]);
        ctx.insert(vec![Value::Float(21.0)]).unwrap();
        ctx.insert(vec![Value::Float(14.0)]).unwrap();
        let t = ctx
            .aggregate(&Predicate::True, &[AggSpec::Sum("amount")])
            .unwrap();
        assert_eq!(t, vec![Value::Float(35.0)]);
        // AVG over one row is that row's value
        let one = ctx
            .aggregate(
                &Predicate::Cmp("amount".into(), super::super::CmpOp::Gt, Value::Float(20.0)),
                &[AggSpec::Avg("amount")],
            )
            .unwrap();
        assert_eq!(one, vec![Value::Float(21.0)]);
    }

    #[test]
    fn window_identical_values_have_zero_stddev() {
        let rel = history_rel();
        let root = RootTxn::new(1, TxnOptions::default());
        let ctx = ctx_on(&rel, &root);
        for t in 1..=4 {
            ctx.insert(row(7, t, 10)).unwrap();
        }
        let stats = ctx
            .window_stats("i_id", "time", "i_quantity", 3, &[7])
            .unwrap();
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].window_count, 3);
        assert_eq!(stats[0].mean, 10.0);
        assert_eq!(stats[0].sample_stddev, 0.0);
    }

    #[test]
    fn window_singleton_stddev_is_zero() {
        let rel = history_rel();
        let root = RootTxn::new(1, TxnOptions::default());
        let ctx = ctx_on(&rel, &root);
        ctx.insert(row(3, 1, 8)).unwrap();
        let stats = ctx
            .window_stats("i_id", "time", "i_quantity", 150, &[3])
            .unwrap();
        assert_eq!(stats[0].window_count, 1);
        assert_eq!(stats[0].mean, 8.0);
        assert_eq!(stats[0].sample_stddev, 0.0);
    }

    #[test]
    fn window_takes_most_recent_k() {
        let rel = history_rel();
        let root = RootTxn::new(1, TxnOptions::default());
        let ctx = ctx_on(&rel, &root);
        // newest-first quantities are [12, 10, 14]
        ctx.insert(row(1, 1, 14)).unwrap();
        ctx.insert(row(1, 2, 10)).unwrap();
        ctx.insert(row(1, 3, 12)).unwrap();
        let stats = ctx
            .window_stats("i_id", "time", "i_quantity", 2, &[1])
            .unwrap();
        assert_eq!(stats[0].window_count, 2);
        assert!((stats[0].mean - 11.0).abs() < 1e-12);
        assert!((stats[0].sample_stddev - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn window_zero_rows_group_reports_empty() {
        let rel = history_rel();
        let root = RootTxn::new(1, TxnOptions::default());
        let ctx = ctx_on(&rel, &root);
        let stats = ctx
            .window_stats("i_id", "time", "i_quantity", 5, &[42])
            .unwrap();
        assert_eq!(stats[0].window_count, 0);
        assert_eq!(stats[0].mean, 0.0);
    }

    #[test]
    fn window_ties_break_by_record_id() {
        let rel = history_rel();
        let root = RootTxn::new(1, TxnOptions::default());
        let ctx = ctx_on(&rel, &root);
        // same timestamp; later insert (larger record id) is more recent
        ctx.insert(row(1, 5, 100)).unwrap();
        ctx.insert(row(1, 5, 200)).unwrap();
        let stats = ctx
            .window_stats("i_id", "time", "i_quantity", 1, &[1])
            .unwrap();
        assert_eq!(stats[0].mean, 200.0);
    }
}
