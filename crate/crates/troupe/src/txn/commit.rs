//! Commit protocol: optimistic validation with commit-time write locks.
//!
//! Phase 1 acquires write locks on the write set in global (relation id,
//! record id) order, so concurrent committers cannot deadlock. Phase 2
//! validates the read set (record versions unchanged, not locked by
//! others) and the scan set (relation/bucket versions unchanged). Phase 3
//! runs racy-sibling detection over the invocation graph. Only then is a
//! tid assigned, the redo log appended (durable actors only), and writes
//! installed. Failure anywhere releases locks and discards staged writes;
//! nothing ever installs partially.

use super::racy;
use super::{RelWrites, RootTxn, StageKind, TxnStatus};
use crate::durability::{LogOp, WriteImage};
use crate::engine::Engine;
use crate::error::{AbortReason, CommitResult};
use crate::relstore::{Granule, Relation};
use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

fn backoff(spins: &mut u32) {
    *spins += 1;
    if *spins < 100 {
        std::thread::yield_now();
    } else {
        std::thread::sleep(std::time::Duration::from_micros(50));
    }
}

#[derive(Clone)]
enum LockKey {
    Record(Arc<Relation>, u64),
    Structural(Arc<Relation>),
}

impl LockKey {
    fn sort_key(&self) -> (u64, u8, u64) {
        match self {
            LockKey::Record(rel, rec) => (rel.id(), 0, *rec),
            LockKey::Structural(rel) => (rel.id(), 1, 0),
        }
    }
}

pub(crate) fn commit_root(
    engine: &Arc<Engine>,
    root: &Arc<RootTxn>,
    spec_done: Option<u64>,
) -> CommitResult {
    // Every sub-invocation future must be resolved before validation.
    root.wait_until(|| root.graph.lock().unresolved == 0);

    match root.status() {
        TxnStatus::Active => {}
        TxnStatus::Committed(tid) => return CommitResult::Committed(tid),
        TxnStatus::Aborted(r) => return CommitResult::Aborted(r),
    }

    let poisoned = root.sets.lock().poison.as_ref().map(|(r, _)| *r);
    if let Some(reason) = poisoned {
        return finish_abort(engine, root, reason, &[]);
    }

    let (reads, scans, writes) = {
        let mut sets = root.sets.lock();
        (
            std::mem::take(&mut sets.reads),
            std::mem::take(&mut sets.scans),
            std::mem::take(&mut sets.writes),
        )
    };
    let ctx = root.ctx_id();

    // ---- phase 1: write locks in global order ----
    let mut plan: Vec<LockKey> = Vec::new();
    for rw in writes.values() {
        let mut structural = false;
        for (rec, row) in &rw.rows {
            match row.kind {
                StageKind::Update => plan.push(LockKey::Record(rw.rel.clone(), *rec)),
                StageKind::Delete => {
                    plan.push(LockKey::Record(rw.rel.clone(), *rec));
                    structural = true;
                }
                StageKind::Insert => structural = true,
            }
        }
        if structural {
            plan.push(LockKey::Structural(rw.rel.clone()));
        }
    }
    plan.sort_by_key(|k| k.sort_key());
    plan.dedup_by_key(|k| k.sort_key());

    let mut held: Vec<LockKey> = Vec::with_capacity(plan.len());
    let mut write_target_missing = false;
    for key in plan {
        let mut spins = 0u32;
        loop {
            let acquired = match &key {
                LockKey::Record(rel, rec) => {
                    let mut inner = rel.inner.write();
                    match inner.records.get_mut(rec) {
                        // Deleted by a committed transaction since we read
                        // it; validation below will abort.
                        None => {
                            write_target_missing = true;
                            true
                        }
                        Some(r) => {
                            if r.lock.is_none() {
                                r.lock = Some(ctx);
                                held.push(key.clone());
                                true
                            } else {
                                r.lock == Some(ctx)
                            }
                        }
                    }
                }
                LockKey::Structural(rel) => {
                    let mut inner = rel.inner.write();
                    if inner.struct_lock.is_none() {
                        inner.struct_lock = Some(ctx);
                        held.push(key.clone());
                        true
                    } else {
                        inner.struct_lock == Some(ctx)
                    }
                }
            };
            if acquired {
                break;
            }
            backoff(&mut spins);
        }
    }
    if write_target_missing {
        return finish_abort(engine, root, AbortReason::ReadValidation, &held);
    }

    // ---- phase 2: read and scan validation ----
    let mut read_groups: BTreeMap<u64, (Arc<Relation>, HashSet<(u64, u64)>)> = BTreeMap::new();
    for r in &reads {
        read_groups
            .entry(r.rel.id())
            .or_insert_with(|| (r.rel.clone(), HashSet::new()))
            .1
            .insert((r.rec, r.version));
    }
    for (rel, entries) in read_groups.values() {
        let inner = rel.inner.read();
        for (rec, version) in entries {
            match inner.records.get(rec) {
                None => return finish_abort(engine, root, AbortReason::ReadValidation, &held),
                Some(r) => {
                    if r.version != *version || (r.lock.is_some() && r.lock != Some(ctx)) {
                        return finish_abort(engine, root, AbortReason::ReadValidation, &held);
                    }
                }
            }
        }
    }
    let mut scan_groups: BTreeMap<u64, (Arc<Relation>, HashSet<(Granule, u64)>)> = BTreeMap::new();
    for s in &scans {
        scan_groups
            .entry(s.rel.id())
            .or_insert_with(|| (s.rel.clone(), HashSet::new()))
            .1
            .insert((s.granule, s.version));
    }
    for (rel, entries) in scan_groups.values() {
        let inner = rel.inner.read();
        for (granule, version) in entries {
            if inner.struct_lock.is_some() && inner.struct_lock != Some(ctx) {
                return finish_abort(engine, root, AbortReason::ScanValidation, &held);
            }
            let current = match granule {
                Granule::Full => inner.relation_version,
                Granule::Bucket(col, key) => inner.bucket_version(*col, *key),
            };
            if current != *version {
                return finish_abort(engine, root, AbortReason::ScanValidation, &held);
            }
        }
    }

    // ---- phase 3: racy siblings ----
    if racy::detect(&root.graph.lock()).is_some() {
        return finish_abort(engine, root, AbortReason::RacySiblings, &held);
    }

    let tid = engine.tid.next();

    // ---- durability (before install so an IO failure aborts cleanly) ----
    if let Some(wal) = &engine.wal {
        let images = build_images(&writes);
        let durable_specs: Vec<_> = root
            .detached
            .lock()
            .iter()
            .filter(|s| {
                s.delivery == crate::txn::Delivery::ExactlyOnce && s.trigger.fires_on(true)
            })
            .cloned()
            .collect();
        if !images.is_empty() || !durable_specs.is_empty() || spec_done.is_some() {
            if wal
                .append_commit(tid, &images, &durable_specs, spec_done)
                .is_err()
            {
                return finish_abort(engine, root, AbortReason::ApplicationError, &held);
            }
        }
    }

    // ---- install ----
    for rw in writes.values() {
        let mut inner = rw.rel.inner.write();
        for (rec, row) in &rw.rows {
            match row.kind {
                StageKind::Insert => {
                    rw.rel.install_insert(
                        &mut inner,
                        *rec,
                        row.tuple.clone().unwrap_or_default(),
                        tid,
                    );
                }
                StageKind::Update => {
                    rw.rel.install_update(
                        &mut inner,
                        *rec,
                        row.tuple.clone().unwrap_or_default(),
                        tid,
                    );
                }
                StageKind::Delete => {
                    rw.rel.install_delete(&mut inner, *rec);
                }
            }
        }
        if inner.struct_lock == Some(ctx) {
            inner.struct_lock = None;
        }
    }
    release_locks(&held, ctx);

    *root.status.lock() = TxnStatus::Committed(tid);
    if let Some(target) = root.root_target.get() {
        engine.stats.record_commit(target);
    }
    schedule_detached(engine, root, true);
    root.ring_bell();
    CommitResult::Committed(tid)
}

/// Abort an active transaction outside the commit path (client abort or
/// poisoned context). Never holds locks.
pub(crate) fn abort_root(engine: &Arc<Engine>, root: &Arc<RootTxn>, fallback: AbortReason) {
    if root.status() != TxnStatus::Active {
        return;
    }
    let reason = root
        .sets
        .lock()
        .poison
        .as_ref()
        .map(|(r, _)| *r)
        .unwrap_or(fallback);
    let _ = finish_abort(engine, root, reason, &[]);
}

fn finish_abort(
    engine: &Arc<Engine>,
    root: &Arc<RootTxn>,
    reason: AbortReason,
    held: &[LockKey],
) -> CommitResult {
    release_locks(held, root.ctx_id());
    {
        let mut sets = root.sets.lock();
        sets.reads.clear();
        sets.scans.clear();
        sets.writes.clear();
    }
    *root.status.lock() = TxnStatus::Aborted(reason);
    if let Some(target) = root.root_target.get() {
        engine.stats.record_abort(target, reason);
    }
    schedule_detached(engine, root, false);
    root.ring_bell();
    CommitResult::Aborted(reason)
}

fn release_locks(held: &[LockKey], ctx: u64) {
    for key in held {
        match key {
            LockKey::Record(rel, rec) => {
                let mut inner = rel.inner.write();
                if let Some(r) = inner.records.get_mut(rec) {
                    if r.lock == Some(ctx) {
                        r.lock = None;
                    }
                }
            }
            LockKey::Structural(rel) => {
                let mut inner = rel.inner.write();
                if inner.struct_lock == Some(ctx) {
                    inner.struct_lock = None;
                }
            }
        }
    }
}

/// Post-images of this transaction's writes on durable actors, in global
/// (relation id, record id) order. Nondurable actors are omitted entirely.
fn build_images(writes: &BTreeMap<u64, RelWrites>) -> Vec<WriteImage> {
    let mut images = Vec::new();
    for rw in writes.values() {
        if !rw.rel.durable_owner {
            continue;
        }
        for (rec, row) in &rw.rows {
            images.push(WriteImage {
                actor: rw.rel.owner().clone(),
                relation: rw.rel.schema().name.clone(),
                op: match row.kind {
                    StageKind::Insert => LogOp::Insert,
                    StageKind::Update => LogOp::Update,
                    StageKind::Delete => LogOp::Delete,
                },
                rec_id: *rec,
                tuple: row.tuple.clone(),
            });
        }
    }
    images
}

fn schedule_detached(engine: &Arc<Engine>, root: &Arc<RootTxn>, committed: bool) {
    let specs: Vec<_> = root.detached.lock().drain(..).collect();
    for spec in specs {
        if spec.trigger.fires_on(committed) {
            engine.detached.schedule(spec);
        }
    }
}
