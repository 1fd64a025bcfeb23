//! Serializable cross-actor transactions. A root context owns the read,
//! scan, and write sets; nested invocations share them and the root's
//! commit fate. Each sub-invocation is a node in the invocation graph,
//! ordered by spawn and future-synchronization edges; the graph drives
//! racy-sibling detection at commit.

pub(crate) mod commit;
pub(crate) mod detached;
pub(crate) mod racy;

pub use detached::{Delivery, DetachTrigger, DetachedSpec};

use crate::error::{AbortReason, EngineError, Result};
use crate::relstore::{Granule, Relation};
use crate::security::Frame;
use crate::value::{Tuple, Value};
use parking_lot::{Condvar, Mutex};
use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, OnceLock};

pub type NodeId = u32;

/// The client stream of a root transaction is node 0.
pub const ROOT_NODE: NodeId = 0;

/// Isolation levels an application may request. Only `Serializable` is
/// implemented; requesting anything else fails at `begin_root`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsolationLevel {
    Serializable,
    SnapshotIsolation,
    ReadCommitted,
}

#[derive(Debug, Clone, Copy)]
pub struct TxnOptions {
    pub isolation: IsolationLevel,
}

impl Default for TxnOptions {
    fn default() -> Self {
        TxnOptions {
            isolation: IsolationLevel::Serializable,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxnStatus {
    Active,
    Committed(u64),
    Aborted(AbortReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StageKind {
    Insert,
    Update,
    Delete,
}

pub(crate) struct StagedRow {
    pub kind: StageKind,
    /// Post-image; `None` for deletes.
    pub tuple: Option<Tuple>,
}

pub(crate) struct RelWrites {
    pub rel: Arc<Relation>,
    pub rows: BTreeMap<u64, StagedRow>,
}

pub(crate) struct ReadEntry {
    pub rel: Arc<Relation>,
    pub rec: u64,
    pub version: u64,
}

pub(crate) struct ScanEntry {
    pub rel: Arc<Relation>,
    pub granule: Granule,
    pub version: u64,
}

#[derive(Default)]
pub(crate) struct TxnSets {
    pub reads: Vec<ReadEntry>,
    pub scans: Vec<ScanEntry>,
    pub writes: BTreeMap<u64, RelWrites>,
    /// First failure seen anywhere in the invocation tree; forces abort.
    pub poison: Option<(AbortReason, EngineError)>,
}

/// Per-node access footprint at the granularity the racy-sibling rule
/// uses: individual records, plus relation-level scan/structural marks.
#[derive(Default)]
pub(crate) struct Footprint {
    pub rec_reads: HashSet<(u64, u64)>,
    pub rec_writes: HashSet<(u64, u64)>,
    pub scan_rels: HashSet<u64>,
    pub struct_rels: HashSet<u64>,
}

impl Footprint {
    pub fn conflicts_with(&self, other: &Footprint) -> Option<String> {
        for w in &self.rec_writes {
            if other.rec_writes.contains(w) || other.rec_reads.contains(w) {
                return Some(format!("record (rel {}, rec {})", w.0, w.1));
            }
        }
        for w in &other.rec_writes {
            if self.rec_reads.contains(w) {
                return Some(format!("record (rel {}, rec {})", w.0, w.1));
            }
        }
        for r in &self.struct_rels {
            if other.scan_rels.contains(r) {
                return Some(format!("write/scan overlap on rel {r}"));
            }
        }
        for r in &other.struct_rels {
            if self.scan_rels.contains(r) {
                return Some(format!("write/scan overlap on rel {r}"));
            }
        }
        None
    }
}

pub(crate) enum GEvent {
    Spawn(NodeId),
    Sync(NodeId),
}

pub(crate) struct Node {
    pub parent: Option<NodeId>,
    pub events: Vec<GEvent>,
    pub children: Vec<NodeId>,
    pub footprint: Footprint,
    pub frame: Frame,
    pub resolved: bool,
}

pub(crate) struct Graph {
    pub nodes: Vec<Node>,
    pub unresolved: usize,
}

impl Graph {
    fn new() -> Graph {
        Graph {
            nodes: vec![Node {
                parent: None,
                events: Vec::new(),
                children: Vec::new(),
                footprint: Footprint::default(),
                frame: Frame::External,
                resolved: true,
            }],
            unresolved: 0,
        }
    }

    pub fn add_node(&mut self, parent: NodeId, frame: Frame) -> NodeId {
        let id = self.nodes.len() as NodeId;
        self.nodes.push(Node {
            parent: Some(parent),
            events: Vec::new(),
            children: Vec::new(),
            footprint: Footprint::default(),
            frame,
            resolved: false,
        });
        self.nodes[parent as usize].events.push(GEvent::Spawn(id));
        self.nodes[parent as usize].children.push(id);
        self.unresolved += 1;
        id
    }

    pub fn record_sync(&mut self, waiter: NodeId, target: NodeId) {
        self.nodes[waiter as usize].events.push(GEvent::Sync(target));
    }

    pub fn mark_resolved(&mut self, node: NodeId) {
        let n = &mut self.nodes[node as usize];
        if !n.resolved {
            n.resolved = true;
            self.unresolved -= 1;
        }
    }

    pub fn children_resolved(&self, node: NodeId) -> bool {
        self.nodes[node as usize]
            .children
            .iter()
            .all(|&c| self.nodes[c as usize].resolved)
    }

    pub fn is_ancestor(&self, candidate: NodeId, of: NodeId) -> bool {
        let mut cur = self.nodes[of as usize].parent;
        while let Some(p) = cur {
            if p == candidate {
                return true;
            }
            cur = self.nodes[p as usize].parent;
        }
        false
    }
}

/// Root transaction context. Nested invocations hold the same `Arc` and a
/// node id; they share the root's sets and commit fate.
pub struct RootTxn {
    pub(crate) ctx_id: u64,
    pub(crate) options: TxnOptions,
    pub(crate) status: Mutex<TxnStatus>,
    pub(crate) sets: Mutex<TxnSets>,
    pub(crate) graph: Mutex<Graph>,
    pub(crate) detached: Mutex<Vec<DetachedSpec>>,
    /// Target of the first root invocation; commit/abort stats attribute
    /// to it.
    pub(crate) root_target: OnceLock<crate::addr::ActorAddress>,
    /// Completion bell: rung on every future resolution so getters,
    /// barriers, and commit can re-check their predicates.
    bell: Condvar,
    bell_seq: Mutex<u64>,
}

impl RootTxn {
    pub(crate) fn new(ctx_id: u64, options: TxnOptions) -> Arc<RootTxn> {
        Arc::new(RootTxn {
            ctx_id,
            options,
            status: Mutex::new(TxnStatus::Active),
            sets: Mutex::new(TxnSets::default()),
            graph: Mutex::new(Graph::new()),
            detached: Mutex::new(Vec::new()),
            root_target: OnceLock::new(),
            bell: Condvar::new(),
            bell_seq: Mutex::new(0),
        })
    }

    pub fn ctx_id(&self) -> u64 {
        self.ctx_id
    }

    pub fn options(&self) -> TxnOptions {
        self.options
    }

    pub fn status(&self) -> TxnStatus {
        *self.status.lock()
    }

    pub fn is_active(&self) -> bool {
        self.status() == TxnStatus::Active
    }

    pub(crate) fn ensure_active(&self) -> Result<()> {
        match self.status() {
            TxnStatus::Active => Ok(()),
            _ => Err(EngineError::ParentNotActive),
        }
    }

    pub(crate) fn poison(&self, err: &EngineError) {
        let mut sets = self.sets.lock();
        if sets.poison.is_none() {
            sets.poison = Some((err.abort_class(), err.clone()));
        }
    }

    pub(crate) fn ring_bell(&self) {
        let mut seq = self.bell_seq.lock();
        *seq += 1;
        self.bell.notify_all();
    }

    /// Block until `pred` holds; re-checked on every bell ring. The
    /// predicate may take other locks on the context.
    pub(crate) fn wait_until(&self, mut pred: impl FnMut() -> bool) {
        let mut seq = self.bell_seq.lock();
        loop {
            if pred() {
                return;
            }
            self.bell.wait(&mut seq);
        }
    }

    // ---- staging (called by relstore ops) ----

    pub(crate) fn stage_insert(&self, rel: &Arc<Relation>, node: NodeId, rec_id: u64, tuple: Tuple) {
        let mut sets = self.sets.lock();
        let rw = sets.writes.entry(rel.id()).or_insert_with(|| RelWrites {
            rel: rel.clone(),
            rows: BTreeMap::new(),
        });
        rw.rows.insert(
            rec_id,
            StagedRow {
                kind: StageKind::Insert,
                tuple: Some(tuple),
            },
        );
        drop(sets);
        let mut graph = self.graph.lock();
        let fp = &mut graph.nodes[node as usize].footprint;
        fp.rec_writes.insert((rel.id(), rec_id));
        fp.struct_rels.insert(rel.id());
    }

    pub(crate) fn stage_update(&self, rel: &Arc<Relation>, node: NodeId, rec_id: u64, tuple: Tuple) {
        let mut sets = self.sets.lock();
        let rw = sets.writes.entry(rel.id()).or_insert_with(|| RelWrites {
            rel: rel.clone(),
            rows: BTreeMap::new(),
        });
        match rw.rows.get_mut(&rec_id) {
            // An update over our own staged insert stays an insert.
            Some(row) if row.kind == StageKind::Insert => row.tuple = Some(tuple),
            _ => {
                rw.rows.insert(
                    rec_id,
                    StagedRow {
                        kind: StageKind::Update,
                        tuple: Some(tuple),
                    },
                );
            }
        }
        drop(sets);
        let mut graph = self.graph.lock();
        graph.nodes[node as usize]
            .footprint
            .rec_writes
            .insert((rel.id(), rec_id));
    }

    pub(crate) fn stage_delete(&self, rel: &Arc<Relation>, node: NodeId, rec_id: u64) {
        let mut sets = self.sets.lock();
        let rw = sets.writes.entry(rel.id()).or_insert_with(|| RelWrites {
            rel: rel.clone(),
            rows: BTreeMap::new(),
        });
        match rw.rows.get(&rec_id) {
            // Deleting our own staged insert cancels it outright.
            Some(row) if row.kind == StageKind::Insert => {
                rw.rows.remove(&rec_id);
            }
            _ => {
                rw.rows.insert(
                    rec_id,
                    StagedRow {
                        kind: StageKind::Delete,
                        tuple: None,
                    },
                );
            }
        }
        drop(sets);
        let mut graph = self.graph.lock();
        let fp = &mut graph.nodes[node as usize].footprint;
        fp.rec_writes.insert((rel.id(), rec_id));
        fp.struct_rels.insert(rel.id());
    }

    /// Copy of this transaction's staged rows for one relation, keyed by
    /// record id (ascending = staging order for inserts).
    pub(crate) fn overlay_for(&self, rel_id: u64) -> BTreeMap<u64, (StageKind, Option<Tuple>)> {
        let sets = self.sets.lock();
        match sets.writes.get(&rel_id) {
            Some(rw) => rw
                .rows
                .iter()
                .map(|(id, row)| (*id, (row.kind, row.tuple.clone())))
                .collect(),
            None => BTreeMap::new(),
        }
    }

    pub(crate) fn record_reads(
        &self,
        rel: &Arc<Relation>,
        node: NodeId,
        reads: impl IntoIterator<Item = (u64, u64)>,
        scans: impl IntoIterator<Item = (Granule, u64)>,
    ) {
        let mut sets = self.sets.lock();
        let mut any_scan = false;
        let mut graph_reads = Vec::new();
        for (rec, version) in reads {
            sets.reads.push(ReadEntry {
                rel: rel.clone(),
                rec,
                version,
            });
            graph_reads.push((rel.id(), rec));
        }
        for (granule, version) in scans {
            any_scan = true;
            sets.scans.push(ScanEntry {
                rel: rel.clone(),
                granule,
                version,
            });
        }
        drop(sets);
        let mut graph = self.graph.lock();
        let fp = &mut graph.nodes[node as usize].footprint;
        fp.rec_reads.extend(graph_reads);
        if any_scan {
            fp.scan_rels.insert(rel.id());
        }
    }
}

/// Synchronizable result of an asynchronous method invocation.
#[derive(Clone)]
pub struct FutureHandle {
    pub(crate) inner: Arc<FutInner>,
}

pub(crate) struct FutInner {
    pub invocation_id: u64,
    pub node: NodeId,
    pub root_ctx: u64,
    pub state: Mutex<Option<std::result::Result<Value, EngineError>>>,
    resolved_count: AtomicU32,
    /// Claim-and-run hook installed by the dispatcher when the invocation
    /// is queued on a pool: lets a blocked getter run the task inline
    /// instead of waiting behind a backlog.
    pub steal: Mutex<Option<Box<dyn FnOnce() + Send>>>,
}

impl FutureHandle {
    pub(crate) fn new(invocation_id: u64, node: NodeId, root_ctx: u64) -> FutureHandle {
        FutureHandle {
            inner: Arc::new(FutInner {
                invocation_id,
                node,
                root_ctx,
                state: Mutex::new(None),
                resolved_count: AtomicU32::new(0),
                steal: Mutex::new(None),
            }),
        }
    }

    pub fn invocation_id(&self) -> u64 {
        self.inner.invocation_id
    }

    /// Ordering token used by racy-sibling detection.
    pub fn node_id(&self) -> NodeId {
        self.inner.node
    }

    pub fn is_resolved(&self) -> bool {
        self.inner.state.lock().is_some()
    }

    pub fn peek(&self) -> Option<std::result::Result<Value, EngineError>> {
        self.inner.state.lock().clone()
    }

    /// Transition pending -> fulfilled/failed. Must fire exactly once.
    pub(crate) fn resolve(
        &self,
        root: &RootTxn,
        result: std::result::Result<Value, EngineError>,
    ) {
        let prev = self.inner.resolved_count.fetch_add(1, Ordering::SeqCst);
        assert_eq!(prev, 0, "future resolved more than once");
        if let Err(e) = &result {
            root.poison(e);
        }
        *self.inner.state.lock() = Some(result);
        root.graph.lock().mark_resolved(self.inner.node);
        root.ring_bell();
    }
}

/// Stable identifier source shared by contexts, invocations, and specs.
pub(crate) struct IdSource {
    next: std::sync::atomic::AtomicU64,
}

impl IdSource {
    pub fn new(start: u64) -> IdSource {
        IdSource {
            next: std::sync::atomic::AtomicU64::new(start),
        }
    }

    pub fn next(&self) -> u64 {
        self.next.fetch_add(1, Ordering::Relaxed) + 1
    }

    pub fn reserve(&self, floor: u64) {
        let mut cur = self.next.load(Ordering::Relaxed);
        while cur < floor {
            match self
                .next
                .compare_exchange(cur, floor, Ordering::Relaxed, Ordering::Relaxed)
            {
                Ok(_) => break,
                Err(actual) => cur = actual,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn future_resolves_exactly_once() {
        let root = RootTxn::new(1, TxnOptions::default());
        let node = root.graph.lock().add_node(ROOT_NODE, Frame::External);
        let f = FutureHandle::new(1, node, 1);
        assert!(!f.is_resolved());
        f.resolve(&root, Ok(Value::Int(7)));
        assert_eq!(f.peek(), Some(Ok(Value::Int(7))));
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            f.resolve(&root, Ok(Value::Int(8)));
        }));
        assert!(result.is_err(), "second resolution must be rejected");
    }

    #[test]
    fn failed_future_poisons_root() {
        let root = RootTxn::new(1, TxnOptions::default());
        let node = root.graph.lock().add_node(ROOT_NODE, Frame::External);
        let f = FutureHandle::new(1, node, 1);
        f.resolve(&root, Err(EngineError::Application("boom".into())));
        let sets = root.sets.lock();
        assert_eq!(
            sets.poison.as_ref().map(|(r, _)| *r),
            Some(AbortReason::ApplicationError)
        );
    }

    #[test]
    fn graph_tracks_resolution_and_ancestry() {
        let root = RootTxn::new(1, TxnOptions::default());
        let mut g = root.graph.lock();
        let a = g.add_node(ROOT_NODE, Frame::External);
        let b = g.add_node(a, Frame::External);
        assert_eq!(g.unresolved, 2);
        assert!(g.is_ancestor(ROOT_NODE, b));
        assert!(g.is_ancestor(a, b));
        assert!(!g.is_ancestor(b, a));
        g.mark_resolved(b);
        assert!(g.children_resolved(a));
        g.mark_resolved(a);
        assert_eq!(g.unresolved, 0);
    }
}
