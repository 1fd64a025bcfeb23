//! Method dispatch: inline (sync) and pool-queued (async) execution,
//! future synchronization, multi-actor bulk invocation, and detached
//! transaction execution.

use super::{ActorInstance, DispatchMode, Engine, MethodDepthGuard, PoolSpec};
use crate::addr::ActorAddress;
use crate::error::{EngineError, Result};
use crate::relstore::{RelationCtx, RowSet};
use crate::security::Frame;
use crate::txn::commit::{abort_root, commit_root};
use crate::txn::detached::AttemptOutcome;
use crate::txn::racy::RacyWitness;
use crate::txn::{
    DetachTrigger, DetachedSpec, Delivery, FutureHandle, NodeId, RootTxn, TxnStatus, ROOT_NODE,
};
use crate::value::{ColumnType, Value};
use parking_lot::{Condvar, Mutex};
use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Weak};
use std::time::Instant;

thread_local! {
    static CURRENT_POOL: std::cell::RefCell<Option<String>> =
        const { std::cell::RefCell::new(None) };
}

/// Executable payload of an invocation.
pub enum Body {
    Method(Arc<dyn Fn(&MethodCtx) -> Result<Value> + Send + Sync>),
    Once(Mutex<Option<Box<dyn FnOnce(&MethodCtx) -> Result<Value> + Send>>>),
}

pub(crate) struct TaskJob {
    engine: Weak<Engine>,
    root: Arc<RootTxn>,
    node: NodeId,
    actor: Arc<ActorInstance>,
    method: String,
    method_encrypted: bool,
    body: Body,
    args: Vec<Value>,
    future: FutureHandle,
    is_detached: bool,
}

pub(crate) struct TaskCell {
    claimed: AtomicBool,
    job: Mutex<Option<TaskJob>>,
}

impl TaskCell {
    fn claim(&self) -> bool {
        self.claimed
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .is_ok()
    }
}

pub(crate) struct Pool {
    pub spec: PoolSpec,
    queue: Mutex<VecDeque<Arc<TaskCell>>>,
    cv: Condvar,
    stop: AtomicBool,
}

impl Pool {
    pub fn new(spec: PoolSpec) -> Pool {
        Pool {
            spec,
            queue: Mutex::new(VecDeque::new()),
            cv: Condvar::new(),
            stop: AtomicBool::new(false),
        }
    }

    fn enqueue(&self, job: TaskJob) {
        let future = job.future.clone();
        let cell = Arc::new(TaskCell {
            claimed: AtomicBool::new(false),
            job: Mutex::new(Some(job)),
        });
        // Getter-side claim hook: a blocked get() may run the task inline
        // instead of waiting behind a backlog.
        let steal_cell = cell.clone();
        *future.inner.steal.lock() = Some(Box::new(move || {
            if steal_cell.claim() {
                if let Some(job) = steal_cell.job.lock().take() {
                    run_job(job);
                }
            }
        }));
        let mut q = self.queue.lock();
        q.push_back(cell);
        self.cv.notify_one();
    }

    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
        self.cv.notify_all();
    }
}

pub(crate) fn pool_worker(pool: Arc<Pool>) {
    CURRENT_POOL.with(|p| *p.borrow_mut() = Some(pool.spec.name.clone()));
    loop {
        let cell = {
            let mut q = pool.queue.lock();
            loop {
                if pool.stop.load(Ordering::SeqCst) {
                    return;
                }
                if let Some(c) = q.pop_front() {
                    break c;
                }
                pool.cv.wait(&mut q);
            }
        };
        if cell.claim() {
            if let Some(job) = cell.job.lock().take() {
                run_job(job);
            }
        }
    }
}

fn run_job(job: TaskJob) {
    let Some(engine) = job.engine.upgrade() else {
        job.future
            .resolve(&job.root, Err(EngineError::Io("engine shut down".into())));
        return;
    };
    let started = Instant::now();
    let result = {
        let _depth = MethodDepthGuard::enter();
        let ctx = MethodCtx {
            call: CallCtx {
                engine: engine.clone(),
                root: job.root.clone(),
                node: job.node,
                frame: Frame::actor(
                    &job.actor.address.type_name,
                    &job.method,
                    &job.actor.address.actor_name,
                ),
                is_detached: job.is_detached,
            },
            actor: &job.actor,
            args: &job.args,
            method_encrypted: job.method_encrypted,
        };
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| match &job.body {
            Body::Method(f) => f(&ctx),
            Body::Once(slot) => {
                let f = slot.lock().take().expect("one-shot body already taken");
                f(&ctx)
            }
        }));
        match outcome {
            Ok(r) => r,
            Err(_) => Err(EngineError::Application(format!(
                "method `{}` panicked",
                job.method
            ))),
        }
    };
    // A method completes only when all nested invocations complete.
    job.root
        .wait_until(|| job.root.graph.lock().children_resolved(job.node));
    engine
        .stats
        .record_busy(&job.actor.address, started.elapsed().as_micros() as u64);
    job.future.resolve(&job.root, result);
}

/// Shared call surface of one execution stream within a transaction:
/// the client stream (node 0) or a method body's node.
#[derive(Clone)]
pub struct CallCtx {
    pub(crate) engine: Arc<Engine>,
    pub(crate) root: Arc<RootTxn>,
    pub(crate) node: NodeId,
    pub(crate) frame: Frame,
    pub(crate) is_detached: bool,
}

impl CallCtx {
    /// Asynchronously invoke a registered method; returns a pending future.
    pub fn invoke(
        &self,
        target: &ActorAddress,
        method: &str,
        args: Vec<Value>,
    ) -> Result<FutureHandle> {
        let actor = self.engine.actor(target)?;
        let entry = actor.ty.methods.get(method).ok_or_else(|| {
            EngineError::UnknownMethod {
                type_name: target.type_name.clone(),
                method: method.to_string(),
            }
        })?;
        entry.desc.check_args(&args)?;
        let encrypted = entry.desc.encrypted;
        let body = Body::Method(entry.body.clone());
        self.dispatch(actor, method.to_string(), encrypted, body, args)
    }

    /// Scripted invocation: run a one-shot closure as a method body on the
    /// target actor, inside this transaction.
    pub fn invoke_with<F>(&self, target: &ActorAddress, f: F) -> Result<FutureHandle>
    where
        F: FnOnce(&MethodCtx) -> Result<Value> + Send + 'static,
    {
        let actor = self.engine.actor(target)?;
        let body = Body::Once(Mutex::new(Some(Box::new(f))));
        self.dispatch(actor, "<scripted>".to_string(), false, body, Vec::new())
    }

    fn dispatch(
        &self,
        actor: Arc<ActorInstance>,
        method: String,
        method_encrypted: bool,
        body: Body,
        args: Vec<Value>,
    ) -> Result<FutureHandle> {
        self.root.ensure_active()?;
        self.engine.ensure_not_crashed()?;
        self.engine
            .check_access(&self.frame, &actor.address, &method, self.root.ctx_id())
            .map_err(|e| {
                self.root.poison(&e);
                e
            })?;
        if self.node == ROOT_NODE {
            let _ = self.root.root_target.set(actor.address.clone());
        }
        let node = self.root.graph.lock().add_node(
            self.node,
            Frame::actor(
                &actor.address.type_name,
                &method,
                &actor.address.actor_name,
            ),
        );
        let future = FutureHandle::new(self.engine.invocation_ids.next(), node, self.root.ctx_id());
        self.engine.stats.record_invocation(&actor.address);
        let job = TaskJob {
            engine: Arc::downgrade(&self.engine),
            root: self.root.clone(),
            node,
            actor,
            method,
            method_encrypted,
            body,
            args,
            future: future.clone(),
            is_detached: self.is_detached,
        };
        match self.route(&job.actor.address) {
            None => run_job(job),
            Some(pool) => pool.enqueue(job),
        }
        Ok(future)
    }

    /// Pool routing: sync mode and unassigned actors run inline; an
    /// invocation from inside a pool to the same pool also runs inline
    /// (same-locality access, and it cannot deadlock on its own queue).
    fn route(&self, addr: &ActorAddress) -> Option<Arc<Pool>> {
        if self.engine.cfg.mode == DispatchMode::Sync {
            return None;
        }
        let qualified = format!("{}/{}", addr.type_name, addr.actor_name);
        let pool_name = self
            .engine
            .cfg
            .assignment
            .iter()
            .find(|r| r.pattern == addr.type_name || r.pattern == qualified)
            .map(|r| r.pool.as_str())?;
        let same_pool =
            CURRENT_POOL.with(|p| p.borrow().as_deref() == Some(pool_name));
        if same_pool {
            return None;
        }
        self.engine.pools.get(pool_name).cloned()
    }

    fn check_membership(&self, f: &FutureHandle) -> Result<()> {
        if f.inner.root_ctx != self.root.ctx_id() {
            return Err(EngineError::ForeignFuture);
        }
        Ok(())
    }

    /// Block this execution stream until the future resolves; records an
    /// ordering edge (the callee's effects happen-before what follows).
    pub fn get(&self, f: &FutureHandle) -> Result<Value> {
        self.check_membership(f)?;
        {
            let g = self.root.graph.lock();
            if g.is_ancestor(f.inner.node, self.node) {
                return Err(EngineError::DeadlockDetected);
            }
        }
        if !f.is_resolved() {
            if let Some(steal) = f.inner.steal.lock().take() {
                steal();
            }
            let fut = f.clone();
            self.root.wait_until(move || fut.is_resolved());
        }
        self.root.graph.lock().record_sync(self.node, f.inner.node);
        f.peek().expect("future resolved")
    }

    /// Barrier over every future; ordering edges recorded for all. The
    /// first failure (by list position) surfaces after all complete.
    pub fn when_all(&self, fs: &[FutureHandle]) -> Result<()> {
        for f in fs {
            self.check_membership(f)?;
        }
        for f in fs {
            if !f.is_resolved() {
                if let Some(steal) = f.inner.steal.lock().take() {
                    steal();
                }
                let fut = f.clone();
                self.root.wait_until(move || fut.is_resolved());
            }
            self.root.graph.lock().record_sync(self.node, f.inner.node);
        }
        for f in fs {
            if let Some(Err(e)) = f.peek() {
                return Err(e);
            }
        }
        Ok(())
    }

    /// Index of one completed future, ties broken by lowest list index;
    /// an ordering edge is recorded for the selected future only.
    pub fn when_one(&self, fs: &[FutureHandle]) -> Result<usize> {
        if fs.is_empty() {
            return Err(EngineError::Application(
                "when_one requires at least one future".into(),
            ));
        }
        for f in fs {
            self.check_membership(f)?;
        }
        if !fs.iter().any(|f| f.is_resolved()) {
            self.root
                .wait_until(|| fs.iter().any(|f| f.is_resolved()));
        }
        let idx = fs.iter().position(|f| f.is_resolved()).expect("one resolved");
        self.root
            .graph
            .lock()
            .record_sync(self.node, fs[idx].inner.node);
        match fs[idx].peek().expect("resolved") {
            Ok(_) => Ok(idx),
            Err(e) => Err(e),
        }
    }

    /// Invoke one method across many actors of a type (concurrently in
    /// async mode), wait for all, and return the results as a row set
    /// whose first column is the actor name.
    pub fn bulk_invoke(
        &self,
        type_name: &str,
        names: &[String],
        method: &str,
        args_for: &dyn Fn(&str) -> Vec<Value>,
    ) -> Result<RowSet> {
        let ty = self.engine.actor_type(type_name)?;
        let entry = ty
            .methods
            .get(method)
            .ok_or_else(|| EngineError::UnknownMethod {
                type_name: type_name.to_string(),
                method: method.to_string(),
            })?;
        let result_cols = entry.desc.returns.result_columns().ok_or_else(|| {
            EngineError::TypeMismatch(format!(
                "bulk_invoke target `{method}` must return a tuple or tuple list"
            ))
        })?;
        let mut columns: Vec<(String, ColumnType)> =
            vec![("name".to_string(), ColumnType::Str)];
        columns.extend(result_cols.to_vec());
        // all names must be live before anything dispatches
        let mut addrs = Vec::with_capacity(names.len());
        for n in names {
            let addr = ActorAddress::new(type_name, n.as_str())?;
            self.engine.actor(&addr)?;
            addrs.push(addr);
        }
        let mut futures = Vec::with_capacity(addrs.len());
        for (addr, name) in addrs.iter().zip(names) {
            futures.push(self.invoke(addr, method, args_for(name))?);
        }
        let mut rs = RowSet::new(columns);
        for (name, f) in names.iter().zip(&futures) {
            let value = self.get(f)?;
            match value {
                Value::Tuple(t) => {
                    let mut row = Vec::with_capacity(t.len() + 1);
                    row.push(Value::Str(name.clone()));
                    row.extend(t);
                    rs.push(row)?;
                }
                Value::List(rows) => {
                    for r in rows {
                        let t = r.as_tuple().ok_or_else(|| {
                            EngineError::TypeMismatch(
                                "bulk_invoke result list must contain tuples".into(),
                            )
                        })?;
                        let mut row = Vec::with_capacity(t.len() + 1);
                        row.push(Value::Str(name.clone()));
                        row.extend(t.to_vec());
                        rs.push(row)?;
                    }
                }
                other => {
                    return Err(EngineError::TypeMismatch(format!(
                        "bulk_invoke result must be tuple or tuple list, got {other:?}"
                    )))
                }
            }
        }
        Ok(rs)
    }

    /// Register a detached invocation to run after this transaction's
    /// outcome, as an independent root transaction.
    pub fn detach(
        &self,
        target: &ActorAddress,
        method: &str,
        args: Vec<Value>,
        trigger: DetachTrigger,
        delivery: Delivery,
    ) -> Result<()> {
        self.root.ensure_active()?;
        if self.is_detached {
            self.engine
                .audit_warn(&self.frame, target, &format!("detached-chain:{method}"));
        }
        let spec = DetachedSpec {
            id: self.engine.spec_ids.next(),
            target: target.clone(),
            method: method.to_string(),
            args,
            trigger,
            delivery,
            origin: self.frame.clone(),
        };
        self.root.detached.lock().push(spec);
        Ok(())
    }

    pub fn current_time(&self) -> i64 {
        self.engine.current_time()
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }
}

/// Client handle to a root transaction.
pub struct Txn {
    call: CallCtx,
}

impl Txn {
    pub(crate) fn new(engine: Arc<Engine>, root: Arc<RootTxn>) -> Txn {
        Txn {
            call: CallCtx {
                engine,
                root,
                node: ROOT_NODE,
                frame: Frame::External,
                is_detached: false,
            },
        }
    }

    fn with_frame(mut self, frame: Frame) -> Txn {
        self.call.root.graph.lock().nodes[ROOT_NODE as usize].frame = frame.clone();
        self.call.frame = frame;
        self
    }

    fn as_detached(mut self) -> Txn {
        self.call.is_detached = true;
        self
    }

    pub fn ctx_id(&self) -> u64 {
        self.call.root.ctx_id()
    }

    pub fn status(&self) -> TxnStatus {
        self.call.root.status()
    }

    pub fn invoke(
        &self,
        target: &ActorAddress,
        method: &str,
        args: Vec<Value>,
    ) -> Result<FutureHandle> {
        self.call.invoke(target, method, args)
    }

    pub fn invoke_with<F>(&self, target: &ActorAddress, f: F) -> Result<FutureHandle>
    where
        F: FnOnce(&MethodCtx) -> Result<Value> + Send + 'static,
    {
        self.call.invoke_with(target, f)
    }

    pub fn get(&self, f: &FutureHandle) -> Result<Value> {
        self.call.get(f)
    }

    pub fn when_all(&self, fs: &[FutureHandle]) -> Result<()> {
        self.call.when_all(fs)
    }

    pub fn when_one(&self, fs: &[FutureHandle]) -> Result<usize> {
        self.call.when_one(fs)
    }

    pub fn bulk_invoke(
        &self,
        type_name: &str,
        names: &[String],
        method: &str,
        args_for: &dyn Fn(&str) -> Vec<Value>,
    ) -> Result<RowSet> {
        self.call.bulk_invoke(type_name, names, method, args_for)
    }

    pub fn detach(
        &self,
        target: &ActorAddress,
        method: &str,
        args: Vec<Value>,
        trigger: DetachTrigger,
        delivery: Delivery,
    ) -> Result<()> {
        self.call.detach(target, method, args, trigger, delivery)
    }

    /// Pure commit-time check exposed for inspection and tests.
    pub fn detect_racy_siblings(&self) -> Option<RacyWitness> {
        crate::txn::racy::detect(&self.call.root.graph.lock())
    }

    pub fn commit(self) -> crate::error::CommitResult {
        commit_root(&self.call.engine, &self.call.root, None)
    }

    pub(crate) fn commit_with_spec_done(self, spec_done: Option<u64>) -> crate::error::CommitResult {
        commit_root(&self.call.engine, &self.call.root, spec_done)
    }

    /// Discard all staged writes; ON_ABORT / ON_ANY detached specs fire.
    pub fn abort(self) {
        abort_root(
            &self.call.engine,
            &self.call.root,
            crate::error::AbortReason::ApplicationError,
        );
    }
}

/// Execution context of a method body on its actor.
pub struct MethodCtx<'a> {
    pub(crate) call: CallCtx,
    pub(crate) actor: &'a Arc<ActorInstance>,
    pub(crate) args: &'a [Value],
    pub(crate) method_encrypted: bool,
}

impl<'a> MethodCtx<'a> {
    /// Context-tracked view of one of this actor's own relations. State of
    /// other actors is reachable only through invocation.
    pub fn relation(&self, name: &str) -> Result<RelationCtx<'_>> {
        let rel = self.actor.relation(name)?;
        if rel.schema().encrypted && !self.method_encrypted {
            self.call.engine.audit_warn(
                &self.call.frame,
                &self.actor.address,
                &format!("plaintext-access:{name}"),
            );
        }
        Ok(RelationCtx::new(rel, &self.call.root, self.call.node))
    }

    pub fn self_address(&self) -> &ActorAddress {
        &self.actor.address
    }

    pub fn args(&self) -> &[Value] {
        self.args
    }

    pub fn arg(&self, i: usize) -> Result<&Value> {
        self.args
            .get(i)
            .ok_or_else(|| EngineError::Application(format!("missing argument {i}")))
    }

    pub fn int_arg(&self, i: usize) -> Result<i64> {
        self.arg(i)?
            .as_int()
            .ok_or_else(|| EngineError::TypeMismatch(format!("argument {i} must be int")))
    }

    pub fn float_arg(&self, i: usize) -> Result<f64> {
        self.arg(i)?
            .as_float()
            .ok_or_else(|| EngineError::TypeMismatch(format!("argument {i} must be float")))
    }

    pub fn str_arg(&self, i: usize) -> Result<&str> {
        self.arg(i)?
            .as_str()
            .ok_or_else(|| EngineError::TypeMismatch(format!("argument {i} must be string")))
    }

    pub fn ts_arg(&self, i: usize) -> Result<i64> {
        self.arg(i)?
            .as_timestamp()
            .ok_or_else(|| EngineError::TypeMismatch(format!("argument {i} must be timestamp")))
    }

    pub fn list_arg(&self, i: usize) -> Result<&[Value]> {
        self.arg(i)?
            .as_list()
            .ok_or_else(|| EngineError::TypeMismatch(format!("argument {i} must be a list")))
    }

    pub fn invoke(
        &self,
        target: &ActorAddress,
        method: &str,
        args: Vec<Value>,
    ) -> Result<FutureHandle> {
        self.call.invoke(target, method, args)
    }

    pub fn get(&self, f: &FutureHandle) -> Result<Value> {
        self.call.get(f)
    }

    pub fn when_all(&self, fs: &[FutureHandle]) -> Result<()> {
        self.call.when_all(fs)
    }

    pub fn when_one(&self, fs: &[FutureHandle]) -> Result<usize> {
        self.call.when_one(fs)
    }

    pub fn bulk_invoke(
        &self,
        type_name: &str,
        names: &[String],
        method: &str,
        args_for: &dyn Fn(&str) -> Vec<Value>,
    ) -> Result<RowSet> {
        self.call.bulk_invoke(type_name, names, method, args_for)
    }

    pub fn detach(
        &self,
        target: &ActorAddress,
        method: &str,
        args: Vec<Value>,
        trigger: DetachTrigger,
        delivery: Delivery,
    ) -> Result<()> {
        self.call.detach(target, method, args, trigger, delivery)
    }

    pub fn current_time(&self) -> i64 {
        self.call.current_time()
    }

    pub fn engine(&self) -> &Arc<Engine> {
        self.call.engine()
    }
}

/// Run one detached spec as an independent root transaction with the
/// originating frame, reporting the outcome for delivery handling.
pub(crate) fn run_detached(engine: &Arc<Engine>, spec: &DetachedSpec) -> AttemptOutcome {
    let txn = match engine.begin_root(crate::txn::TxnOptions::default()) {
        Ok(t) => t.with_frame(spec.origin.clone()).as_detached(),
        Err(e) => return AttemptOutcome::Permanent(e),
    };
    let result = txn
        .invoke(&spec.target, &spec.method, spec.args.clone())
        .and_then(|f| txn.get(&f));
    match result {
        Ok(_) => {
            let done = (spec.delivery == Delivery::ExactlyOnce).then_some(spec.id);
            match txn.commit_with_spec_done(done) {
                crate::error::CommitResult::Committed(_) => AttemptOutcome::Committed,
                crate::error::CommitResult::Aborted(r) => AttemptOutcome::Aborted(r),
            }
        }
        Err(e) => {
            let class = e.abort_class();
            txn.abort();
            match e {
                EngineError::UnknownActor(_)
                | EngineError::UnknownMethod { .. }
                | EngineError::ArityMismatch { .. }
                | EngineError::AccessDenied { .. } => AttemptOutcome::Permanent(e),
                _ => AttemptOutcome::Aborted(class),
            }
        }
    }
}
