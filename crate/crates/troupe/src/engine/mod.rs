//! Actor namespace, lifecycle, catalog, and the engine handle tying
//! together dispatch, transactions, durability, and security.

pub(crate) mod dispatch;

pub use dispatch::{Body, CallCtx, MethodCtx, Txn};

use crate::addr::ActorAddress;
use crate::durability::{scan_log, FlushPolicy, RecoveryReport, Wal};
use crate::error::{EngineError, Result};
use crate::relstore::{Relation, Schema};
use crate::security::{
    AccessRuleSet, AdminCommand, AuditLog, AuditRecord, Decision, Frame, StatsRegistry,
};
use crate::txn::{detached::DetachedQueue, IdSource, RootTxn, TxnOptions};
use crate::value::{ColumnType, Value};
use dashmap::DashMap;
use parking_lot::{Mutex, RwLock};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU64, Ordering};
use std::sync::{Arc, Weak};

/// Engine-wide dispatch mode, fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DispatchMode {
    /// Every invocation executes inline in the caller's execution stream.
    Sync,
    /// Invocations on pool-assigned actors are queued to the pool; the
    /// caller continues and synchronizes through the returned future.
    Async,
}

impl std::str::FromStr for DispatchMode {
    type Err = EngineError;
    fn from_str(s: &str) -> Result<DispatchMode> {
        match s {
            "sync" => Ok(DispatchMode::Sync),
            "async" => Ok(DispatchMode::Async),
            other => Err(EngineError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// One executor pool: worker threads consuming queued invocations.
#[derive(Debug, Clone)]
pub struct PoolSpec {
    pub name: String,
    pub threads: usize,
    /// Advisory processor hints, recorded but not enforced.
    pub affinity: Vec<usize>,
}

/// Maps actor addresses to executor pools. `pattern` is either a type
/// name or `Type/name`; first match wins, unmatched actors run inline in
/// their caller's stream.
#[derive(Debug, Clone)]
pub struct AssignRule {
    pub pattern: String,
    pub pool: String,
}

#[derive(Debug, Clone)]
pub struct DurabilityConfig {
    pub enabled: bool,
    pub path: Option<PathBuf>,
    pub policy: FlushPolicy,
}

impl Default for DurabilityConfig {
    fn default() -> Self {
        DurabilityConfig {
            enabled: false,
            path: None,
            policy: FlushPolicy::PerCommit,
        }
    }
}

#[derive(Clone)]
pub struct EngineConfig {
    pub mode: DispatchMode,
    pub pools: Vec<PoolSpec>,
    pub assignment: Vec<AssignRule>,
    pub durability: DurabilityConfig,
    /// Record allowed external-client calls in the audit trail.
    pub audit_external: bool,
    /// Run the background detached-transaction executor.
    pub detached_worker: bool,
    pub detached_retry_limit: u32,
    pub detached_backoff_ms: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            mode: DispatchMode::Sync,
            pools: Vec::new(),
            assignment: Vec::new(),
            durability: DurabilityConfig::default(),
            audit_external: true,
            detached_worker: true,
            detached_retry_limit: 10,
            detached_backoff_ms: 1,
        }
    }
}

/// Parameter kinds checked at invocation time. Scalars are checked
/// exactly; composite kinds check the shape only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamType {
    Int,
    Float,
    Str,
    Timestamp,
    Bool,
    List,
    Tuple,
    Any,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReturnType {
    Unit,
    Int,
    Float,
    Str,
    Bool,
    /// Single tuple with named columns (bulk-invocable).
    Tuple(Vec<(String, ColumnType)>),
    /// List of tuples with named columns (bulk-invocable).
    Rows(Vec<(String, ColumnType)>),
}

impl ReturnType {
    pub fn columns(cols: Vec<(&str, ColumnType)>) -> Vec<(String, ColumnType)> {
        cols.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
    }

    pub(crate) fn result_columns(&self) -> Option<&[(String, ColumnType)]> {
        match self {
            ReturnType::Tuple(c) | ReturnType::Rows(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MethodDescriptor {
    pub name: String,
    pub params: Vec<ParamType>,
    pub returns: ReturnType,
    /// Metadata-only annotation.
    pub encrypted: bool,
}

impl MethodDescriptor {
    pub fn new(name: &str) -> MethodDescriptor {
        MethodDescriptor {
            name: name.to_string(),
            params: Vec::new(),
            returns: ReturnType::Unit,
            encrypted: false,
        }
    }

    pub fn params(mut self, params: Vec<ParamType>) -> Self {
        self.params = params;
        self
    }

    pub fn returns(mut self, returns: ReturnType) -> Self {
        self.returns = returns;
        self
    }

    pub fn encrypted(mut self) -> Self {
        self.encrypted = true;
        self
    }

    pub(crate) fn check_args(&self, args: &[Value]) -> Result<()> {
        if args.len() != self.params.len() {
            return Err(EngineError::ArityMismatch {
                method: self.name.clone(),
                expected: self.params.len(),
                got: args.len(),
            });
        }
        for (p, v) in self.params.iter().zip(args) {
            let ok = match p {
                ParamType::Int => matches!(v, Value::Int(_)),
                ParamType::Float => matches!(v, Value::Float(_)),
                ParamType::Str => matches!(v, Value::Str(_)),
                ParamType::Timestamp => matches!(v, Value::Timestamp(_)),
                ParamType::Bool => matches!(v, Value::Bool(_)),
                ParamType::List => matches!(v, Value::List(_)),
                ParamType::Tuple => matches!(v, Value::Tuple(_)),
                ParamType::Any => true,
            };
            if !ok {
                return Err(EngineError::TypeMismatch(format!(
                    "argument {v:?} does not match parameter kind {p:?} of `{}`",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

pub(crate) struct MethodEntry {
    pub desc: MethodDescriptor,
    pub body: Arc<dyn Fn(&MethodCtx) -> Result<Value> + Send + Sync>,
}

/// Registered actor type: schemas, methods, durability annotation.
pub struct ActorType {
    pub name: String,
    pub durable: bool,
    pub schemas: Vec<Schema>,
    pub(crate) methods: BTreeMap<String, MethodEntry>,
    pub catalog_id: u64,
}

/// Builder for registering an actor type with its method bodies.
pub struct ActorTypeDef {
    name: String,
    durable: bool,
    schemas: Vec<Schema>,
    methods: Vec<(MethodDescriptor, Arc<dyn Fn(&MethodCtx) -> Result<Value> + Send + Sync>)>,
}

impl ActorTypeDef {
    pub fn new(name: &str) -> ActorTypeDef {
        ActorTypeDef {
            name: name.to_string(),
            durable: true,
            schemas: Vec::new(),
            methods: Vec::new(),
        }
    }

    /// The `nondurable` annotation: committed writes to this type's actors
    /// never reach the redo log.
    pub fn nondurable(mut self) -> Self {
        self.durable = false;
        self
    }

    pub fn relation(mut self, schema: Schema) -> Self {
        self.schemas.push(schema);
        self
    }

    pub fn method<F>(mut self, desc: MethodDescriptor, body: F) -> Self
    where
        F: Fn(&MethodCtx) -> Result<Value> + Send + Sync + 'static,
    {
        self.methods.push((desc, Arc::new(body)));
        self
    }
}

pub struct ActorInstance {
    pub address: ActorAddress,
    pub(crate) ty: Arc<ActorType>,
    pub(crate) relations: BTreeMap<String, Arc<Relation>>,
}

impl ActorInstance {
    pub fn relation(&self, name: &str) -> Result<&Arc<Relation>> {
        self.relations
            .get(name)
            .ok_or_else(|| EngineError::UnknownRelation(name.to_string()))
    }
}

/// Logical clock epoch, microseconds. Loader data uses small timestamps,
/// runtime stamps start here; deterministic across runs by construction.
pub const CLOCK_BASE: i64 = 1_000_000_000_000;

thread_local! {
    static IN_METHOD: std::cell::Cell<u32> = const { std::cell::Cell::new(0) };
}

pub(crate) struct MethodDepthGuard;

impl MethodDepthGuard {
    pub fn enter() -> MethodDepthGuard {
        IN_METHOD.with(|c| c.set(c.get() + 1));
        MethodDepthGuard
    }
}

impl Drop for MethodDepthGuard {
    fn drop(&mut self) {
        IN_METHOD.with(|c| c.set(c.get() - 1));
    }
}

fn admin_guard(op: &'static str) -> Result<()> {
    if IN_METHOD.with(|c| c.get()) > 0 {
        return Err(EngineError::CalledFromMethodBody(op));
    }
    Ok(())
}

pub struct Engine {
    pub(crate) cfg: EngineConfig,
    catalog: RwLock<BTreeMap<String, Arc<ActorType>>>,
    pub(crate) actors: DashMap<ActorAddress, Arc<ActorInstance>>,
    pub(crate) pools: BTreeMap<String, Arc<dispatch::Pool>>,
    next_catalog_id: AtomicU64,
    next_relation_id: AtomicU64,
    pub(crate) ctx_ids: IdSource,
    pub(crate) invocation_ids: IdSource,
    pub(crate) spec_ids: IdSource,
    pub(crate) tid: IdSource,
    clock: AtomicI64,
    pub(crate) rules: RwLock<Arc<AccessRuleSet>>,
    pub(crate) audit: AuditLog,
    pub(crate) stats: StatsRegistry,
    pub(crate) detached: DetachedQueue,
    pub(crate) wal: Option<Arc<Wal>>,
    crashed: AtomicBool,
    recovered: AtomicBool,
    threads: Mutex<Vec<std::thread::JoinHandle<()>>>,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Arc<Engine>> {
        for rule in &cfg.assignment {
            if !cfg.pools.iter().any(|p| p.name == rule.pool) {
                return Err(EngineError::Config(format!(
                    "assignment `{}` references unknown pool `{}`",
                    rule.pattern, rule.pool
                )));
            }
        }
        let wal = if cfg.durability.enabled {
            let path = cfg.durability.path.clone().ok_or_else(|| {
                EngineError::Config("durability enabled without a log path".into())
            })?;
            Some(Arc::new(Wal::open(&path, cfg.durability.policy)?))
        } else {
            None
        };
        let mut pools = BTreeMap::new();
        for spec in &cfg.pools {
            if spec.threads == 0 {
                return Err(EngineError::Config(format!(
                    "pool `{}` must have at least one thread",
                    spec.name
                )));
            }
            pools.insert(spec.name.clone(), Arc::new(dispatch::Pool::new(spec.clone())));
        }
        let engine = Arc::new(Engine {
            detached: DetachedQueue::new(cfg.detached_retry_limit, cfg.detached_backoff_ms),
            audit: AuditLog::new(cfg.audit_external),
            cfg,
            catalog: RwLock::new(BTreeMap::new()),
            actors: DashMap::new(),
            pools,
            next_catalog_id: AtomicU64::new(0),
            next_relation_id: AtomicU64::new(0),
            ctx_ids: IdSource::new(0),
            invocation_ids: IdSource::new(0),
            spec_ids: IdSource::new(0),
            tid: IdSource::new(0),
            clock: AtomicI64::new(CLOCK_BASE),
            rules: RwLock::new(Arc::new(AccessRuleSet::default())),
            stats: StatsRegistry::default(),
            wal,
            crashed: AtomicBool::new(false),
            recovered: AtomicBool::new(false),
            threads: Mutex::new(Vec::new()),
        });
        let mut handles = Vec::new();
        for pool in engine.pools.values() {
            for i in 0..pool.spec.threads {
                let pool = pool.clone();
                let name = format!("pool-{}-{}", pool.spec.name, i);
                handles.push(
                    std::thread::Builder::new()
                        .name(name)
                        .spawn(move || dispatch::pool_worker(pool))
                        .expect("spawn pool worker"),
                );
            }
        }
        if engine.cfg.detached_worker {
            let weak = Arc::downgrade(&engine);
            handles.push(
                std::thread::Builder::new()
                    .name("detached-exec".into())
                    .spawn(move || detached_worker(weak))
                    .expect("spawn detached worker"),
            );
        }
        if let Some(wal) = &engine.wal {
            if let FlushPolicy::GroupMillis(ms) = wal.policy() {
                let weak = Arc::downgrade(wal);
                std::thread::Builder::new()
                    .name("wal-flusher".into())
                    .spawn(move || group_flusher(weak, ms))
                    .expect("spawn wal flusher");
            }
        }
        *engine.threads.lock() = handles;
        Ok(engine)
    }

    pub fn with_defaults() -> Result<Arc<Engine>> {
        Engine::new(EngineConfig::default())
    }

    pub fn mode(&self) -> DispatchMode {
        self.cfg.mode
    }

    pub(crate) fn ensure_not_crashed(&self) -> Result<()> {
        if self.crashed.load(Ordering::SeqCst) {
            return Err(EngineError::Io("engine crashed".into()));
        }
        Ok(())
    }

    /// Monotonic engine microseconds; advances deterministically per call.
    pub fn current_time(&self) -> i64 {
        self.clock.fetch_add(1, Ordering::Relaxed)
    }

    /// Current clock value without advancing it.
    pub fn peek_time(&self) -> i64 {
        self.clock.load(Ordering::Relaxed)
    }

    // ---- catalog & lifecycle ----

    pub fn register_actor_type(&self, def: ActorTypeDef) -> Result<u64> {
        admin_guard("register_actor_type")?;
        let mut catalog = self.catalog.write();
        if catalog.contains_key(&def.name) {
            return Err(EngineError::DuplicateType(def.name));
        }
        let mut methods = BTreeMap::new();
        for (desc, body) in def.methods {
            if methods.contains_key(&desc.name) {
                return Err(EngineError::InvalidSchema(format!(
                    "duplicate method `{}` on type `{}`",
                    desc.name, def.name
                )));
            }
            methods.insert(desc.name.clone(), MethodEntry { desc, body });
        }
        let mut seen = std::collections::HashSet::new();
        for s in &def.schemas {
            if !seen.insert(s.name.clone()) {
                return Err(EngineError::DuplicateRelation(s.name.clone()));
            }
        }
        let id = self.next_catalog_id.fetch_add(1, Ordering::Relaxed);
        catalog.insert(
            def.name.clone(),
            Arc::new(ActorType {
                name: def.name,
                durable: def.durable,
                schemas: def.schemas,
                methods,
                catalog_id: id,
            }),
        );
        Ok(id)
    }

    pub fn actor_type(&self, name: &str) -> Result<Arc<ActorType>> {
        self.catalog
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| EngineError::UnknownType(name.to_string()))
    }

    pub fn catalog_types(&self) -> Vec<String> {
        self.catalog.read().keys().cloned().collect()
    }

    /// Instantiate named actors of a registered type with empty relations.
    /// All-or-nothing: any duplicate name fails the whole call.
    pub fn create_actors(&self, type_name: &str, names: &[&str]) -> Result<usize> {
        admin_guard("create_actors")?;
        self.ensure_not_crashed()?;
        let ty = self.actor_type(type_name)?;
        let mut addrs = Vec::with_capacity(names.len());
        for name in names {
            let addr = ActorAddress::new(type_name, *name)?;
            if self.actors.contains_key(&addr) || addrs.contains(&addr) {
                return Err(EngineError::DuplicateActor(addr.to_string()));
            }
            addrs.push(addr);
        }
        for addr in &addrs {
            let mut relations = BTreeMap::new();
            for schema in &ty.schemas {
                let rel_id = self.next_relation_id.fetch_add(1, Ordering::Relaxed);
                relations.insert(
                    schema.name.clone(),
                    Arc::new(Relation::new(
                        rel_id,
                        schema.clone(),
                        addr.clone(),
                        ty.durable,
                    )?),
                );
            }
            self.actors.insert(
                addr.clone(),
                Arc::new(ActorInstance {
                    address: addr.clone(),
                    ty: ty.clone(),
                    relations,
                }),
            );
        }
        Ok(addrs.len())
    }

    /// Remove named actors. All-or-nothing over the name list.
    pub fn drop_actors(&self, type_name: &str, names: &[&str]) -> Result<usize> {
        admin_guard("drop_actors")?;
        self.ensure_not_crashed()?;
        self.actor_type(type_name)?;
        let mut addrs = Vec::with_capacity(names.len());
        for name in names {
            let addr = ActorAddress::new(type_name, *name)?;
            if !self.actors.contains_key(&addr) {
                return Err(EngineError::UnknownActor(addr.to_string()));
            }
            addrs.push(addr);
        }
        for addr in &addrs {
            self.actors.remove(addr);
        }
        Ok(addrs.len())
    }

    pub fn actor(&self, addr: &ActorAddress) -> Result<Arc<ActorInstance>> {
        self.actors
            .get(addr)
            .map(|e| e.value().clone())
            .ok_or_else(|| EngineError::UnknownActor(addr.to_string()))
    }

    pub fn actor_exists(&self, addr: &ActorAddress) -> bool {
        self.actors.contains_key(addr)
    }

    /// Copy-on-read listing of live actor names of a type, sorted.
    pub fn list_actor_names(&self, type_name: &str) -> Result<Vec<String>> {
        self.actor_type(type_name)?;
        let mut names: Vec<String> = self
            .actors
            .iter()
            .filter(|e| e.key().type_name == type_name)
            .map(|e| e.key().actor_name.clone())
            .collect();
        names.sort();
        Ok(names)
    }

    // ---- transactions ----

    pub fn begin_root(self: &Arc<Self>, options: TxnOptions) -> Result<Txn> {
        self.ensure_not_crashed()?;
        if options.isolation != crate::txn::IsolationLevel::Serializable {
            return Err(EngineError::UnsupportedIsolation(format!(
                "{:?}",
                options.isolation
            )));
        }
        let root = RootTxn::new(self.ctx_ids.next(), options);
        Ok(Txn::new(self.clone(), root))
    }

    /// One root transaction around a single invocation; returns the value
    /// and the commit outcome.
    pub fn call(
        self: &Arc<Self>,
        target: &ActorAddress,
        method: &str,
        args: Vec<Value>,
    ) -> Result<(Value, crate::error::CommitResult)> {
        let txn = self.begin_root(TxnOptions::default())?;
        let fut = txn.invoke(target, method, args)?;
        match txn.get(&fut) {
            Ok(v) => Ok((v, txn.commit())),
            Err(e) => {
                txn.abort();
                Err(e)
            }
        }
    }

    // ---- security & admin ----

    pub(crate) fn check_access(
        &self,
        caller: &Frame,
        target: &ActorAddress,
        method: &str,
        ctx_id: u64,
    ) -> Result<()> {
        let rules = self.rules.read().clone();
        let allowed = rules.allows(
            caller,
            (&target.type_name, method, &target.actor_name),
        );
        if allowed {
            if matches!(caller, Frame::External)
                && self.audit.record_external.load(Ordering::Relaxed)
            {
                self.audit.push(AuditRecord {
                    timestamp: self.peek_time(),
                    caller: caller.clone(),
                    target_type: target.type_name.clone(),
                    target_method: method.to_string(),
                    target_name: target.actor_name.clone(),
                    decision: Decision::Allow,
                    txn: ctx_id,
                });
            }
            Ok(())
        } else {
            self.stats.record_denied(target);
            self.audit.push(AuditRecord {
                timestamp: self.peek_time(),
                caller: caller.clone(),
                target_type: target.type_name.clone(),
                target_method: method.to_string(),
                target_name: target.actor_name.clone(),
                decision: Decision::Deny,
                txn: ctx_id,
            });
            Err(EngineError::AccessDenied {
                caller: caller.to_string(),
                target: format!("{}/{}.{}", target.type_name, target.actor_name, method),
            })
        }
    }

    pub(crate) fn audit_warn(&self, caller: &Frame, target: &ActorAddress, detail: &str) {
        self.audit.push(AuditRecord {
            timestamp: self.peek_time(),
            caller: caller.clone(),
            target_type: target.type_name.clone(),
            target_method: detail.to_string(),
            target_name: target.actor_name.clone(),
            decision: Decision::Warn,
            txn: 0,
        });
    }

    /// Parse and apply an admin script atomically: lifecycle commands
    /// route to the catalog, grant/revoke swap in a new rule set. Any
    /// validation error leaves the engine untouched.
    pub fn apply_admin_script(&self, text: &str) -> Result<Vec<AdminCommand>> {
        let commands = crate::security::parse_admin_script(text)?;
        self.apply_admin_commands(&commands)?;
        Ok(commands)
    }

    pub fn apply_admin_commands(&self, commands: &[AdminCommand]) -> Result<()> {
        admin_guard("apply_admin_commands")?;
        self.ensure_not_crashed()?;
        // Validate everything before touching any state.
        let mut staged_rules = (**self.rules.read()).clone();
        {
            let catalog = self.catalog.read();
            let check_type = |t: &crate::security::PatternTerm| -> Result<()> {
                if let crate::security::PatternTerm::Type(name) = t {
                    if !catalog.contains_key(name) {
                        return Err(EngineError::UnknownType(name.clone()));
                    }
                }
                Ok(())
            };
            for cmd in commands {
                match cmd {
                    AdminCommand::CreateActors { type_name, names } => {
                        if !catalog.contains_key(type_name) {
                            return Err(EngineError::UnknownType(type_name.clone()));
                        }
                        for n in names {
                            let addr = ActorAddress::new(type_name.as_str(), n.as_str())?;
                            if self.actors.contains_key(&addr) {
                                return Err(EngineError::DuplicateActor(addr.to_string()));
                            }
                        }
                    }
                    AdminCommand::DropActors { type_name, names } => {
                        if !catalog.contains_key(type_name) {
                            return Err(EngineError::UnknownType(type_name.clone()));
                        }
                        for n in names {
                            let addr = ActorAddress::new(type_name.as_str(), n.as_str())?;
                            if !self.actors.contains_key(&addr) {
                                return Err(EngineError::UnknownActor(addr.to_string()));
                            }
                        }
                    }
                    AdminCommand::RevokeAll => {
                        staged_rules.apply(cmd)?;
                    }
                    AdminCommand::Grant(rule) => {
                        check_type(&rule.subject.type_name)?;
                        for o in &rule.objects {
                            check_type(&o.type_name)?;
                        }
                        staged_rules.apply(cmd)?;
                    }
                }
            }
        }
        for cmd in commands {
            match cmd {
                AdminCommand::CreateActors { type_name, names } => {
                    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
                    self.create_actors(type_name, &refs)?;
                }
                AdminCommand::DropActors { type_name, names } => {
                    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
                    self.drop_actors(type_name, &refs)?;
                }
                AdminCommand::RevokeAll | AdminCommand::Grant(_) => {}
            }
        }
        *self.rules.write() = Arc::new(staged_rules);
        Ok(())
    }

    pub fn rule_set(&self) -> Arc<AccessRuleSet> {
        self.rules.read().clone()
    }

    pub fn stats_snapshot(&self) -> std::collections::HashMap<ActorAddress, crate::security::ActorStats> {
        self.stats.snapshot()
    }

    pub fn audit_tail(&self, n: usize) -> Vec<AuditRecord> {
        self.audit.tail(n)
    }

    pub fn audit_log(&self) -> &AuditLog {
        &self.audit
    }

    // ---- detached queue ----

    /// Synchronously run every eligible detached spec; returns executions.
    pub fn process_detached_queue(self: &Arc<Self>) -> usize {
        let engine = self.clone();
        self.detached
            .process(move |spec| dispatch::run_detached(&engine, spec))
    }

    /// Block until the detached queue is fully drained, retries included.
    pub fn drain_detached(self: &Arc<Self>) {
        let engine = self.clone();
        self.detached
            .drain(move |spec| dispatch::run_detached(&engine, spec));
    }

    pub fn detached_pending(&self) -> usize {
        self.detached.pending()
    }

    /// Detached specs whose delivery contract gave up, with the final
    /// failure class.
    pub fn detached_given_up(&self) -> Vec<(u64, crate::error::AbortReason)> {
        self.detached.given_up()
    }

    // ---- durability ----

    /// Discard all volatile state without shutdown hooks: the engine
    /// refuses further work and buffered (unsynced) log bytes are lost.
    /// The log file itself is retained as-is.
    pub fn simulate_crash(&self) {
        self.crashed.store(true, Ordering::SeqCst);
        self.detached.stop();
        if let Some(wal) = &self.wal {
            wal.crash();
        }
    }

    /// Replay the configured log into this cold engine. Actors must have
    /// been created per the catalog script beforehand. Committed
    /// transactions replay in tid order; a torn or uncommitted tail is
    /// truncated; exactly-once detached specs minus executed ones are
    /// restored to the queue.
    pub fn recover(self: &Arc<Self>) -> Result<RecoveryReport> {
        admin_guard("recover")?;
        self.ensure_not_crashed()?;
        let wal = self
            .wal
            .as_ref()
            .ok_or_else(|| EngineError::Config("recover requires durability enabled".into()))?;
        if self.recovered.swap(true, Ordering::SeqCst) {
            return Err(EngineError::Config("recover may run only once".into()));
        }
        let scan = scan_log(wal.path())?;
        let truncated = scan.file_len - scan.keep_offset;
        if truncated > 0 {
            let f = std::fs::OpenOptions::new().write(true).open(wal.path())?;
            f.set_len(scan.keep_offset)?;
            f.sync_data()?;
        }
        let mut replayed = 0u64;
        let mut max_tid = 0u64;
        let mut done: std::collections::HashSet<u64> = std::collections::HashSet::new();
        let mut specs: Vec<crate::txn::DetachedSpec> = Vec::new();
        let mut max_spec = 0u64;
        for txn in &scan.txns {
            for w in &txn.writes {
                let actor = self.actor(&w.actor)?;
                let rel = actor.relation(&w.relation)?;
                let mut inner = rel.inner.write();
                match w.op {
                    crate::durability::LogOp::Insert => {
                        rel.install_insert(
                            &mut inner,
                            w.rec_id,
                            w.tuple.clone().unwrap_or_default(),
                            txn.tid,
                        );
                    }
                    crate::durability::LogOp::Update => {
                        rel.install_update(
                            &mut inner,
                            w.rec_id,
                            w.tuple.clone().unwrap_or_default(),
                            txn.tid,
                        );
                    }
                    crate::durability::LogOp::Delete => {
                        rel.install_delete(&mut inner, w.rec_id);
                    }
                }
            }
            for d in &txn.dones {
                done.insert(*d);
                self.detached.mark_executed(*d);
            }
            for s in &txn.specs {
                max_spec = max_spec.max(s.id);
                specs.push(s.clone());
            }
            replayed += 1;
            max_tid = max_tid.max(txn.tid);
        }
        let mut restored = 0u64;
        for s in specs {
            if !done.contains(&s.id) {
                self.detached.schedule(s);
                restored += 1;
            }
        }
        self.tid.reserve(max_tid);
        self.spec_ids.reserve(max_spec);
        Ok(RecoveryReport {
            tids_replayed: replayed,
            truncated_tail_bytes: truncated,
            detached_specs_restored: restored,
        })
    }

    // ---- snapshots for verification & admin ----

    /// Committed snapshot of one relation: (record id, version, tuple).
    pub fn relation_snapshot(
        &self,
        addr: &ActorAddress,
        relation: &str,
    ) -> Result<Vec<(u64, u64, Vec<Value>)>> {
        let actor = self.actor(addr)?;
        Ok(actor.relation(relation)?.snapshot())
    }

    /// Committed snapshot of every relation of every live actor, keyed by
    /// (type, actor name, relation name).
    pub fn database_snapshot(
        &self,
    ) -> BTreeMap<(String, String, String), Vec<(u64, u64, Vec<Value>)>> {
        let mut out = BTreeMap::new();
        for entry in self.actors.iter() {
            let addr = entry.key();
            for (rel_name, rel) in &entry.value().relations {
                out.insert(
                    (
                        addr.type_name.clone(),
                        addr.actor_name.clone(),
                        rel_name.clone(),
                    ),
                    rel.snapshot(),
                );
            }
        }
        out
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        for pool in self.pools.values() {
            pool.stop();
        }
        self.detached.stop();
        for handle in self.threads.lock().drain(..) {
            let _ = handle.join();
        }
    }
}

fn detached_worker(engine: Weak<Engine>) {
    loop {
        let Some(strong) = engine.upgrade() else {
            return;
        };
        if strong.detached.stopped() {
            return;
        }
        // Hold the engine only per iteration so drop can proceed.
        let queue: &DetachedQueue = &strong.detached;
        let engine_for_run = strong.clone();
        let mut ran_any = false;
        queue.process(|spec| {
            ran_any = true;
            dispatch::run_detached(&engine_for_run, spec)
        });
        drop(strong);
        if !ran_any {
            std::thread::sleep(std::time::Duration::from_millis(1));
        }
    }
}

fn group_flusher(wal: Weak<Wal>, interval_ms: u64) {
    loop {
        std::thread::sleep(std::time::Duration::from_millis(interval_ms.max(1)));
        match wal.upgrade() {
            Some(w) => {
                let _ = w.flush_sync();
            }
            None => return,
        }
    }
}
