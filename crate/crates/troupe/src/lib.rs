//! troupe: an embedded, multi-core, in-memory actor database engine.
//!
//! Application state lives in named logical actors, each encapsulating
//! schema-typed relations. Actors communicate only by (possibly
//! asynchronous) method invocation; nested invocations share the root
//! transaction's serializable fate via optimistic validation. Per-actor
//! durability annotations drive a redo log with crash recovery, an admin
//! DSL configures lifecycle and fine-grained access control, and the
//! bench module drives the SmartMart workload for sync-vs-async
//! evaluation.

pub mod addr;
pub mod bench;
pub mod config;
pub mod durability;
pub mod engine;
pub mod error;
pub mod oracle;
pub mod relstore;
pub mod security;
pub mod smartmart;
pub mod txn;
pub mod value;

pub use addr::{addr, ActorAddress};
pub use engine::{
    ActorTypeDef, AssignRule, Body, DispatchMode, DurabilityConfig, Engine, EngineConfig,
    MethodCtx, MethodDescriptor, ParamType, PoolSpec, ReturnType, Txn, CLOCK_BASE,
};
pub use error::{AbortReason, CommitResult, EngineError, Result};
pub use relstore::{
    list_to_rowset, rowset_to_list, AggSpec, CmpOp, Predicate, RelationCtx, RowSet, Schema,
    WindowStats,
};
pub use security::{AccessRuleSet, AdminCommand, AuditRecord, Frame};
pub use txn::{
    DetachTrigger, DetachedSpec, Delivery, FutureHandle, IsolationLevel, TxnOptions, TxnStatus,
};
pub use value::{ColumnType, Tuple, Value};
