//! Access control over actor method invocation, the admin DSL, the audit
//! trail, and per-actor monitoring statistics.
//!
//! Rule semantics: grants are positive. A fresh engine allows everything;
//! after `REVOKE ACCESS TO ACTORS OF TYPE ALL FROM ACTORS OF TYPE ALL` the
//! default flips to deny and only granted calls pass. Type-scoped rules
//! (no name lists) grant at (type, method) granularity. Name-scoped rules
//! narrow: once any name-scoped rule mentions a (subject type, object
//! type) pair, every call between those types must additionally be covered
//! by some name-scoped rule. External (client) callers bypass inter-actor
//! rules.

mod parser;

pub use parser::{parse_admin_script, pretty_print, token_texts};

use crate::addr::ActorAddress;
use crate::error::{AbortReason, EngineError, Result};
use dashmap::DashMap;
use parking_lot::Mutex;
use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

/// Who is making a call: an actor method frame or an external client.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub enum Frame {
    External,
    Actor {
        type_name: String,
        method: String,
        actor_name: String,
    },
}

impl Frame {
    pub fn actor(type_name: &str, method: &str, actor_name: &str) -> Frame {
        Frame::Actor {
            type_name: type_name.to_string(),
            method: method.to_string(),
            actor_name: actor_name.to_string(),
        }
    }
}

impl std::fmt::Display for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Frame::External => write!(f, "external"),
            Frame::Actor {
                type_name,
                method,
                actor_name,
            } => write!(f, "{type_name}/{actor_name}.{method}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternTerm {
    All,
    Type(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NameSet {
    All,
    Set(Vec<String>),
}

impl NameSet {
    pub fn is_all(&self) -> bool {
        matches!(self, NameSet::All)
    }

    pub fn covers(&self, name: &str) -> bool {
        match self {
            NameSet::All => true,
            NameSet::Set(ns) => ns.iter().any(|n| n == name),
        }
    }
}

/// Subject/object pattern of a grant rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActorPattern {
    pub type_name: PatternTerm,
    pub methods: NameSet,
    pub names: NameSet,
}

impl ActorPattern {
    fn matches_type(&self, ty: &str) -> bool {
        match &self.type_name {
            PatternTerm::All => true,
            PatternTerm::Type(t) => t == ty,
        }
    }

    fn matches_type_method(&self, ty: &str, method: &str) -> bool {
        self.matches_type(ty) && self.methods.covers(method)
    }

    fn validate(&self) -> Result<()> {
        if matches!(self.type_name, PatternTerm::All)
            && (!self.methods.is_all() || !self.names.is_all())
        {
            return Err(EngineError::RuleConflict(
                "a TYPE ALL pattern cannot constrain methods or names".into(),
            ));
        }
        Ok(())
    }
}

/// One GRANT statement: a subject and its AND ACCESS TO object chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRule {
    pub subject: ActorPattern,
    pub objects: Vec<ActorPattern>,
}

impl AccessRule {
    fn name_scoped(&self) -> bool {
        !self.subject.names.is_all() || self.objects.iter().any(|o| !o.names.is_all())
    }
}

/// Parsed admin DSL statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdminCommand {
    CreateActors {
        type_name: String,
        names: Vec<String>,
    },
    DropActors {
        type_name: String,
        names: Vec<String>,
    },
    RevokeAll,
    Grant(AccessRule),
}

/// Composed grant rules plus the deny-by-default flag.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccessRuleSet {
    /// Set once a REVOKE ALL has been applied: empty grant list then means
    /// deny everything rather than allow everything.
    pub revoked: bool,
    pub grants: Vec<AccessRule>,
}

impl AccessRuleSet {
    /// Apply one statement's access-control effect. Lifecycle commands are
    /// handled by the engine, not here.
    pub fn apply(&mut self, cmd: &AdminCommand) -> Result<()> {
        match cmd {
            AdminCommand::RevokeAll => {
                self.revoked = true;
                self.grants.clear();
            }
            AdminCommand::Grant(rule) => {
                rule.subject.validate()?;
                if rule.objects.is_empty() {
                    return Err(EngineError::RuleConflict(
                        "grant must name at least one object pattern".into(),
                    ));
                }
                for o in &rule.objects {
                    o.validate()?;
                }
                // Re-applying an identical script must be idempotent.
                if !self.grants.contains(rule) {
                    self.grants.push(rule.clone());
                }
            }
            AdminCommand::CreateActors { .. } | AdminCommand::DropActors { .. } => {}
        }
        Ok(())
    }

    /// Pure allow/deny decision for an actor-to-actor call.
    pub fn allows(&self, caller: &Frame, target: (&str, &str, &str)) -> bool {
        let (ct, cm, cn) = match caller {
            // External clients bypass inter-actor rules.
            Frame::External => return true,
            Frame::Actor {
                type_name,
                method,
                actor_name,
            } => (type_name.as_str(), method.as_str(), actor_name.as_str()),
        };
        let (tt, tm, tn) = target;
        if !self.revoked && self.grants.is_empty() {
            return true;
        }
        // Method dimension: a type-scoped grant must cover the call.
        let method_ok = self.grants.iter().any(|r| {
            !r.name_scoped()
                && r.subject.matches_type_method(ct, cm)
                && r.objects.iter().any(|o| o.matches_type_method(tt, tm))
        });
        if !method_ok {
            return false;
        }
        // Name dimension: if any name-scoped rule mentions this type pair,
        // some name-scoped rule must cover the (caller name, target name).
        let mut pair_constrained = false;
        let mut name_ok = false;
        for r in self.grants.iter().filter(|r| r.name_scoped()) {
            if !r.subject.matches_type(ct) {
                continue;
            }
            for o in &r.objects {
                if !o.matches_type(tt) {
                    continue;
                }
                pair_constrained = true;
                if r.subject.names.covers(cn)
                    && r.subject.methods.covers(cm)
                    && o.names.covers(tn)
                    && o.methods.covers(tm)
                {
                    name_ok = true;
                }
            }
        }
        !pair_constrained || name_ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Decision {
    Allow,
    Deny,
    /// Flag entry, e.g. plaintext access of an encrypted relation from a
    /// non-encrypted method, or a detached transaction detaching further.
    Warn,
}

/// Append-only audit trail entry.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AuditRecord {
    pub timestamp: i64,
    pub caller: Frame,
    pub target_type: String,
    pub target_method: String,
    pub target_name: String,
    pub decision: Decision,
    /// Pre-commit transaction context id of the surrounding transaction.
    pub txn: u64,
}

#[derive(Default)]
pub struct AuditLog {
    records: Mutex<Vec<AuditRecord>>,
    /// Recording of allowed external-client calls is configurable; denials
    /// are always recorded.
    pub record_external: AtomicBool,
}

impl AuditLog {
    pub fn new(record_external: bool) -> AuditLog {
        AuditLog {
            records: Mutex::new(Vec::new()),
            record_external: AtomicBool::new(record_external),
        }
    }

    pub fn push(&self, rec: AuditRecord) {
        self.records.lock().push(rec);
    }

    pub fn tail(&self, n: usize) -> Vec<AuditRecord> {
        let records = self.records.lock();
        let start = records.len().saturating_sub(n);
        records[start..].to_vec()
    }

    pub fn len(&self) -> usize {
        self.records.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn deny_count(&self) -> usize {
        self.records
            .lock()
            .iter()
            .filter(|r| r.decision == Decision::Deny)
            .count()
    }

    /// JSON-lines export of the whole trail.
    pub fn export_jsonl(&self) -> String {
        let records = self.records.lock();
        let mut out = String::new();
        for r in records.iter() {
            out.push_str(&serde_json::to_string(r).expect("audit record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Monotone per-actor usage counters.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct ActorStats {
    pub invocations: u64,
    pub commits: u64,
    pub aborts: HashMap<String, u64>,
    pub busy_micros: u64,
    pub denied: u64,
}

#[derive(Default)]
struct StatsCell {
    invocations: AtomicU64,
    commits: AtomicU64,
    aborts_read: AtomicU64,
    aborts_scan: AtomicU64,
    aborts_racy: AtomicU64,
    aborts_app: AtomicU64,
    aborts_denied: AtomicU64,
    busy_micros: AtomicU64,
    denied: AtomicU64,
}

#[derive(Default)]
pub struct StatsRegistry {
    cells: DashMap<ActorAddress, StatsCell>,
}

impl StatsRegistry {
    pub fn record_invocation(&self, addr: &ActorAddress) {
        self.cells
            .entry(addr.clone())
            .or_default()
            .invocations
            .fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_busy(&self, addr: &ActorAddress, micros: u64) {
        self.cells
            .entry(addr.clone())
            .or_default()
            .busy_micros
            .fetch_add(micros, Ordering::Relaxed);
    }

    pub fn record_commit(&self, addr: &ActorAddress) {
        self.cells
            .entry(addr.clone())
            .or_default()
            .commits
            .fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_abort(&self, addr: &ActorAddress, reason: AbortReason) {
        let cell = self.cells.entry(addr.clone()).or_default();
        let ctr = match reason {
            AbortReason::ReadValidation => &cell.aborts_read,
            AbortReason::ScanValidation => &cell.aborts_scan,
            AbortReason::RacySiblings => &cell.aborts_racy,
            AbortReason::ApplicationError => &cell.aborts_app,
            AbortReason::AccessDenied => &cell.aborts_denied,
        };
        ctr.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_denied(&self, addr: &ActorAddress) {
        self.cells
            .entry(addr.clone())
            .or_default()
            .denied
            .fetch_add(1, Ordering::Relaxed);
    }

    /// Point-in-time copy of all counters.
    pub fn snapshot(&self) -> HashMap<ActorAddress, ActorStats> {
        let mut out = HashMap::new();
        for entry in self.cells.iter() {
            let c = entry.value();
            let mut aborts = HashMap::new();
            for (name, v) in [
                ("read_validation", c.aborts_read.load(Ordering::Relaxed)),
                ("scan_validation", c.aborts_scan.load(Ordering::Relaxed)),
                ("racy_siblings", c.aborts_racy.load(Ordering::Relaxed)),
                ("application_error", c.aborts_app.load(Ordering::Relaxed)),
                ("access_denied", c.aborts_denied.load(Ordering::Relaxed)),
            ] {
                if v > 0 {
                    aborts.insert(name.to_string(), v);
                }
            }
            out.insert(
                entry.key().clone(),
                ActorStats {
                    invocations: c.invocations.load(Ordering::Relaxed),
                    commits: c.commits.load(Ordering::Relaxed),
                    aborts,
                    busy_micros: c.busy_micros.load(Ordering::Relaxed),
                    denied: c.denied.load(Ordering::Relaxed),
                },
            );
        }
        out
    }
}

/// Static verification: check a declared (caller type, caller method) ->
/// (target type, target method) call graph against a rule set, reporting
/// edges the rules would deny. Names are checked at type level only.
pub fn verify_call_graph(
    rules: &AccessRuleSet,
    edges: &[((&str, &str), (&str, &str))],
) -> Vec<String> {
    let mut violations = Vec::new();
    for ((ct, cm), (tt, tm)) in edges {
        let caller = Frame::actor(ct, cm, "*");
        // Name dimension is per-instance; probe with a wildcard name that
        // only type-scoped grants can satisfy.
        let method_ok = rules.grants.iter().any(|r| {
            !r.name_scoped()
                && r.subject.matches_type_method(ct, cm)
                && r.objects.iter().any(|o| o.matches_type_method(tt, tm))
        });
        let fresh = !rules.revoked && rules.grants.is_empty();
        if !fresh && !method_ok {
            violations.push(format!("{caller} -> {tt}.{tm} is called but not granted"));
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAPER_ACCESS_SCRIPT: &str = r#"
REVOKE ACCESS TO ACTORS OF TYPE ALL FROM ACTORS OF TYPE ALL;

GRANT ACTORS OF TYPE Cart WITH METHODS IN (add_items)
 ACCESS TO
   ACTORS OF TYPE Store_Section WITH METHODS IN (get_price)
 AND ACCESS TO
   ACTORS OF TYPE Customer WITH METHODS IN (get_customer_info)
 AND ACCESS TO
   ACTORS OF TYPE Group_Manager WITH METHODS IN
                  (get_fixed_discounts);

GRANT ACTORS OF TYPE Cart WITH METHODS IN (checkout)
 ACCESS TO
   ACTORS OF TYPE Store_Section WITH METHODS IN
                  (get_variable_discount_update_inventory)
 AND ACCESS TO
   ACTORS OF TYPE Customer WITH METHODS IN (add_store_visit);

GRANT ACTORS OF TYPE Cart WITH NAMES IN (12,13,14)
 ACCESS TO
   ACTORS OF TYPE Store_Section WITH NAMES IN (100, 200);
"#;

    fn paper_rules() -> AccessRuleSet {
        let cmds = parse_admin_script(PAPER_ACCESS_SCRIPT).unwrap();
        let mut rules = AccessRuleSet::default();
        for c in &cmds {
            rules.apply(c).unwrap();
        }
        rules
    }

    #[test]
    fn paper_access_script_parses_to_one_revoke_three_grants() {
        let cmds = parse_admin_script(PAPER_ACCESS_SCRIPT).unwrap();
        assert_eq!(cmds.len(), 4);
        assert_eq!(cmds[0], AdminCommand::RevokeAll);
        let grants: Vec<_> = cmds
            .iter()
            .filter_map(|c| match c {
                AdminCommand::Grant(r) => Some(r),
                _ => None,
            })
            .collect();
        assert_eq!(grants.len(), 3);
        assert!(grants[2].name_scoped(), "third grant is names-scoped");
        assert_eq!(
            grants[2].subject.names,
            NameSet::Set(vec!["12".into(), "13".into(), "14".into()])
        );
    }

    #[test]
    fn lifecycle_script_parses_to_three_commands() {
        let script = "\
CREATE ACTORS OF TYPE Customer WITH NAMES IN (22, 32);
CREATE ACTORS OF TYPE Cart WITH NAMES IN (42, 43);

DROP ACTORS OF TYPE Cart WITH NAMES IN (42);
";
        let cmds = parse_admin_script(script).unwrap();
        assert_eq!(cmds.len(), 3);
        assert_eq!(
            cmds[0],
            AdminCommand::CreateActors {
                type_name: "Customer".into(),
                names: vec!["22".into(), "32".into()],
            }
        );
        assert!(matches!(cmds[2], AdminCommand::DropActors { .. }));
    }

    #[test]
    fn missing_type_name_reports_position() {
        let err = parse_admin_script("CREATE ACTORS OF TYPE;").unwrap_err();
        match err {
            EngineError::Syntax { col, found, .. } => {
                assert_eq!(found, ";");
                assert_eq!(col, 22);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_token_streams_match() {
        for script in [PAPER_ACCESS_SCRIPT] {
            let cmds = parse_admin_script(script).unwrap();
            let printed = pretty_print(&cmds);
            assert_eq!(parse_admin_script(&printed).unwrap(), cmds);
            assert_eq!(
                token_texts(&printed).unwrap(),
                token_texts(script).unwrap()
            );
        }
    }

    #[test]
    fn rule_one_and_two_calls_allow() {
        let rules = paper_rules();
        let cart = Frame::actor("Cart", "add_items", "12");
        assert!(rules.allows(&cart, ("Store_Section", "get_price", "100")));
        assert!(rules.allows(&cart, ("Customer", "get_customer_info", "22")));
        assert!(rules.allows(&cart, ("Group_Manager", "get_fixed_discounts", "5")));
        let cart = Frame::actor("Cart", "checkout", "13");
        assert!(rules.allows(
            &cart,
            ("Store_Section", "get_variable_discount_update_inventory", "200")
        ));
        assert!(rules.allows(&cart, ("Customer", "add_store_visit", "22")));
    }

    #[test]
    fn name_scoped_rule_narrows_sections() {
        let rules = paper_rules();
        let cart12 = Frame::actor("Cart", "add_items", "12");
        assert!(rules.allows(&cart12, ("Store_Section", "get_price", "100")));
        assert!(!rules.allows(&cart12, ("Store_Section", "get_price", "300")));
    }

    #[test]
    fn ungranted_pair_denies() {
        let rules = paper_rules();
        let gm = Frame::actor("Group_Manager", "get_fixed_discounts", "5");
        assert!(!rules.allows(&gm, ("Store_Section", "get_price", "100")));
    }

    #[test]
    fn deny_by_default_after_revoke_all() {
        let mut rules = AccessRuleSet::default();
        rules.apply(&AdminCommand::RevokeAll).unwrap();
        let cart = Frame::actor("Cart", "add_items", "1");
        assert!(!rules.allows(&cart, ("Store_Section", "get_price", "100")));
        // External clients still bypass.
        assert!(rules.allows(&Frame::External, ("Store_Section", "get_price", "100")));
    }

    #[test]
    fn fresh_rule_set_allows_everything() {
        let rules = AccessRuleSet::default();
        let gm = Frame::actor("Group_Manager", "m", "5");
        assert!(rules.allows(&gm, ("Store_Section", "anything", "100")));
    }

    #[test]
    fn all_type_pattern_cannot_constrain() {
        let mut rules = AccessRuleSet::default();
        let bad = AdminCommand::Grant(AccessRule {
            subject: ActorPattern {
                type_name: PatternTerm::All,
                methods: NameSet::Set(vec!["m".into()]),
                names: NameSet::All,
            },
            objects: vec![ActorPattern {
                type_name: PatternTerm::Type("X".into()),
                methods: NameSet::All,
                names: NameSet::All,
            }],
        });
        assert!(matches!(
            rules.apply(&bad),
            Err(EngineError::RuleConflict(_))
        ));
    }

    #[test]
    fn reapplying_script_is_idempotent() {
        let cmds = parse_admin_script(PAPER_ACCESS_SCRIPT).unwrap();
        let mut rules = AccessRuleSet::default();
        for c in &cmds {
            rules.apply(c).unwrap();
        }
        let once = rules.clone();
        for c in &cmds {
            rules.apply(c).unwrap();
        }
        assert_eq!(rules, once);
    }

    #[test]
    fn verify_reports_uncovered_call_edges() {
        let rules = paper_rules();
        let violations = verify_call_graph(
            &rules,
            &[
                (("Cart", "add_items"), ("Store_Section", "get_price")),
                (("Group_Manager", "get_fixed_discounts"), ("Store_Section", "get_price")),
            ],
        );
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("Group_Manager"));
    }

    #[test]
    fn audit_tail_zero_is_empty() {
        let log = AuditLog::new(true);
        log.push(AuditRecord {
            timestamp: 1,
            caller: Frame::External,
            target_type: "T".into(),
            target_method: "m".into(),
            target_name: "1".into(),
            decision: Decision::Allow,
            txn: 1,
        });
        assert!(log.tail(0).is_empty());
        assert_eq!(log.tail(5).len(), 1);
    }
}
