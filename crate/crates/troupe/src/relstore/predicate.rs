use super::Schema;
use crate::error::Result;
use crate::value::Value;
use std::cmp::Ordering;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

/// Query predicate over one relation's columns. Built programmatically;
/// the scan planner uses `Eq`/`In` terms on indexed columns for point
/// lookups and falls back to a full scan otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    True,
    Cmp(String, CmpOp, Value),
    In(String, Vec<Value>),
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
    Not(Box<Predicate>),
}

impl Predicate {
    pub fn eq(col: &str, v: Value) -> Predicate {
        Predicate::Cmp(col.to_string(), CmpOp::Eq, v)
    }

    pub fn in_list(col: &str, vs: Vec<Value>) -> Predicate {
        Predicate::In(col.to_string(), vs)
    }

    pub fn and(ps: Vec<Predicate>) -> Predicate {
        Predicate::And(ps)
    }

    pub(crate) fn compile(&self, schema: &Schema) -> Result<CompiledPredicate> {
        Ok(CompiledPredicate(self.compile_node(schema)?))
    }

    fn compile_node(&self, schema: &Schema) -> Result<Node> {
        Ok(match self {
            Predicate::True => Node::True,
            Predicate::Cmp(col, op, v) => Node::Cmp(schema.col_index_or_err(col)?, *op, v.clone()),
            Predicate::In(col, vs) => Node::In(schema.col_index_or_err(col)?, vs.clone()),
            Predicate::And(ps) => Node::And(
                ps.iter()
                    .map(|p| p.compile_node(schema))
                    .collect::<Result<_>>()?,
            ),
            Predicate::Or(ps) => Node::Or(
                ps.iter()
                    .map(|p| p.compile_node(schema))
                    .collect::<Result<_>>()?,
            ),
            Predicate::Not(p) => Node::Not(Box::new(p.compile_node(schema)?)),
        })
    }

    /// Point-lookup plan: (indexed column, key list) when the predicate
    /// pins an indexed column to a finite key set. Conjunctions use the
    /// first indexable term; the full predicate still runs as residual.
    pub(crate) fn index_plan(&self, schema: &Schema, indexed: &[u16]) -> Option<(u16, Vec<i64>)> {
        match self {
            Predicate::Cmp(col, CmpOp::Eq, v) => {
                let c = schema.col_index(col)? as u16;
                if indexed.contains(&c) {
                    return Some((c, vec![v.index_key()?]));
                }
                None
            }
            Predicate::In(col, vs) => {
                let c = schema.col_index(col)? as u16;
                if indexed.contains(&c) {
                    let keys: Option<Vec<i64>> = vs.iter().map(|v| v.index_key()).collect();
                    return Some((c, keys?));
                }
                None
            }
            Predicate::And(ps) => ps.iter().find_map(|p| p.index_plan(schema, indexed)),
            _ => None,
        }
    }
}

pub(crate) struct CompiledPredicate(Node);

enum Node {
    True,
    Cmp(usize, CmpOp, Value),
    In(usize, Vec<Value>),
    And(Vec<Node>),
    Or(Vec<Node>),
    Not(Box<Node>),
}

impl CompiledPredicate {
    pub fn eval(&self, tuple: &[Value]) -> bool {
        eval_node(&self.0, tuple)
    }
}

fn eval_node(node: &Node, tuple: &[Value]) -> bool {
    match node {
        Node::True => true,
        Node::Cmp(i, op, v) => match tuple[*i].cmp_scalar(v) {
            Some(ord) => match op {
                CmpOp::Eq => ord == Ordering::Equal,
                CmpOp::Ne => ord != Ordering::Equal,
                CmpOp::Lt => ord == Ordering::Less,
                CmpOp::Le => ord != Ordering::Greater,
                CmpOp::Gt => ord == Ordering::Greater,
                CmpOp::Ge => ord != Ordering::Less,
            },
            None => false,
        },
        Node::In(i, vs) => vs.iter().any(|v| tuple[*i] == *v),
        Node::And(ns) => ns.iter().all(|n| eval_node(n, tuple)),
        Node::Or(ns) => ns.iter().any(|n| eval_node(n, tuple)),
        Node::Not(n) => !eval_node(n, tuple),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::ColumnType;

    fn schema() -> Schema {
        Schema::new("t", vec![("a", ColumnType::Int), ("b", ColumnType::Float)])
            .unwrap()
            .with_index("a")
    }

    #[test]
    fn unknown_column_errors_at_compile() {
        let s = schema();
        assert!(Predicate::eq("missing", Value::Int(1)).compile(&s).is_err());
    }

    #[test]
    fn index_plan_covers_eq_in_and_conjunction() {
        let s = schema();
        let p = Predicate::eq("a", Value::Int(5));
        assert_eq!(p.index_plan(&s, &[0]), Some((0, vec![5])));
        let p = Predicate::in_list("a", vec![Value::Int(1), Value::Int(2)]);
        assert_eq!(p.index_plan(&s, &[0]), Some((0, vec![1, 2])));
        let p = Predicate::and(vec![
            Predicate::Cmp("b".into(), CmpOp::Gt, Value::Float(0.0)),
            Predicate::eq("a", Value::Int(7)),
        ]);
        assert_eq!(p.index_plan(&s, &[0]), Some((0, vec![7])));
        let p = Predicate::Cmp("b".into(), CmpOp::Eq, Value::Float(0.0));
        assert_eq!(p.index_plan(&s, &[0]), None);
    }

    #[test]
    fn eval_matches_semantics() {
        let s = schema();
        let row = vec![Value::Int(5), Value::Float(2.5)];
        let p = Predicate::and(vec![
            Predicate::eq("a", Value::Int(5)),
            Predicate::Cmp("b".into(), CmpOp::Le, Value::Float(2.5)),
        ])
        .compile(&s)
        .unwrap();
        assert!(p.eval(&row));
        let p = Predicate::Not(Box::new(Predicate::eq("a", Value::Int(5))))
            .compile(&s)
            .unwrap();
        assert!(!p.eval(&row));
    }
}
