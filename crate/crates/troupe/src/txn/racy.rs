//! Racy-sibling detection. Two sub-invocations of one transaction with no
//! directed path between them (through spawn edges, program order, and
//! future-synchronization edges) must not have conflicting footprints;
//! otherwise the whole transaction aborts.

use super::{GEvent, Graph, NodeId};

/// Witness of a conflict between two unordered nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RacyWitness {
    pub first: NodeId,
    pub second: NodeId,
    pub conflict: String,
}

/// Event-level happens-before DAG expanded from the invocation graph.
/// Vertices are per-node start/end markers plus one vertex per recorded
/// event; `node X precedes node Y` iff end(X) reaches start(Y).
struct EventDag {
    starts: Vec<usize>,
    ends: Vec<usize>,
    adj: Vec<Vec<usize>>,
}

impl EventDag {
    fn build(graph: &Graph) -> EventDag {
        let n = graph.nodes.len();
        let mut starts = vec![0usize; n];
        let mut ends = vec![0usize; n];
        let mut next = 0usize;
        let mut event_base = vec![0usize; n];
        for (i, node) in graph.nodes.iter().enumerate() {
            starts[i] = next;
            next += 1;
            event_base[i] = next;
            next += node.events.len();
            ends[i] = next;
            next += 1;
        }
        let mut adj = vec![Vec::new(); next];
        for (i, node) in graph.nodes.iter().enumerate() {
            // start -> e0 -> e1 -> ... -> end
            let mut prev = starts[i];
            for (k, ev) in node.events.iter().enumerate() {
                let v = event_base[i] + k;
                adj[prev].push(v);
                prev = v;
                match ev {
                    GEvent::Spawn(c) => adj[v].push(starts[*c as usize]),
                    GEvent::Sync(c) => adj[ends[*c as usize]].push(v),
                }
            }
            adj[prev].push(ends[i]);
            // a node completes only after all children complete
            for c in &node.children {
                adj[ends[*c as usize]].push(ends[i]);
            }
        }
        EventDag { starts, ends, adj }
    }

    fn reaches(&self, from: usize, to: usize) -> bool {
        if from == to {
            return true;
        }
        let mut seen = vec![false; self.adj.len()];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(v) = stack.pop() {
            for &w in &self.adj[v] {
                if w == to {
                    return true;
                }
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        false
    }

    fn ordered(&self, a: NodeId, b: NodeId) -> bool {
        self.reaches(self.ends[a as usize], self.starts[b as usize])
            || self.reaches(self.ends[b as usize], self.starts[a as usize])
    }
}

/// Pure check over a completed invocation graph.
pub(crate) fn detect(graph: &Graph) -> Option<RacyWitness> {
    let n = graph.nodes.len();
    let interesting: Vec<NodeId> = (0..n as NodeId)
        .filter(|&i| {
            let fp = &graph.nodes[i as usize].footprint;
            !(fp.rec_reads.is_empty()
                && fp.rec_writes.is_empty()
                && fp.scan_rels.is_empty()
                && fp.struct_rels.is_empty())
        })
        .collect();
    if interesting.len() < 2 {
        return None;
    }
    let dag = EventDag::build(graph);
    for (i, &a) in interesting.iter().enumerate() {
        for &b in &interesting[i + 1..] {
            let conflict = graph.nodes[a as usize]
                .footprint
                .conflicts_with(&graph.nodes[b as usize].footprint);
            if let Some(conflict) = conflict {
                if !dag.ordered(a, b) {
                    return Some(RacyWitness {
                        first: a,
                        second: b,
                        conflict,
                    });
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::security::Frame;
    use crate::txn::{RootTxn, TxnOptions, ROOT_NODE};

    fn frame() -> Frame {
        Frame::External
    }

    #[test]
    fn unsynchronized_conflicting_siblings_detected() {
        let root = RootTxn::new(1, TxnOptions::default());
        let mut g = root.graph.lock();
        let a = g.add_node(ROOT_NODE, frame());
        let b = g.add_node(ROOT_NODE, frame());
        g.nodes[a as usize].footprint.rec_writes.insert((1, 0));
        g.nodes[b as usize].footprint.rec_writes.insert((1, 0));
        let w = detect(&g).expect("conflict");
        assert_eq!((w.first, w.second), (a, b));
    }

    #[test]
    fn sync_edge_orders_siblings() {
        let root = RootTxn::new(1, TxnOptions::default());
        let mut g = root.graph.lock();
        let a = g.add_node(ROOT_NODE, frame());
        // get(a) before spawning b: a -> root event -> b
        g.record_sync(ROOT_NODE, a);
        let b = g.add_node(ROOT_NODE, frame());
        g.nodes[a as usize].footprint.rec_writes.insert((1, 0));
        g.nodes[b as usize].footprint.rec_writes.insert((1, 0));
        assert_eq!(detect(&g), None);
    }

    #[test]
    fn spawn_after_get_is_ordered_but_before_is_not() {
        let root = RootTxn::new(1, TxnOptions::default());
        let mut g = root.graph.lock();
        let a = g.add_node(ROOT_NODE, frame());
        let b = g.add_node(ROOT_NODE, frame()); // spawned before get(a)
        g.record_sync(ROOT_NODE, a);
        g.nodes[a as usize].footprint.rec_writes.insert((1, 0));
        g.nodes[b as usize].footprint.rec_reads.insert((1, 0));
        assert!(detect(&g).is_some(), "b raced with a");
    }

    #[test]
    fn disjoint_footprints_never_conflict() {
        let root = RootTxn::new(1, TxnOptions::default());
        let mut g = root.graph.lock();
        let a = g.add_node(ROOT_NODE, frame());
        let b = g.add_node(ROOT_NODE, frame());
        g.nodes[a as usize].footprint.rec_writes.insert((1, 0));
        g.nodes[b as usize].footprint.rec_writes.insert((2, 0));
        assert_eq!(detect(&g), None);
    }

    #[test]
    fn scan_vs_insert_on_same_relation_conflicts() {
        let root = RootTxn::new(1, TxnOptions::default());
        let mut g = root.graph.lock();
        let a = g.add_node(ROOT_NODE, frame());
        let b = g.add_node(ROOT_NODE, frame());
        g.nodes[a as usize].footprint.scan_rels.insert(3);
        g.nodes[b as usize].footprint.struct_rels.insert(3);
        assert!(detect(&g).is_some());
    }

    #[test]
    fn nested_child_ordered_with_later_sibling_through_parent_completion() {
        let root = RootTxn::new(1, TxnOptions::default());
        let mut g = root.graph.lock();
        let a = g.add_node(ROOT_NODE, frame());
        let a_child = g.add_node(a, frame());
        g.record_sync(ROOT_NODE, a); // whole subtree of a precedes later events
        let b = g.add_node(ROOT_NODE, frame());
        g.nodes[a_child as usize].footprint.rec_writes.insert((1, 0));
        g.nodes[b as usize].footprint.rec_writes.insert((1, 0));
        assert_eq!(detect(&g), None);
    }
}
