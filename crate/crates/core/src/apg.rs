//! Acyclic precedence graph over reactions.
//!
//! Reaction `a` precedes `b` when `a` writes a port that reaches an input
//! `b` depends on through zero-delay connections, or when both belong to the
//! same reactor and `a` is declared first. Delayed connections contribute no
//! edge. The scheduler executes reactions of one tag level by level, where a
//! reaction's level is the length of the longest chain of predecessors.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::{GraphError, ReactionId, Topology, Trigger};

#[derive(Clone, Debug, Default)]
pub struct Apg {
    successors: Vec<Vec<ReactionId>>,
    levels: Vec<u32>,
}

impl Apg {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Direct edges, sorted.
    pub fn edges(&self) -> impl Iterator<Item = (ReactionId, ReactionId)> + '_ {
        self.successors
            .iter()
            .enumerate()
            .flat_map(|(from, succ)| succ.iter().map(move |&to| (ReactionId(from as u32), to)))
    }

    pub fn edge_count(&self) -> usize {
        self.successors.iter().map(Vec::len).sum()
    }

    pub fn level(&self, reaction: ReactionId) -> u32 {
        self.levels[reaction.index()]
    }

    /// Whether `a` transitively precedes `b`.
    pub fn precedes(&self, a: ReactionId, b: ReactionId) -> bool {
        let mut seen = vec![false; self.len()];
        let mut stack = vec![a];
        while let Some(r) = stack.pop() {
            for &next in &self.successors[r.index()] {
                if next == b {
                    return true;
                }
                if !seen[next.index()] {
                    seen[next.index()] = true;
                    stack.push(next);
                }
            }
        }
        false
    }
}

/// Derives the precedence relation of a topology.
///
/// Fails with [`GraphError::CyclicDependency`] listing the reactions of one
/// zero-delay cycle.
pub fn build_apg(topology: &Topology) -> Result<Apg, GraphError> {
    let n = topology.reactions.len();
    let mut successors: Vec<BTreeSet<ReactionId>> = vec![BTreeSet::new(); n];

    for reactor in &topology.reactors {
        for pair in reactor.reactions.windows(2) {
            successors[pair[0].index()].insert(pair[1]);
        }
    }

    // Readers of each input port.
    let mut readers: Vec<Vec<ReactionId>> = vec![Vec::new(); topology.ports.len()];
    for (i, reaction) in topology.reactions.iter().enumerate() {
        let id = ReactionId(i as u32);
        let triggered = reaction.triggers.iter().filter_map(|t| match t {
            Trigger::Port(p) => Some(*p),
            _ => None,
        });
        for port in triggered.chain(reaction.sources.iter().copied()) {
            readers[port.index()].push(id);
        }
    }

    for (i, reaction) in topology.reactions.iter().enumerate() {
        for &out in &reaction.port_effects {
            for conn in topology.connections.iter().filter(|c| c.from == out) {
                if conn.delay.is_some() {
                    continue;
                }
                for &reader in &readers[conn.to.index()] {
                    successors[i].insert(reader);
                }
            }
        }
    }

    let successors: Vec<Vec<ReactionId>> = successors
        .into_iter()
        .map(|s| s.into_iter().collect())
        .collect();

    if let Some(cycle) = find_cycle(&successors) {
        return Err(GraphError::CyclicDependency(cycle));
    }

    let levels = longest_path_levels(&successors);
    Ok(Apg { successors, levels })
}

fn find_cycle(successors: &[Vec<ReactionId>]) -> Option<Vec<ReactionId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Unvisited,
        OnStack,
        Done,
    }
    let n = successors.len();
    let mut mark = vec![Mark::Unvisited; n];
    for root in 0..n {
        if mark[root] != Mark::Unvisited {
            continue;
        }
        // Iterative DFS keeping the current path for cycle reporting.
        let mut path: Vec<(usize, usize)> = vec![(root, 0)];
        mark[root] = Mark::OnStack;
        while let Some(&mut (node, ref mut next)) = path.last_mut() {
            if let Some(&succ) = successors[node].get(*next) {
                *next += 1;
                match mark[succ.index()] {
                    Mark::Unvisited => {
                        mark[succ.index()] = Mark::OnStack;
                        path.push((succ.index(), 0));
                    }
                    Mark::OnStack => {
                        let start = path
                            .iter()
                            .position(|&(p, _)| p == succ.index())
                            .expect("on-stack node is on the path");
                        return Some(
                            path[start..]
                                .iter()
                                .map(|&(p, _)| ReactionId(p as u32))
                                .collect(),
                        );
                    }
                    Mark::Done => {}
                }
            } else {
                mark[node] = Mark::Done;
                path.pop();
            }
        }
    }
    None
}

fn longest_path_levels(successors: &[Vec<ReactionId>]) -> Vec<u32> {
    let n = successors.len();
    let mut indegree = vec![0usize; n];
    for succ in successors {
        for s in succ {
            indegree[s.index()] += 1;
        }
    }
    let mut levels = vec![0u32; n];
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    while let Some(node) = ready.pop() {
        for s in &successors[node] {
            let s = s.index();
            levels[s] = levels[s].max(levels[node] + 1);
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.push(s);
            }
        }
    }
    levels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;

    /// Reference closure by repeated squaring of the adjacency relation.
    fn brute_force_closure(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
        let mut reach = vec![vec![false; n]; n];
        for &(a, b) in edges {
            reach[a][b] = true;
        }
        for _ in 0..n {
            for a in 0..n {
                for b in 0..n {
                    if !reach[a][b] {
                        reach[a][b] = (0..n).any(|k| reach[a][k] && reach[k][b]);
                    }
                }
            }
        }
        reach
    }

    #[test]
    fn single_reaction_has_no_edges() {
        let mut g = GraphBuilder::new();
        let a = g.add_reactor("a", ());
        g.reaction(a, "r").on_startup().body(|_, _| {});
        let apg = build_apg(g.topology()).unwrap();
        assert_eq!(apg.edge_count(), 0);
        assert_eq!(apg.len(), 1);
    }

    #[test]
    fn chain_matches_brute_force_closure() {
        let mut g = GraphBuilder::new();
        let a = g.add_reactor("a", ());
        let b = g.add_reactor("b", ());
        let c = g.add_reactor("c", ());
        let a_out = g.output(a, "out");
        let b_in = g.input(b, "in");
        let b_out = g.output(b, "out");
        let c_in = g.input(c, "in");
        let ra = g
            .reaction(a, "r")
            .on_startup()
            .writes(a_out)
            .body(|_, _| {});
        let rb = g
            .reaction(b, "r")
            .triggered_by(b_in)
            .writes(b_out)
            .body(|_, _| {});
        let rc = g.reaction(c, "r").triggered_by(c_in).body(|_, _| {});
        g.connect(a_out, b_in).unwrap();
        g.connect(b_out, c_in).unwrap();
        let apg = build_apg(g.topology()).unwrap();

        let edges: Vec<(usize, usize)> = apg.edges().map(|(x, y)| (x.index(), y.index())).collect();
        let closure = brute_force_closure(3, &edges);
        for x in [ra, rb, rc] {
            for y in [ra, rb, rc] {
                assert_eq!(apg.precedes(x, y), closure[x.index()][y.index()]);
            }
        }
        assert!(apg.precedes(ra, rb) && apg.precedes(rb, rc) && apg.precedes(ra, rc));
        assert!(!apg.precedes(rc, ra));
        assert_eq!((apg.level(ra), apg.level(rb), apg.level(rc)), (0, 1, 2));
    }

    #[test]
    fn zero_delay_cycle_is_rejected() {
        let mut g = GraphBuilder::new();
        let a = g.add_reactor("a", ());
        let b = g.add_reactor("b", ());
        let a_in = g.input(a, "in");
        let a_out = g.output(a, "out");
        let b_in = g.input(b, "in");
        let b_out = g.output(b, "out");
        let ra = g
            .reaction(a, "r")
            .triggered_by(a_in)
            .writes(a_out)
            .body(|_, _| {});
        let rb = g
            .reaction(b, "r")
            .triggered_by(b_in)
            .writes(b_out)
            .body(|_, _| {});
        g.connect(a_out, b_in).unwrap();
        g.connect(b_out, a_in).unwrap();
        match build_apg(g.topology()) {
            Err(GraphError::CyclicDependency(cycle)) => {
                assert_eq!(cycle.len(), 2);
                assert!(cycle.contains(&ra) && cycle.contains(&rb));
            }
            other => panic!("expected a cycle, got {other:?}"),
        }
        assert!(g.build().is_err());
    }

    #[test]
    fn delayed_connection_breaks_cycle() {
        let mut g = GraphBuilder::new();
        let a = g.add_reactor("a", ());
        let b = g.add_reactor("b", ());
        let a_in = g.input(a, "in");
        let a_out = g.output(a, "out");
        let b_in = g.input(b, "in");
        let b_out = g.output(b, "out");
        g.reaction(a, "r")
            .triggered_by(a_in)
            .writes(a_out)
            .body(|_, _| {});
        g.reaction(b, "r")
            .triggered_by(b_in)
            .writes(b_out)
            .body(|_, _| {});
        g.connect(a_out, b_in).unwrap();
        g.connect_delayed(b_out, a_in, crate::Duration::from_millis(1))
            .unwrap();
        let apg = build_apg(g.topology()).unwrap();
        assert_eq!(apg.edge_count(), 1);
    }

    #[test]
    fn same_reactor_reactions_follow_declaration_order() {
        let mut g = GraphBuilder::new();
        let a = g.add_reactor("a", ());
        let r0 = g.reaction(a, "first").on_startup().body(|_, _| {});
        let r1 = g.reaction(a, "second").on_startup().body(|_, _| {});
        let r2 = g.reaction(a, "third").on_startup().body(|_, _| {});
        let apg = build_apg(g.topology()).unwrap();
        assert!(apg.precedes(r0, r1) && apg.precedes(r1, r2) && apg.precedes(r0, r2));
        assert!(!apg.precedes(r2, r0));
    }
}
