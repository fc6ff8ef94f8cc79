//! Collision graphs, recollisions and cycle statistics of a collision log.

use super::CollisionLog;

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    /// Returns false when `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSummary {
    /// Connected components, each sorted, ordered by smallest member.
    pub components: Vec<Vec<usize>>,
    /// One edge per pair that collided, at its first collision.
    pub edges: Vec<(usize, usize)>,
    /// Collision count per edge, aligned with `edges`.
    pub multiplicity: Vec<usize>,
    /// Indices of second-or-later collisions of a pair.
    pub recollisions: Vec<usize>,
    /// Indices of events joining two particles that were already connected.
    pub cycle_closing: Vec<usize>,
}

/// Collision graph of the events with `time <= upto`.
pub fn collision_graph(log: &CollisionLog, upto: f64) -> GraphSummary {
    let n = log.n_particles();
    let mut uf = UnionFind::new(n);
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut multiplicity = Vec::new();
    let mut index = std::collections::HashMap::new();
    let mut recollisions = Vec::new();
    let mut cycle_closing = Vec::new();
    for (k, e) in log.events.iter().enumerate().take_while(|(_, e)| e.time <= upto) {
        let key = (e.a.min(e.b), e.a.max(e.b));
        match index.get(&key) {
            Some(&slot) => {
                multiplicity[slot] += 1;
                recollisions.push(k);
            }
            None => {
                index.insert(key, edges.len());
                edges.push(key);
                multiplicity.push(1);
            }
        }
        if !uf.union(e.a, e.b) {
            cycle_closing.push(k);
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    let mut root_min = vec![usize::MAX; n];
    for i in 0..n {
        let r = uf.find(i);
        root_min[r] = root_min[r].min(i);
    }
    for i in 0..n {
        let r = uf.find(i);
        groups.entry(root_min[r]).or_default().push(i);
    }
    GraphSummary { components: groups.into_values().collect(), edges, multiplicity, recollisions, cycle_closing }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleCensus {
    pub cycle_count: usize,
    pub first_cycle_time: Option<f64>,
    /// Event index of each cycle-closing collision.
    pub cycle_events: Vec<usize>,
    /// Whether the component closed by each cycle contains a tagged particle.
    pub tagged_involvement: Vec<bool>,
}

/// Count collisions between particles already in one connected component of
/// the forward collision graph.
pub fn cycle_census(log: &CollisionLog) -> CycleCensus {
    let n = log.n_particles();
    let mut uf = UnionFind::new(n);
    let mut has_tag: Vec<bool> = log.tags.iter().map(|&t| t == 1).collect();
    let mut out = CycleCensus { cycle_count: 0, first_cycle_time: None, cycle_events: Vec::new(), tagged_involvement: Vec::new() };
    for (k, e) in log.events.iter().enumerate() {
        let (ra, rb) = (uf.find(e.a), uf.find(e.b));
        if ra == rb {
            out.cycle_count += 1;
            out.first_cycle_time.get_or_insert(e.time);
            out.cycle_events.push(k);
            out.tagged_involvement.push(has_tag[ra]);
        } else {
            let t = has_tag[ra] || has_tag[rb];
            uf.union(ra, rb);
            let r = uf.find(ra);
            has_tag[r] = t;
        }
    }
    out
}

/// Whether the backward dynamics cluster of `particle` on `[t_start, upto]`
/// contains a cycle. The cluster is grown from `upto` backwards: a collision
/// with one partner inside adds the other; a collision with both partners
/// already inside is a cycle. `None` if the particle never collided.
pub fn backward_cluster_has_cycle(log: &CollisionLog, particle: usize, upto: f64, inside: &mut Vec<bool>) -> Option<bool> {
    inside.clear();
    inside.resize(log.n_particles(), false);
    inside[particle] = true;
    let mut grown = false;
    let end = log.events.partition_point(|e| e.time <= upto);
    for e in log.events[..end].iter().rev() {
        match (inside[e.a], inside[e.b]) {
            (true, true) => return Some(true),
            (true, false) => {
                inside[e.b] = true;
                grown = true;
            }
            (false, true) => {
                inside[e.a] = true;
                grown = true;
            }
            (false, false) => {}
        }
    }
    if grown {
        Some(false)
    } else {
        None
    }
}

/// Per-particle cycle statistics over `[t_start, upto]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CycleFrequency {
    pub with_collision: usize,
    pub with_cycle: usize,
}

impl CycleFrequency {
    pub fn fraction(&self) -> f64 {
        if self.with_collision == 0 {
            0.0
        } else {
            self.with_cycle as f64 / self.with_collision as f64
        }
    }
}

pub fn cycle_frequency(log: &CollisionLog, upto: f64) -> CycleFrequency {
    let mut buf = Vec::new();
    let mut out = CycleFrequency::default();
    for i in 0..log.n_particles() {
        match backward_cluster_has_cycle(log, i, upto, &mut buf) {
            Some(true) => {
                out.with_collision += 1;
                out.with_cycle += 1;
            }
            Some(false) => out.with_collision += 1,
            None => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gas_sim::CollisionEvent;

    fn log(pairs: &[(usize, usize)], n: usize) -> CollisionLog {
        let z = [0.0; 3];
        CollisionLog {
            events: pairs
                .iter()
                .enumerate()
                .map(|(k, &(a, b))| CollisionEvent { time: k as f64 + 1.0, a, b, omega: [1.0, 0.0, 0.0], pre_a: z, pre_b: z, post_a: z, post_b: z })
                .collect(),
            tags: vec![0; n],
            t_start: 0.0,
            t_end: 10.0,
            ties: 0,
        }
    }

    #[test]
    fn graph_examples() {
        let g = collision_graph(&log(&[], 3), 10.0);
        assert_eq!(g.components, vec![vec![0], vec![1], vec![2]]);
        let g = collision_graph(&log(&[(0, 1), (1, 2)], 3), 10.0);
        assert_eq!(g.components, vec![vec![0, 1, 2]]);
        assert_eq!(g.edges.len(), 2);
        assert!(g.recollisions.is_empty());
        let g = collision_graph(&log(&[(0, 1), (1, 2), (2, 0)], 3), 10.0);
        assert_eq!(g.cycle_closing, vec![2]);
        let g = collision_graph(&log(&[(0, 1), (1, 0)], 2), 10.0);
        assert_eq!(g.recollisions, vec![1]);
        assert_eq!(g.multiplicity, vec![2]);
        let g = collision_graph(&log(&[(0, 1), (1, 2), (2, 0)], 3), 2.5);
        assert!(g.cycle_closing.is_empty());
    }

    #[test]
    fn census_examples() {
        assert_eq!(cycle_census(&log(&[(0, 1), (2, 3), (1, 2)], 4)).cycle_count, 0);
        let mut l = log(&[(0, 1), (0, 1)], 3);
        l.tags[1] = 1;
        let c = cycle_census(&l);
        assert_eq!(c.cycle_count, 1);
        assert_eq!(c.first_cycle_time, Some(2.0));
        assert_eq!(c.tagged_involvement, vec![true]);
    }

    #[test]
    fn backward_clusters() {
        // 0-1 at t=1, 1-2 at t=2, 2-0 at t=3: particle 0's backward cluster
        // gains 2 at t=3, 1 at t=2, and closes a cycle at t=1.
        let l = log(&[(0, 1), (1, 2), (2, 0)], 4);
        let mut buf = Vec::new();
        assert_eq!(backward_cluster_has_cycle(&l, 0, 10.0, &mut buf), Some(true));
        assert_eq!(backward_cluster_has_cycle(&l, 3, 10.0, &mut buf), None);
        assert_eq!(backward_cluster_has_cycle(&l, 0, 2.5, &mut buf), Some(false));
        let f = cycle_frequency(&l, 10.0);
        assert_eq!(f.with_collision, 3);
        assert_eq!(f.with_cycle, 2);
        // Causality: 0-1 at t=1 then 2-3 at t=2 never reach each other.
        let l = log(&[(1, 2), (0, 1), (2, 3)], 4);
        assert_eq!(backward_cluster_has_cycle(&l, 3, 10.0, &mut buf), Some(false));
    }
}
