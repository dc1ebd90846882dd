//! Small-graph helpers: named test graphs and exhaustive enumeration of
//! pairwise non-isomorphic (connected) graphs up to 7 vertices, used by the
//! desk-scale verification batteries.

use crate::structure::{Signature, Structure};

/// Compact undirected graph on up to 8 vertices: one bit per unordered pair.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct SmallGraph {
    pub n: usize,
    pub mask: u64,
}

/// Bit index of the unordered pair {i, j}, i < j, within an n-vertex graph.
fn pair_bit(i: usize, j: usize) -> usize {
    debug_assert!(i < j);
    // Pairs ordered (0,1),(0,2),(1,2),(0,3),... — triangular indexing by the
    // larger endpoint keeps indices stable when vertices are appended.
    j * (j - 1) / 2 + i
}

impl SmallGraph {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> SmallGraph {
        assert!(n <= 8);
        let mut mask = 0u64;
        for &(u, v) in edges {
            assert!(u != v && u < n && v < n);
            let (i, j) = if u < v { (u, v) } else { (v, u) };
            mask |= 1 << pair_bit(i, j);
        }
        SmallGraph { n, mask }
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        if u == v {
            return false;
        }
        let (i, j) = if u < v { (u, v) } else { (v, u) };
        self.mask & (1 << pair_bit(i, j)) != 0
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 1..self.n {
            for i in 0..j {
                if self.mask & (1 << pair_bit(i, j)) != 0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = 1u64; // vertex bitset, start from 0
        let mut frontier = vec![0usize];
        while let Some(v) = frontier.pop() {
            for w in 0..self.n {
                if w != v && self.has_edge(v, w) && seen & (1 << w) == 0 {
                    seen |= 1 << w;
                    frontier.push(w);
                }
            }
        }
        seen.count_ones() as usize == self.n
    }

    /// Edge mask after relabeling vertices by `perm` (vertex v becomes
    /// perm[v]).
    fn relabel(&self, perm: &[usize]) -> u64 {
        let mut out = 0u64;
        for j in 1..self.n {
            for i in 0..j {
                if self.mask & (1 << pair_bit(i, j)) != 0 {
                    let (a, b) = (perm[i], perm[j]);
                    let (a, b) = if a < b { (a, b) } else { (b, a) };
                    out |= 1 << pair_bit(a, b);
                }
            }
        }
        out
    }

    /// Canonical form: the minimum edge mask over all vertex relabelings.
    pub fn canon_mask(&self) -> u64 {
        let mut best = self.mask;
        let mut perm: Vec<usize> = (0..self.n).collect();
        // Heap's algorithm over all n! permutations; n ≤ 7 keeps this cheap.
        let mut c = vec![0usize; self.n];
        best = best.min(self.relabel(&perm));
        let mut i = 0;
        while i < self.n {
            if c[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(c[i], i);
                }
                best = best.min(self.relabel(&perm));
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        best
    }

    /// Converts to a one-relation structure with both edge directions.
    pub fn to_structure(&self) -> Structure {
        let mut s = Structure::new(Signature::graph(), self.n);
        for (u, v) in self.edges() {
            s.add_edge("E", u, v).unwrap();
        }
        s
    }
}

/// All pairwise non-isomorphic graphs on exactly n vertices (n ≤ 7), by
/// incremental vertex extension with canonical-form deduplication.
pub fn all_graphs(n: usize) -> Vec<SmallGraph> {
    assert!(n <= 7, "enumeration is sized for at most 7 vertices");
    if n == 0 {
        return vec![SmallGraph { n: 0, mask: 0 }];
    }
    let mut current = vec![SmallGraph { n: 1, mask: 0 }];
    for k in 2..=n {
        let mut seen = std::collections::HashSet::new();
        let mut next = Vec::new();
        for g in &current {
            // Attach a new vertex k−1 with every possible neighborhood.
            for nbrs in 0..(1u64 << (k - 1)) {
                let mut mask = g.mask;
                for i in 0..k - 1 {
                    if nbrs & (1 << i) != 0 {
                        mask |= 1 << pair_bit(i, k - 1);
                    }
                }
                let cand = SmallGraph { n: k, mask };
                if seen.insert(cand.canon_mask()) {
                    next.push(cand);
                }
            }
        }
        current = next;
    }
    current.sort();
    current
}

/// All pairwise non-isomorphic connected graphs on exactly n vertices.
pub fn connected_graphs(n: usize) -> Vec<SmallGraph> {
    all_graphs(n).into_iter().filter(|g| g.is_connected()).collect()
}

// ---------------------------------------------------------------------------
// Named graphs
// ---------------------------------------------------------------------------

/// Graph structure from an explicit edge list (no size limit).
pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Structure {
    let mut s = Structure::new(Signature::graph(), n);
    for &(u, v) in edges {
        s.add_edge("E", u, v).unwrap();
    }
    s
}

/// Path on n vertices: 0-1-…-(n−1).
pub fn path(n: usize) -> Structure {
    let edges: Vec<(usize, usize)> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
    from_edges(n, &edges)
}

/// Cycle on n ≥ 3 vertices.
pub fn cycle(n: usize) -> Structure {
    assert!(n >= 3);
    let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    edges.push((n - 1, 0));
    from_edges(n, &edges)
}

/// Complete graph on n vertices.
pub fn complete(n: usize) -> Structure {
    let mut edges = Vec::new();
    for j in 1..n {
        for i in 0..j {
            edges.push((i, j));
        }
    }
    from_edges(n, &edges)
}

/// Edgeless graph on n vertices.
pub fn edgeless(n: usize) -> Structure {
    from_edges(n, &[])
}

/// The paw: a triangle 0-1-2 with a pendant vertex 3 attached to 2.
pub fn paw() -> Structure {
    SmallGraph::new(4, &[(0, 1), (1, 2), (0, 2), (2, 3)]).to_structure()
}

/// The wheel on a 4-cycle: outer cycle 0-1-2-3 plus hub 4 joined to all.
pub fn wheel4() -> Structure {
    SmallGraph::new(5, &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4), (2, 4), (3, 4)])
        .to_structure()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_counts_match_oeis() {
        // Non-isomorphic graphs on n vertices: 1, 2, 4, 11, 34, 156, 1044.
        let all: Vec<usize> = (1..=7).map(|n| all_graphs(n).len()).collect();
        assert_eq!(all, vec![1, 2, 4, 11, 34, 156, 1044]);
        // Connected: 1, 1, 2, 6, 21, 112, 853.
        let conn: Vec<usize> = (1..=7).map(|n| connected_graphs(n).len()).collect();
        assert_eq!(conn, vec![1, 1, 2, 6, 21, 112, 853]);
    }

    #[test]
    fn enumerated_graphs_are_pairwise_non_isomorphic_at_5() {
        use crate::structure::is_isomorphic;
        let graphs = connected_graphs(5);
        for (i, a) in graphs.iter().enumerate() {
            for b in graphs.iter().skip(i + 1) {
                assert!(!is_isomorphic(&a.to_structure(), &b.to_structure(), 10).unwrap());
            }
        }
    }

    #[test]
    fn named_graph_shapes() {
        assert_eq!(cycle(5).relations["E"].len(), 10);
        assert_eq!(complete(4).relations["E"].len(), 12);
        assert_eq!(paw().relations["E"].len(), 8);
        assert_eq!(wheel4().relations["E"].len(), 16);
        assert!(SmallGraph::new(4, &[(0, 1), (2, 3)]).is_connected() == false);
        assert!(SmallGraph::new(4, &[(0, 1), (1, 2), (2, 3)]).is_connected());
    }
}
