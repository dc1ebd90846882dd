//! Bundled example programs and a reference oracle for the vertex-deletion
//! decision problem they solve.

use crate::structure::Structure;

/// Witnessed-choice program deciding whether a graph can be emptied by
/// repeatedly deleting a vertex that is universal or isolated in the
/// remaining graph.
pub const THRESHOLD: &str = include_str!("../programs/threshold.bgs");

/// Reference oracle for [`THRESHOLD`]: greedily delete any universal or
/// isolated vertex of the remaining graph until none qualifies; the answer
/// is whether the graph is exhausted. Deleting a universal (isolated) vertex
/// keeps the other universal (isolated) vertices deletable, so the outcome
/// does not depend on the deletion order.
pub fn threshold_oracle(g: &Structure) -> bool {
    let n = g.universe_size;
    let mut alive: Vec<bool> = vec![true; n];
    let mut remaining = n;
    loop {
        let mut deleted_one = false;
        for v in 0..n {
            if !alive[v] {
                continue;
            }
            let mut universal = true;
            let mut isolated = true;
            for w in 0..n {
                if w == v || !alive[w] {
                    continue;
                }
                if g.has_tuple("E", &[v, w]) {
                    isolated = false;
                } else {
                    universal = false;
                }
            }
            if universal || isolated {
                alive[v] = false;
                remaining -= 1;
                deleted_one = true;
                break;
            }
        }
        if !deleted_one {
            return remaining == 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs;

    #[test]
    fn oracle_on_named_graphs() {
        assert!(threshold_oracle(&graphs::complete(3)));
        assert!(threshold_oracle(&graphs::complete(5)));
        assert!(threshold_oracle(&graphs::edgeless(4)));
        // Star: universal center, then isolated leaves.
        assert!(threshold_oracle(&graphs::from_edges(4, &[(0, 1), (0, 2), (0, 3)])));
        // Paths and cycles of length >= 4 have no universal or isolated vertex.
        assert!(!threshold_oracle(&graphs::path(4)));
        assert!(!threshold_oracle(&graphs::cycle(5)));
        // Wheel: hub is universal, the rest is a 4-cycle, which is stuck.
        assert!(!threshold_oracle(&graphs::wheel4()));
    }
}
