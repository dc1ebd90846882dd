//! Cai–Fürer–Immerman instances over small base graphs: the gadget
//! construction, the twist-parity invariant, an orbit chooser exploiting the
//! structure of the gadgets, and a parity decision procedure built on
//! canonization with witnessed choice.
//!
//! Over a connected base graph `G` with an edge labeling `g : E(G) → F₂`,
//! the derived graph has, per base vertex, a gadget holding one vertex for
//! every even-weight bit vector over the incident edges, and per directed
//! base edge a pair of edge vertices. Exactly two such graphs exist per base
//! up to isomorphism, distinguished by the parity of `g` — flipping labels
//! along a cycle never changes the isomorphism class, flipping a single
//! label always does.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::canonize::{self, CanonError, OrbitChooser};
use crate::eval::ChoicePolicy;
use crate::structure::{self, Signature, StructError, Structure};

#[derive(Debug, Error)]
pub enum CfiError {
    #[error("structure error: {0}")]
    Struct(#[from] StructError),
    #[error("canonization error: {0}")]
    Canon(#[from] CanonError),
    #[error("invalid base graph: {0}")]
    Base(String),
    #[error("chooser failure: {0}")]
    Chooser(String),
}

// ---------------------------------------------------------------------------
// Base graphs
// ---------------------------------------------------------------------------

/// A connected simple graph serving as the skeleton of a gadget
/// construction, with an optional color preorder on its vertices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaseGraph {
    pub n: usize,
    /// Undirected edges, stored with the lower endpoint first.
    pub edges: BTreeSet<(usize, usize)>,
    /// Color classes in order, or `None` for an uncolored base.
    pub colors: Option<Vec<Vec<usize>>>,
}

impl BaseGraph {
    pub fn new(
        n: usize,
        edges: &[(usize, usize)],
        colors: Option<Vec<Vec<usize>>>,
    ) -> Result<BaseGraph, CfiError> {
        if n < 2 {
            return Err(CfiError::Base("need at least two vertices".into()));
        }
        let mut set = BTreeSet::new();
        for &(u, v) in edges {
            if u == v {
                return Err(CfiError::Base(format!("loop at vertex {u}")));
            }
            if u >= n || v >= n {
                return Err(CfiError::Base(format!("edge ({u},{v}) exceeds the vertex range")));
            }
            set.insert((u.min(v), u.max(v)));
        }
        let base = BaseGraph { n, edges: set, colors };
        if !base.is_connected() {
            return Err(CfiError::Base("base graph must be connected".into()));
        }
        if let Some(classes) = &base.colors {
            let mut seen = vec![false; n];
            for &v in classes.iter().flatten() {
                if v >= n || seen[v] {
                    return Err(CfiError::Base("colors must partition the vertices".into()));
                }
                seen[v] = true;
            }
            if !seen.iter().all(|&s| s) {
                return Err(CfiError::Base("colors must partition the vertices".into()));
            }
        }
        Ok(base)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u.min(v), u.max(v)))
    }

    /// Neighbors of `u` in ascending order.
    pub fn neighbors(&self, u: usize) -> Vec<usize> {
        (0..self.n).filter(|&v| v != u && self.has_edge(u, v)).collect()
    }

    pub fn degree(&self, u: usize) -> usize {
        self.neighbors(u).len()
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    /// The base graph as a colored graph structure (for the orbit oracles).
    pub fn to_structure(&self) -> Structure {
        let mut s = Structure::new(Signature::graph(), self.n);
        for &(u, v) in &self.edges {
            s.add_edge("E", u, v).expect("edges validated on construction");
        }
        if let Some(classes) = &self.colors {
            s.set_colors(classes.clone()).expect("colors validated on construction");
        }
        s
    }
}

/// Cycle on `n ≥ 3` vertices as a base graph.
pub fn cycle_base(n: usize) -> BaseGraph {
    assert!(n >= 3);
    let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    edges.push((n - 1, 0));
    BaseGraph::new(n, &edges, None).expect("cycles are connected")
}

/// Complete graph on `n ≥ 2` vertices as a base graph.
pub fn complete_base(n: usize) -> BaseGraph {
    let mut edges = Vec::new();
    for j in 1..n {
        for i in 0..j {
            edges.push((i, j));
        }
    }
    BaseGraph::new(n, &edges, None).expect("complete graphs are connected")
}

/// The paw — a triangle with a pendant vertex — as a base graph.
pub fn paw_base() -> BaseGraph {
    BaseGraph::new(4, &[(0, 1), (1, 2), (0, 2), (2, 3)], None).expect("the paw is connected")
}

/// Ring of `n` cliques of size `n`: clique `i` occupies vertices
/// `i·n .. (i+1)·n`, consecutive cliques (cyclically) are joined completely,
/// and each clique forms one color class. The result is (3n−1)-regular on
/// n² vertices.
pub fn clique_ring_base(n: usize) -> BaseGraph {
    assert!(n >= 3);
    let mut edges = Vec::new();
    for i in 0..n {
        let block: Vec<usize> = (i * n..(i + 1) * n).collect();
        for j in 1..n {
            for k in 0..j {
                edges.push((block[k], block[j]));
            }
        }
        let next: Vec<usize> = {
            let i2 = (i + 1) % n;
            (i2 * n..(i2 + 1) * n).collect()
        };
        for &u in &block {
            for &v in &next {
                edges.push((u, v));
            }
        }
    }
    let colors: Vec<Vec<usize>> = (0..n).map(|i| (i * n..(i + 1) * n).collect()).collect();
    BaseGraph::new(n * n, &edges, Some(colors)).expect("clique rings are connected")
}

/// A base graph by name: `cycle:n`, `ring:n`, `k4`, or `paw`.
pub fn base_from_name(name: &str) -> Option<BaseGraph> {
    if let Some(n) = name.strip_prefix("cycle:") {
        let n: usize = n.parse().ok()?;
        if n >= 3 {
            return Some(cycle_base(n));
        }
        return None;
    }
    if let Some(n) = name.strip_prefix("ring:") {
        let n: usize = n.parse().ok()?;
        if n >= 3 {
            return Some(clique_ring_base(n));
        }
        return None;
    }
    match name {
        "k4" => Some(complete_base(4)),
        "paw" => Some(paw_base()),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Instances
// ---------------------------------------------------------------------------

/// Twist parity of an edge labeling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

impl fmt::Display for Parity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Parity::Even => write!(f, "even"),
            Parity::Odd => write!(f, "odd"),
        }
    }
}

/// A base graph together with an edge labeling over F₂.
#[derive(Clone, Debug)]
pub struct CfiSpec {
    pub base: BaseGraph,
    /// Label per undirected edge (lower endpoint first); `true` means 1.
    pub g: BTreeMap<(usize, usize), bool>,
}

impl CfiSpec {
    /// The all-zero labeling — the reference even instance.
    pub fn even(base: BaseGraph) -> CfiSpec {
        let g = base.edges.iter().map(|&e| (e, false)).collect();
        CfiSpec { base, g }
    }

    /// The all-zero labeling with the listed edges flipped to 1.
    pub fn with_flips(base: BaseGraph, flips: &[(usize, usize)]) -> Result<CfiSpec, CfiError> {
        let mut spec = CfiSpec::even(base);
        for &(u, v) in flips {
            let key = (u.min(v), u.max(v));
            match spec.g.get_mut(&key) {
                Some(bit) => *bit = !*bit,
                None => {
                    return Err(CfiError::Base(format!("({u},{v}) is not an edge of the base")))
                }
            }
        }
        Ok(spec)
    }

    /// A uniformly random labeling from a seeded generator.
    pub fn random(base: BaseGraph, seed: u64) -> CfiSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = base.edges.iter().map(|&e| (e, rng.gen::<bool>())).collect();
        CfiSpec { base, g }
    }

    /// Sum of the edge labels: the complete isomorphism invariant of the
    /// derived graphs over a fixed base.
    pub fn parity(&self) -> Parity {
        if self.g.values().filter(|&&b| b).count() % 2 == 0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

/// Origin of a derived-graph vertex in the base graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    /// Gadget vertex of the given base vertex.
    Gadget(usize),
    /// Edge vertex of the directed base edge `from → to` carrying `bit`.
    EdgeVertex { from: usize, to: usize, bit: bool },
}

/// A built instance: the graph structure, the spec it came from, and the
/// origin of every vertex.
#[derive(Debug)]
pub struct CfiGraph {
    pub spec: CfiSpec,
    pub structure: Structure,
    pub origins: Vec<Origin>,
}

/// Builds the derived graph of a labeled base. Per base vertex of degree d
/// the gadget holds the 2^(d−1) even-weight bit vectors over its incident
/// edges (indexed along the sorted neighbor list); per directed edge there
/// are two edge vertices. A gadget vertex joins the edge vertex whose bit
/// its vector selects via `E`; the two sides of an undirected edge are
/// cross-joined straight or twisted according to the label. A colored base
/// induces colors by origin: gadget vertices inherit the base color, edge
/// vertices are classed by the color pair of their directed edge.
///
/// The two edge vertices of a directed edge are additionally linked by a
/// `P` relation. Over bases with a degree-3 vertex the pairing is implicit
/// in the gadget structure, but over cycles the derived plain graph
/// degenerates (the even instance splits into two disjoint cycles with
/// independent symmetries); making the pairing explicit keeps the
/// automorphism group at base automorphisms composed with twists along
/// surviving base cycles for every base, which is what both the chooser and
/// the twist-parity theory are about.
pub fn build_cfi(spec: &CfiSpec) -> Result<CfiGraph, CfiError> {
    let base = &spec.base;
    let mut origins: Vec<Origin> = Vec::new();
    let mut gadget_ids: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    for u in 0..base.n {
        let d = base.degree(u);
        if d >= 31 {
            return Err(CfiError::Base(format!("vertex {u} has too high a degree")));
        }
        for mask in 0..(1u32 << d) {
            if mask.count_ones() % 2 == 0 {
                gadget_ids.insert((u, mask), origins.len());
                origins.push(Origin::Gadget(u));
            }
        }
    }
    let mut edge_ids: BTreeMap<(usize, usize, bool), usize> = BTreeMap::new();
    for &(u, v) in &base.edges {
        for (from, to) in [(u, v), (v, u)] {
            for bit in [false, true] {
                edge_ids.insert((from, to, bit), origins.len());
                origins.push(Origin::EdgeVertex { from, to, bit });
            }
        }
    }
    let sig = Signature::new(vec![("E".to_string(), 2), ("P".to_string(), 2)])
        .expect("fixed signature is valid");
    let mut s = Structure::new(sig, origins.len());
    for (&(u, mask), &gid) in &gadget_ids {
        for (k, &v) in base.neighbors(u).iter().enumerate() {
            let bit = (mask >> k) & 1 == 1;
            s.add_edge("E", gid, edge_ids[&(u, v, bit)])?;
        }
    }
    for (&(u, v), &label) in &spec.g {
        for (from, to) in [(u, v), (v, u)] {
            s.add_edge("P", edge_ids[&(from, to, false)], edge_ids[&(from, to, true)])?;
        }
        for i in [false, true] {
            let j = i ^ label;
            s.add_edge("E", edge_ids[&(u, v, i)], edge_ids[&(v, u, j)])?;
        }
    }
    if let Some(base_classes) = &base.colors {
        let color_of = |v: usize| {
            base_classes.iter().position(|c| c.contains(&v)).expect("colors partition")
        };
        let mut classes: Vec<Vec<usize>> = Vec::new();
        for ci in 0..base_classes.len() {
            let class: Vec<usize> = (0..origins.len())
                .filter(|&id| matches!(origins[id], Origin::Gadget(u) if color_of(u) == ci))
                .collect();
            if !class.is_empty() {
                classes.push(class);
            }
        }
        for ci in 0..base_classes.len() {
            for cj in 0..base_classes.len() {
                let class: Vec<usize> = (0..origins.len())
                    .filter(|&id| {
                        matches!(origins[id], Origin::EdgeVertex { from, to, .. }
                            if color_of(from) == ci && color_of(to) == cj)
                    })
                    .collect();
                if !class.is_empty() {
                    classes.push(class);
                }
            }
        }
        s.set_colors(classes)?;
    }
    Ok(CfiGraph { spec: spec.clone(), structure: s, origins })
}

impl CfiGraph {
    /// The vertex id of an edge vertex.
    pub fn edge_vertex(&self, from: usize, to: usize, bit: bool) -> Option<usize> {
        self.origins
            .iter()
            .position(|&o| o == Origin::EdgeVertex { from, to, bit })
    }
}

/// Whether two labelings over the same base yield isomorphic derived graphs,
/// decided by the brute-force isomorphism oracle. Agrees with parity
/// equality.
pub fn twist_equivalence(a: &CfiSpec, b: &CfiSpec, cap: usize) -> Result<bool, CfiError> {
    if a.base != b.base {
        return Err(CfiError::Base("twist equivalence needs a common base".into()));
    }
    let ga = build_cfi(a)?;
    let gb = build_cfi(b)?;
    Ok(structure::is_isomorphic(&ga.structure, &gb.structure, cap)?)
}

// ---------------------------------------------------------------------------
// Orbit chooser
// ---------------------------------------------------------------------------

/// Canonical vertex ranks from color refinement: start from (declared color,
/// position among the individualized vertices), then refine by the sorted
/// multiset of neighbor ranks until stable. Ranks are ordered by sorted
/// signature, hence invariant under isomorphism.
fn refinement_ranks(a: &Structure, indiv: &[usize]) -> Vec<usize> {
    let n = a.universe_size;
    // Per-relation adjacency: which vertices a vertex sees in first position.
    let adjs: Vec<Vec<Vec<usize>>> = a
        .relations
        .values()
        .map(|tuples| {
            let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
            for t in tuples {
                if t.len() == 2 {
                    adj[t[0]].push(t[1]);
                }
            }
            adj
        })
        .collect();
    let init: Vec<(usize, usize)> = (0..n)
        .map(|v| (a.color_of(v), indiv.iter().position(|&w| w == v).map_or(0, |p| p + 1)))
        .collect();
    let mut ranks = rank_by(&init);
    loop {
        let sigs: Vec<(usize, Vec<Vec<usize>>)> = (0..n)
            .map(|v| {
                let nbs: Vec<Vec<usize>> = adjs
                    .iter()
                    .map(|adj| {
                        let mut nb: Vec<usize> = adj[v].iter().map(|&w| ranks[w]).collect();
                        nb.sort_unstable();
                        nb
                    })
                    .collect();
                (ranks[v], nbs)
            })
            .collect();
        let next = rank_by(&sigs);
        if next == ranks {
            return ranks;
        }
        ranks = next;
    }
}

/// Isomorphism-invariant summary of a structure with a tuple individualized:
/// the rank histogram plus all relation tuples rewritten in rank
/// coordinates. Complete whenever the refinement partition is discrete;
/// used to break rank ties by individualize-and-refine.
fn refinement_summary(a: &Structure, indiv: &[usize]) -> (Vec<usize>, Vec<(usize, Vec<usize>)>) {
    let ranks = refinement_ranks(a, indiv);
    let mut histogram = ranks.clone();
    histogram.sort_unstable();
    let mut edges: Vec<(usize, Vec<usize>)> = Vec::new();
    for (ri, tuples) in a.relations.values().enumerate() {
        for t in tuples {
            edges.push((ri, t.iter().map(|&v| ranks[v]).collect()));
        }
    }
    edges.sort();
    (histogram, edges)
}

fn rank_by<T: Ord + Clone>(sigs: &[T]) -> Vec<usize> {
    let mut sorted: Vec<&T> = sigs.iter().collect();
    sorted.sort();
    sorted.dedup();
    sigs.iter()
        .map(|s| sorted.binary_search_by(|p| (*p).cmp(s)).expect("present"))
        .collect()
}

/// State captured by the gadget-aware orbit chooser.
struct ChooserData {
    base: BaseGraph,
    origins: Vec<Origin>,
    edge_ids: BTreeMap<(usize, usize, bool), usize>,
    /// Ordered directed-edge orbit classes of the base, per individualized
    /// base tuple.
    orbit_cache: Mutex<HashMap<Vec<usize>, Arc<Vec<Vec<(usize, usize)>>>>>,
}

impl ChooserData {
    /// The 2-orbit classes of the base with the given tuple individualized,
    /// restricted to directed-edge pairs, in an isomorphism-invariant order.
    /// Orbits come from the automorphism oracle (base graphs are small);
    /// classes are keyed by their image under a canonical labeling of the
    /// individualized base, which any two isomorphic situations agree on
    /// because automorphisms of the canonical form fix each 2-orbit setwise.
    fn base_edge_orbits(&self, orig: &[usize]) -> Result<Arc<Vec<Vec<(usize, usize)>>>, String> {
        if let Some(c) = self.orbit_cache.lock().unwrap().get(orig) {
            return Ok(c.clone());
        }
        let mut s = self.base.to_structure();
        s.indiv = orig.to_vec();
        let auts =
            structure::automorphisms(&s, self.base.n).map_err(|e| e.to_string())?;
        let res =
            canonize::gurevich_canon(&s, &OrbitChooser::Invariant, ChoicePolicy::FirstCanonical)
                .map_err(|e| e.to_string())?;
        let mut pos = vec![0usize; self.base.n];
        for (i, &v) in res.order.iter().enumerate() {
            pos[v] = i;
        }
        let mut seen: BTreeSet<(usize, usize)> = BTreeSet::new();
        let mut keyed: Vec<(Vec<(usize, usize)>, Vec<(usize, usize)>)> = Vec::new();
        for &(a, b) in &self.base.edges {
            for (u, v) in [(a, b), (b, a)] {
                if seen.contains(&(u, v)) {
                    continue;
                }
                let class: BTreeSet<(usize, usize)> =
                    auts.iter().map(|phi| (phi.apply(u), phi.apply(v))).collect();
                seen.extend(class.iter().copied());
                let mut key: Vec<(usize, usize)> =
                    class.iter().map(|&(x, y)| (pos[x], pos[y])).collect();
                key.sort_unstable();
                keyed.push((key, class.into_iter().collect()));
            }
        }
        keyed.sort();
        let arc = Arc::new(keyed.into_iter().map(|(_, c)| c).collect::<Vec<_>>());
        self.orbit_cache.lock().unwrap().insert(orig.to_vec(), arc.clone());
        Ok(arc)
    }

    /// Whether the base edge {u,v} lies on a cycle once the killed vertices
    /// and edges are removed: deleting the edge must keep u and v connected.
    fn on_cycle(
        &self,
        u: usize,
        v: usize,
        killed_v: &BTreeSet<usize>,
        killed_e: &BTreeSet<(usize, usize)>,
    ) -> bool {
        let alive = |x: usize, y: usize| {
            !killed_v.contains(&x)
                && !killed_v.contains(&y)
                && !killed_e.contains(&(x.min(y), x.max(y)))
        };
        let mut seen = vec![false; self.base.n];
        let mut stack = vec![u];
        seen[u] = true;
        while let Some(x) = stack.pop() {
            for y in self.base.neighbors(x) {
                if seen[y] || !alive(x, y) || (x.min(y), x.max(y)) == (u.min(v), u.max(v)) {
                    continue;
                }
                if y == v {
                    return true;
                }
                seen[y] = true;
                stack.push(y);
            }
        }
        false
    }

    /// One round of the chooser: a 1-orbit of the derived graph with the
    /// prefix individualized, disjoint from the prefix.
    ///
    /// Individualized vertices delete their origins from the base: the
    /// remaining twists act along cycles of what is left. Three cases:
    ///  1. Some base edge orbit lies on a surviving cycle — the least such
    ///     orbit contributes all four edge vertices per edge, which twisting
    ///     mixes into a single orbit.
    ///  2. No surviving cycle but the base still has a nontrivial edge
    ///     orbit — with the twists gone, each edge-vertex pair is split by
    ///     color refinement, and the refinement-minimal vertex per edge of
    ///     the least nontrivial orbit forms an orbit.
    ///  3. The base is rigid and cycle-free — the derived graph is rigid
    ///     too, and color refinement orders it; the least non-individualized
    ///     vertex is a singleton orbit.
    fn choose(&self, a: &Structure, prefix: &[usize]) -> Result<Vec<usize>, String> {
        let mut killed_v: BTreeSet<usize> = BTreeSet::new();
        let mut killed_e: BTreeSet<(usize, usize)> = BTreeSet::new();
        let mut orig: Vec<usize> = Vec::new();
        for &p in prefix {
            match self.origins[p] {
                Origin::Gadget(u) => {
                    killed_v.insert(u);
                    if !orig.contains(&u) {
                        orig.push(u);
                    }
                }
                Origin::EdgeVertex { from, to, .. } => {
                    killed_e.insert((from.min(to), from.max(to)));
                    for x in [from, to] {
                        if !orig.contains(&x) {
                            orig.push(x);
                        }
                    }
                }
            }
        }
        let alive = |u: usize, v: usize| {
            !killed_v.contains(&u)
                && !killed_v.contains(&v)
                && !killed_e.contains(&(u.min(v), u.max(v)))
        };
        let classes = self.base_edge_orbits(&orig)?;

        // Case 1: least edge orbit on a surviving cycle. Aliveness and the
        // cycle property are invariant under the automorphisms that define
        // the orbit, so testing one representative suffices.
        for class in classes.iter() {
            let (u, v) = class[0];
            if alive(u, v) && self.on_cycle(u, v, &killed_v, &killed_e) {
                debug_assert!(class
                    .iter()
                    .all(|&(x, y)| alive(x, y) && self.on_cycle(x, y, &killed_v, &killed_e)));
                let mut out = Vec::with_capacity(2 * class.len());
                for &(x, y) in class {
                    out.push(self.edge_ids[&(x, y, false)]);
                    out.push(self.edge_ids[&(x, y, true)]);
                }
                return Ok(out);
            }
        }

        let ranks = refinement_ranks(a, prefix);

        // Case 2: least nontrivial surviving edge orbit, one edge vertex per
        // edge selected by refinement rank.
        for class in classes.iter() {
            let (u, v) = class[0];
            if class.len() >= 2 && alive(u, v) {
                let mut out = Vec::with_capacity(class.len());
                for &(x, y) in class {
                    let i0 = self.edge_ids[&(x, y, false)];
                    let i1 = self.edge_ids[&(x, y, true)];
                    match split_pair(a, prefix, &ranks, i0, i1) {
                        Some(least) => out.push(least),
                        None => {
                            return Err(format!(
                                "refinement does not split the edge-vertex pair of ({x},{y})"
                            ))
                        }
                    }
                }
                return Ok(out);
            }
        }

        // Case 3: refinement (with an individualize-and-refine round for
        // ties) must single out the least remaining vertex.
        let rest: Vec<usize> =
            (0..a.universe_size).filter(|v| !prefix.contains(v)).collect();
        let least = rest
            .iter()
            .copied()
            .min_by_key(|&v| ranks[v])
            .ok_or_else(|| "no vertices left to individualize".to_string())?;
        let tied: Vec<usize> =
            rest.iter().copied().filter(|&v| ranks[v] == ranks[least]).collect();
        if tied.len() == 1 {
            return Ok(tied);
        }
        let mut best: Option<((Vec<usize>, Vec<(usize, Vec<usize>)>), Vec<usize>)> = None;
        for &v in &tied {
            let mut p = prefix.to_vec();
            p.push(v);
            let summary = refinement_summary(a, &p);
            match &mut best {
                None => best = Some((summary, vec![v])),
                Some((s, members)) => match summary.cmp(s) {
                    std::cmp::Ordering::Less => best = Some((summary, vec![v])),
                    std::cmp::Ordering::Equal => members.push(v),
                    std::cmp::Ordering::Greater => {}
                },
            }
        }
        let (_, members) = best.expect("tied candidates were non-empty");
        if members.len() != 1 {
            return Err(format!(
                "refinement leaves {} vertices tied where a rigid graph was expected",
                members.len()
            ));
        }
        Ok(members)
    }
}

/// The lesser of two rank-tied vertices, by one individualize-and-refine
/// round; `None` when even that leaves them indistinguishable.
fn split_pair(
    a: &Structure,
    prefix: &[usize],
    ranks: &[usize],
    i0: usize,
    i1: usize,
) -> Option<usize> {
    match ranks[i0].cmp(&ranks[i1]) {
        std::cmp::Ordering::Less => return Some(i0),
        std::cmp::Ordering::Greater => return Some(i1),
        std::cmp::Ordering::Equal => {}
    }
    let mut p0 = prefix.to_vec();
    p0.push(i0);
    let mut p1 = prefix.to_vec();
    p1.push(i1);
    match refinement_summary(a, &p0).cmp(&refinement_summary(a, &p1)) {
        std::cmp::Ordering::Less => Some(i0),
        std::cmp::Ordering::Greater => Some(i1),
        std::cmp::Ordering::Equal => None,
    }
}

/// The gadget-aware orbit chooser for a built instance, usable with the
/// canonization engine.
pub fn cfi_chooser(g: &CfiGraph) -> OrbitChooser {
    let mut edge_ids = BTreeMap::new();
    for (id, &o) in g.origins.iter().enumerate() {
        if let Origin::EdgeVertex { from, to, bit } = o {
            edge_ids.insert((from, to, bit), id);
        }
    }
    let data = ChooserData {
        base: g.spec.base.clone(),
        origins: g.origins.clone(),
        edge_ids,
        orbit_cache: Mutex::new(HashMap::new()),
    };
    OrbitChooser::Custom(Box::new(move |a, prefix| data.choose(a, prefix)))
}

/// Decides the twist parity of a built instance by canonization: canonize it
/// and the reference even instance over the same base with the gadget-aware
/// chooser and compare the forms. The witnessing automorphisms of both runs
/// are replayed against the structures, so a chooser returning a non-orbit
/// surfaces as an error rather than a wrong answer.
pub fn cfi_query(g: &CfiGraph) -> Result<Parity, CfiError> {
    let res = canonize::gurevich_canon(&g.structure, &cfi_chooser(g), ChoicePolicy::FirstCanonical)?;
    if !canonize::witnesses_valid(&g.structure, &res) {
        return Err(CfiError::Chooser("witness replay failed on the input instance".into()));
    }
    let even = build_cfi(&CfiSpec::even(g.spec.base.clone()))?;
    let res_even =
        canonize::gurevich_canon(&even.structure, &cfi_chooser(&even), ChoicePolicy::FirstCanonical)?;
    if !canonize::witnesses_valid(&even.structure, &res_even) {
        return Err(CfiError::Chooser("witness replay failed on the reference instance".into()));
    }
    Ok(if res.invariant == res_even.invariant { Parity::Even } else { Parity::Odd })
}

// ---------------------------------------------------------------------------
// Recovery from a bare structure
// ---------------------------------------------------------------------------

/// Reconstructs the base graph and the origin map from a bare structure in
/// the shape emitted by [`build_cfi`]: edge vertices are the members of `P`
/// pairs, gadgets are the connected groups of remaining vertices sharing a
/// pair's neighborhood, and cross `E` edges between pairs yield the base
/// edges. The edge labeling cannot be recovered (that is the twist parity
/// itself) and is recorded as all-zero; deciding the parity is what
/// [`cfi_query`] is for.
pub fn recover_cfi(s: &Structure) -> Result<CfiGraph, CfiError> {
    let n = s.universe_size;
    let bad = |msg: &str| CfiError::Base(format!("not a recognizable instance: {msg}"));
    let p_tuples = s
        .relations
        .get("P")
        .ok_or_else(|| bad("no P relation"))?;
    let mut pair_of: Vec<Option<usize>> = vec![None; n];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for t in p_tuples {
        let (x, y) = (t[0], t[1]);
        if x < y {
            for v in [x, y] {
                if pair_of[v].is_some() {
                    return Err(bad("a vertex lies in two pairs"));
                }
            }
            pair_of[x] = Some(pairs.len());
            pair_of[y] = Some(pairs.len());
            pairs.push((x, y));
        }
    }
    if pairs.is_empty() {
        return Err(bad("no edge-vertex pairs"));
    }
    let e_tuples = s.relations.get("E").ok_or_else(|| bad("no E relation"))?;

    // Group gadget vertices: all gadget neighbors of one pair share a base
    // vertex. Union-find with path halving.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    let mut pair_gadget_nbrs: Vec<Vec<usize>> = vec![Vec::new(); pairs.len()];
    for t in e_tuples {
        let (x, y) = (t[0], t[1]);
        if let (Some(pi), None) = (pair_of[x], pair_of[y]) {
            pair_gadget_nbrs[pi].push(y);
        }
    }
    for nbrs in &pair_gadget_nbrs {
        if nbrs.is_empty() {
            return Err(bad("a pair has no gadget neighbors"));
        }
        for &v in &nbrs[1..] {
            let (a, b) = (find(&mut parent, nbrs[0]), find(&mut parent, v));
            parent[a] = b;
        }
    }

    // Number the base vertices by their least gadget vertex.
    let mut roots: Vec<usize> = (0..n)
        .filter(|&v| pair_of[v].is_none())
        .map(|v| find(&mut parent, v))
        .collect();
    roots.sort_unstable();
    roots.dedup();
    let base_of_root = |parent: &mut Vec<usize>, roots: &[usize], v: usize| {
        let r = find(parent, v);
        roots.binary_search(&r).expect("grouped above")
    };
    let owner: Vec<usize> = pair_gadget_nbrs
        .iter()
        .map(|nbrs| base_of_root(&mut parent, &roots, nbrs[0]))
        .collect();
    for (pi, nbrs) in pair_gadget_nbrs.iter().enumerate() {
        for &v in nbrs {
            if base_of_root(&mut parent, &roots, v) != owner[pi] {
                return Err(bad("a pair touches two gadgets"));
            }
        }
    }

    // Cross edges between pairs give the base edges and the directions.
    let mut partner: Vec<Option<usize>> = vec![None; pairs.len()];
    for t in e_tuples {
        let (x, y) = (t[0], t[1]);
        if let (Some(pi), Some(pj)) = (pair_of[x], pair_of[y]) {
            if partner[pi].is_some_and(|q| q != pj) {
                return Err(bad("a pair crosses to two different pairs"));
            }
            partner[pi] = Some(pj);
        }
    }
    let mut base_edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (pi, p) in partner.iter().enumerate() {
        let pj = p.ok_or_else(|| bad("a pair has no cross edges"))?;
        if partner[pj] != Some(pi) || owner[pi] == owner[pj] {
            return Err(bad("cross edges do not match pairs up"));
        }
        let (u, v) = (owner[pi], owner[pj]);
        base_edges.insert((u.min(v), u.max(v)));
    }

    // Base colors, when present, are read off the gadget vertices.
    let base_colors = if s.colors.is_some() {
        let mut class_of_base: Vec<usize> = Vec::with_capacity(roots.len());
        for &r in &roots {
            class_of_base.push(s.color_of(r));
        }
        let mut distinct: Vec<usize> = class_of_base.clone();
        distinct.sort_unstable();
        distinct.dedup();
        Some(
            distinct
                .iter()
                .map(|&c| {
                    (0..roots.len()).filter(|&b| class_of_base[b] == c).collect::<Vec<_>>()
                })
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };

    let base = BaseGraph::new(
        roots.len(),
        &base_edges.iter().copied().collect::<Vec<_>>(),
        base_colors,
    )?;
    let mut origins: Vec<Origin> = Vec::with_capacity(n);
    for v in 0..n {
        match pair_of[v] {
            None => origins.push(Origin::Gadget(base_of_root(&mut parent, &roots, v))),
            Some(pi) => origins.push(Origin::EdgeVertex {
                from: owner[pi],
                to: owner[partner[pi].expect("validated")],
                bit: v == pairs[pi].1,
            }),
        }
    }
    let spec = CfiSpec::even(base);
    Ok(CfiGraph { spec, structure: s.clone(), origins })
}

// ---------------------------------------------------------------------------
// Closed-form orbits of clique rings
// ---------------------------------------------------------------------------

/// 1-orbits of a clique ring with a tuple individualized, in closed form:
/// the automorphism group is the product of the symmetric groups on the
/// non-individualized part of each clique, so a vertex is alone iff
/// individualized and otherwise grouped with its free clique mates.
pub fn clique_ring_one_orbits(n: usize, indiv: &[usize]) -> Vec<BTreeSet<usize>> {
    let mut classes: Vec<BTreeSet<usize>> = Vec::new();
    let mut placed = vec![false; n * n];
    for v in 0..n * n {
        if placed[v] {
            continue;
        }
        let class = clique_ring_orbit_of(n, indiv, v);
        for &w in &class {
            placed[w] = true;
        }
        classes.push(class);
    }
    classes
}

fn clique_ring_orbit_of(n: usize, indiv: &[usize], v: usize) -> BTreeSet<usize> {
    if indiv.contains(&v) {
        return BTreeSet::from([v]);
    }
    let block = v / n;
    (block * n..(block + 1) * n).filter(|w| !indiv.contains(w)).collect()
}

/// 2-orbits of a clique ring with a tuple individualized, in closed form:
/// the orbit of (u,v) is all (w,w') with w in the orbit of u, w' in the
/// orbit of v, and w = w' exactly when u = v.
pub fn clique_ring_two_orbits(n: usize, indiv: &[usize]) -> Vec<BTreeSet<(usize, usize)>> {
    let mut classes: Vec<BTreeSet<(usize, usize)>> = Vec::new();
    let mut placed: BTreeSet<(usize, usize)> = BTreeSet::new();
    for u in 0..n * n {
        for v in 0..n * n {
            if placed.contains(&(u, v)) {
                continue;
            }
            let ou = clique_ring_orbit_of(n, indiv, u);
            let ov = clique_ring_orbit_of(n, indiv, v);
            let class: BTreeSet<(usize, usize)> = ou
                .iter()
                .flat_map(|&w| ov.iter().map(move |&w2| (w, w2)))
                .filter(|&(w, w2)| (w == w2) == (u == v))
                .collect();
            placed.extend(class.iter().copied());
            classes.push(class);
        }
    }
    classes
}
