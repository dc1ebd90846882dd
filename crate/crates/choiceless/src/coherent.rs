//! Coarsest coherent configurations of binary structures (two-dimensional
//! Weisfeiler-Leman refinement) and their algebraic sketches: the relation
//! signature, the color signature, the symbolic subset relation, and the
//! intersection-number table. Sketches are canonically named so that
//! isomorphic structures produce identical sketches, the sketch of a
//! disjoint union is synthesized from the component sketches alone, and
//! sketches of induced reducts are computed by fusing colors at the sketch
//! level.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use thiserror::Error;

use crate::structure::Structure;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoherentError {
    #[error("coherent configurations require arity <= 2, relation `{0}` violates this")]
    Arity(String),
    #[error("sketches are over different relation signatures")]
    SignatureMismatch,
    #[error("invalid input: {0}")]
    Invalid(String),
}

// ---------------------------------------------------------------------------
// Coherent configurations
// ---------------------------------------------------------------------------

/// A partition of V x V into colors, stored as a row-major color matrix.
/// Color ids are canonical: they are ranks of iterated refinement
/// signatures, so isomorphic structures get identical matrices up to the
/// vertex bijection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoherentConfig {
    pub n: usize,
    color: Vec<usize>,
    pub num_colors: usize,
}

impl CoherentConfig {
    pub fn color_of(&self, u: usize, v: usize) -> usize {
        self.color[u * self.n + v]
    }

    /// All pairs of one color, in row-major order.
    pub fn class(&self, c: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.n {
            for v in 0..self.n {
                if self.color_of(u, v) == c {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Whether the color lies on the diagonal (then it is called a fiber).
    pub fn is_fiber(&self, c: usize) -> bool {
        self.class(c).iter().all(|&(u, v)| u == v)
    }

    /// The color of the reversed pairs; `None` when the class is not closed
    /// under reversal (then this is not a coherent configuration).
    pub fn inverse(&self, c: usize) -> Option<usize> {
        let class = self.class(c);
        let &(u, v) = class.first()?;
        let inv = self.color_of(v, u);
        if class.iter().all(|&(x, y)| self.color_of(y, x) == inv) {
            Some(inv)
        } else {
            None
        }
    }

    /// For each color, the base relations that contain it entirely (unary
    /// relations are read as diagonal vertex classes).
    pub fn refines(&self, a: &Structure) -> BTreeMap<usize, BTreeSet<String>> {
        let mut out: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
        for c in 0..self.num_colors {
            let class = self.class(c);
            let mut names = BTreeSet::new();
            for (name, arity) in &a.signature.relations {
                let inside = class.iter().all(|&(u, v)| match arity {
                    1 => u == v && a.has_tuple(name, &[u]),
                    _ => a.has_tuple(name, &[u, v]),
                });
                if inside {
                    names.insert(name.clone());
                }
            }
            out.insert(c, names);
        }
        out
    }

    /// Intersection numbers q(R,S,T), or `None` if some triple has no
    /// well-defined count (then this is not a coherent configuration).
    pub fn intersection_numbers(&self) -> Option<Vec<u64>> {
        let k = self.num_colors;
        let mut q = vec![0u64; k * k * k];
        let mut defined = vec![false; k * k * k];
        for u in 0..self.n {
            for v in 0..self.n {
                let r = self.color_of(u, v);
                let mut counts = vec![0u64; k * k];
                for w in 0..self.n {
                    counts[self.color_of(u, w) * k + self.color_of(w, v)] += 1;
                }
                for s in 0..k {
                    for t in 0..k {
                        let idx = (r * k + s) * k + t;
                        if defined[idx] {
                            if q[idx] != counts[s * k + t] {
                                return None;
                            }
                        } else {
                            defined[idx] = true;
                            q[idx] = counts[s * k + t];
                        }
                    }
                }
            }
        }
        Some(q)
    }

    /// Verifies all four defining axioms by direct counting.
    pub fn check_axioms(&self) -> Result<(), String> {
        // (1) Partition with nonempty classes.
        for c in 0..self.num_colors {
            if self.class(c).is_empty() {
                return Err(format!("color {c} is empty"));
            }
        }
        if self.color.iter().any(|&c| c >= self.num_colors) {
            return Err("color id out of range".into());
        }
        // (2) Diagonal split.
        for c in 0..self.num_colors {
            let class = self.class(c);
            let on: usize = class.iter().filter(|&&(u, v)| u == v).count();
            if on != 0 && on != class.len() {
                return Err(format!("color {c} straddles the diagonal"));
            }
        }
        // (3) Inverses.
        for c in 0..self.num_colors {
            if self.inverse(c).is_none() {
                return Err(format!("color {c} has no inverse color"));
            }
        }
        // (4) Intersection numbers.
        if self.intersection_numbers().is_none() {
            return Err("intersection numbers are not well-defined".into());
        }
        Ok(())
    }
}

fn require_binary(a: &Structure) -> Result<(), CoherentError> {
    for (name, arity) in &a.signature.relations {
        if *arity > 2 {
            return Err(CoherentError::Arity(name.clone()));
        }
    }
    Ok(())
}

/// Initial pair coloring: diagonal flag, relation memberships (unary ones
/// per endpoint), declared vertex-color classes, and individualized
/// positions — everything an isomorphism must respect.
fn initial_coloring(a: &Structure) -> (Vec<usize>, usize) {
    let n = a.universe_size;
    let indiv_pos = |u: usize| a.indiv.iter().position(|&x| x == u);
    let mut sigs: Vec<(Vec<i64>, usize)> = Vec::with_capacity(n * n);
    for u in 0..n {
        for v in 0..n {
            let mut sig: Vec<i64> = vec![(u == v) as i64];
            for (name, arity) in &a.signature.relations {
                match arity {
                    1 => {
                        sig.push(a.has_tuple(name, &[u]) as i64);
                        sig.push(a.has_tuple(name, &[v]) as i64);
                    }
                    _ => sig.push(a.has_tuple(name, &[u, v]) as i64),
                }
            }
            sig.push(a.color_of(u) as i64);
            sig.push(a.color_of(v) as i64);
            sig.push(indiv_pos(u).map_or(-1, |p| p as i64));
            sig.push(indiv_pos(v).map_or(-1, |p| p as i64));
            sigs.push((sig, u * n + v));
        }
    }
    rank_signatures(n, sigs)
}

/// Assigns each pair the rank of its signature in sorted order.
fn rank_signatures<S: Ord>(n: usize, mut sigs: Vec<(S, usize)>) -> (Vec<usize>, usize) {
    sigs.sort();
    let mut color = vec![0usize; n * n];
    let mut next = 0usize;
    for i in 0..sigs.len() {
        if i > 0 && sigs[i].0 != sigs[i - 1].0 {
            next += 1;
        }
        color[sigs[i].1] = next;
    }
    (color, next + 1)
}

/// Coarsest coherent configuration refining a binary structure, by
/// two-dimensional Weisfeiler-Leman refinement with canonical rank renaming
/// after every round.
pub fn refine_2wl(a: &Structure) -> Result<CoherentConfig, CoherentError> {
    require_binary(a)?;
    let n = a.universe_size;
    let (mut color, mut num_colors) = initial_coloring(a);
    loop {
        let mut sigs: Vec<(Vec<usize>, usize)> = Vec::with_capacity(n * n);
        for u in 0..n {
            for v in 0..n {
                let mut sig = vec![color[u * n + v]];
                let mut counts: Vec<usize> = (0..n)
                    .map(|w| color[u * n + w] * num_colors + color[w * n + v])
                    .collect();
                counts.sort_unstable();
                sig.extend(counts);
                sigs.push((sig, u * n + v));
            }
        }
        let (new_color, new_num) = rank_signatures(n, sigs);
        if new_num == num_colors {
            // Rank renaming is order-preserving per round, so an equal class
            // count means an identical partition: stable.
            break;
        }
        color = new_color;
        num_colors = new_num;
    }
    Ok(CoherentConfig { n, color, num_colors })
}

/// Independent oracle: coarsest coherent closure by explicit axiom-driven
/// splitting. Starts from the relation/diagonal partition and repeatedly
/// splits classes whose members disagree on an inverse color or on some
/// (S,T) witness count, until all axioms hold.
pub fn coherent_closure_oracle(a: &Structure) -> Result<CoherentConfig, CoherentError> {
    require_binary(a)?;
    let n = a.universe_size;
    let (mut color, mut num_colors) = initial_coloring(a);
    loop {
        let mut split = false;
        // Split by inverse color.
        let sigs: Vec<((usize, usize), usize)> = (0..n * n)
            .map(|i| {
                let (u, v) = (i / n, i % n);
                ((color[i], color[v * n + u]), i)
            })
            .collect();
        let (c2, k2) = rank_signatures(n, sigs);
        if k2 != num_colors {
            color = c2;
            num_colors = k2;
            split = true;
        }
        // Split by disagreeing witness counts, one (S,T) pair at a time.
        'pairs: for s in 0..num_colors {
            for t in 0..num_colors {
                let sigs: Vec<((usize, usize), usize)> = (0..n * n)
                    .map(|i| {
                        let (u, v) = (i / n, i % n);
                        let count = (0..n)
                            .filter(|&w| color[u * n + w] == s && color[w * n + v] == t)
                            .count();
                        ((color[i], count), i)
                    })
                    .collect();
                let (c2, k2) = rank_signatures(n, sigs);
                if k2 != num_colors {
                    color = c2;
                    num_colors = k2;
                    split = true;
                    break 'pairs; // color ids changed; restart the scan
                }
            }
        }
        if !split {
            return Ok(CoherentConfig { n, color, num_colors });
        }
    }
}

// ---------------------------------------------------------------------------
// Algebraic sketches
// ---------------------------------------------------------------------------

/// The vertex-free summary of a structure's coarsest coherent
/// configuration: relation names, number of colors, diagonal flags, the
/// symbolic subset relation, and the dense intersection-number table.
/// Always kept in canonical color order (see [`Sketch::normalize`]).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sketch {
    pub tau: Vec<String>,
    pub num_colors: usize,
    pub diagonal: Vec<bool>,
    /// Pairs (color, relation name) with the color class contained in the
    /// relation (unary relations are read as diagonal vertex classes).
    pub subset_rel: BTreeSet<(usize, String)>,
    /// Row-major table of size num_colors³: q[(r*k + s)*k + t].
    pub q: Vec<u64>,
}

impl Sketch {
    pub fn q(&self, r: usize, s: usize, t: usize) -> u64 {
        let k = self.num_colors;
        self.q[(r * k + s) * k + t]
    }

    /// The unique fiber U with q(R,U,R) = 1, i.e. the source fiber of R.
    pub fn src(&self, r: usize) -> usize {
        (0..self.num_colors)
            .find(|&u| self.diagonal[u] && self.q(r, u, r) == 1)
            .expect("every color of a coherent configuration has a source fiber")
    }

    /// The unique fiber V with q(R,R,V) = 1, i.e. the target fiber of R.
    pub fn tgt(&self, r: usize) -> usize {
        (0..self.num_colors)
            .find(|&v| self.diagonal[v] && self.q(r, r, v) == 1)
            .expect("every color of a coherent configuration has a target fiber")
    }

    /// The inverse color of R: the unique S with q(R⁻¹... ) — recovered as
    /// the color S from tgt(R) to src(R) with q(src(R), R, S) ≥ 1 on the
    /// diagonal walk u → v → u.
    pub fn inverse(&self, r: usize) -> usize {
        let u = self.src(r);
        (0..self.num_colors)
            .find(|&s| self.q(u, r, s) >= 1 && self.src(s) == self.tgt(r) && self.tgt(s) == u)
            .expect("every color of a coherent configuration has an inverse")
    }

    /// Number of vertices in fiber V, recovered from the table alone:
    /// every vertex of V is reached from a fixed u ∈ V by exactly one color,
    /// so |V| is the sum of the out-degrees q(V,R,R⁻¹) over colors R: V → V.
    pub fn fiber_size(&self, v: usize) -> u64 {
        debug_assert!(self.diagonal[v]);
        (0..self.num_colors)
            .filter(|&r| self.src(r) == v && self.tgt(r) == v)
            .map(|r| self.q(v, r, self.inverse(r)))
            .sum()
    }

    /// Total number of vertices: the sum of all fiber sizes.
    pub fn num_vertices(&self) -> u64 {
        (0..self.num_colors).filter(|&c| self.diagonal[c]).map(|c| self.fiber_size(c)).sum()
    }

    /// Renames colors canonically: iterated rank of the descriptor
    /// (is-diagonal, refined relations, full q-row under current names)
    /// until the induced partition is stable, then reorder all tables.
    /// Isomorphic structures therefore yield byte-identical sketches.
    pub fn normalize(&mut self) {
        let k = self.num_colors;
        let mut name: Vec<usize> = vec![0; k];
        loop {
            let descriptor = |c: usize| {
                let refs: Vec<&String> = self
                    .subset_rel
                    .iter()
                    .filter(|(col, _)| *col == c)
                    .map(|(_, r)| r)
                    .collect();
                let mut row: Vec<(usize, usize, u64, u64)> = Vec::with_capacity(k * k);
                for s in 0..k {
                    for t in 0..k {
                        row.push((name[s], name[t], self.q(c, s, t), self.q(s, c, t)));
                    }
                }
                row.sort_unstable();
                (self.diagonal[c], refs, name[c], row)
            };
            let descs: Vec<_> = (0..k).map(descriptor).collect();
            let mut sorted: Vec<usize> = (0..k).collect();
            sorted.sort_by(|&a, &b| descs[a].cmp(&descs[b]));
            let mut new_name = vec![0usize; k];
            let mut next = 0;
            for i in 0..k {
                if i > 0 && descs[sorted[i]] != descs[sorted[i - 1]] {
                    next += 1;
                }
                new_name[sorted[i]] = next;
            }
            if new_name == name {
                break;
            }
            name = new_name;
        }
        // Total order: descriptor rank first, original id as tie-break (ties
        // mean the colors are algebraically interchangeable).
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&c| (name[c], c));
        let mut pos = vec![0usize; k]; // old id -> new id
        for (new, &old) in order.iter().enumerate() {
            pos[old] = new;
        }
        let mut q = vec![0u64; k * k * k];
        for r in 0..k {
            for s in 0..k {
                for t in 0..k {
                    q[(pos[r] * k + pos[s]) * k + pos[t]] = self.q(r, s, t);
                }
            }
        }
        self.q = q;
        self.diagonal = order.iter().map(|&c| self.diagonal[c]).collect();
        self.subset_rel =
            self.subset_rel.iter().map(|(c, r)| (pos[*c], r.clone())).collect();
    }
}

/// The algebraic sketch of a structure: relation names, canonical coarsest
/// coherent configuration, symbolic subset relation, intersection numbers.
pub fn sketch(a: &Structure) -> Result<Sketch, CoherentError> {
    let cc = refine_2wl(a)?;
    sketch_of_config(a, &cc)
}

/// Sketch of a given configuration of `a` (exposed for oracle cross-checks).
pub fn sketch_of_config(a: &Structure, cc: &CoherentConfig) -> Result<Sketch, CoherentError> {
    let q = cc
        .intersection_numbers()
        .ok_or_else(|| CoherentError::Invalid("refinement did not reach coherence".into()))?;
    let tau: Vec<String> = a.signature.relations.iter().map(|(n, _)| n.clone()).collect();
    let refines = cc.refines(a);
    let mut subset_rel = BTreeSet::new();
    for (c, names) in refines {
        for name in names {
            subset_rel.insert((c, name));
        }
    }
    let diagonal: Vec<bool> = (0..cc.num_colors).map(|c| cc.is_fiber(c)).collect();
    let mut s = Sketch { tau, num_colors: cc.num_colors, diagonal, subset_rel, q };
    s.normalize();
    Ok(s)
}

// ---------------------------------------------------------------------------
// Disjoint unions at the sketch level
// ---------------------------------------------------------------------------

/// Sketch of the disjoint union of two connected structures, computed from
/// the component sketches alone. Every crossing color of the union is the
/// full product of one fiber per side; plain colors merge across the two
/// sides exactly when the component sketches are equal (then two-
/// dimensional refinement cannot tell the sides apart).
pub fn sketch_of_union(sa: &Sketch, sb: &Sketch) -> Result<Sketch, CoherentError> {
    if sa.tau != sb.tau {
        return Err(CoherentError::SignatureMismatch);
    }
    let merged = sa == sb;
    // Color universe of the union: plain colors from each side (shared when
    // merged), plus one crossing color per ordered pair of fibers from
    // opposite sides (collapsed to unordered fiber pairs when merged).
    #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
    enum UColor {
        Plain(u8, usize),          // side (0 for merged), component color id
        Cross(u8, usize, usize),   // direction tag, fiber of side A, fiber of side B
    }
    let sides: &[(&Sketch, u8)] = if merged { &[(sa, 0)] } else { &[(sa, 0), (sb, 1)] };
    let mut colors: Vec<UColor> = Vec::new();
    for (s, side) in sides {
        for c in 0..s.num_colors {
            colors.push(UColor::Plain(*side, c));
        }
    }
    let fibers = |s: &Sketch| -> Vec<usize> {
        (0..s.num_colors).filter(|&c| s.diagonal[c]).collect()
    };
    for &u in &fibers(sa) {
        for &v in &fibers(sb) {
            if merged {
                // One crossing color per ordered fiber pair (u, v) of the
                // shared signature: (U × V) ∩ crossing.
                colors.push(UColor::Cross(0, u, v));
            } else {
                colors.push(UColor::Cross(0, u, v)); // A-side fiber → B-side fiber
                colors.push(UColor::Cross(1, u, v)); // B-side fiber → A-side fiber
            }
        }
    }
    colors.sort();
    let k = colors.len();
    let side_sketch = |side: u8| if side == 0 { sa } else { sb };
    // Source and target fibers of a union color, as (side, fiber) pairs;
    // for merged unions the side tag is notional (both sides are equal).
    let ends = |c: &UColor| -> ((u8, usize), (u8, usize)) {
        match c {
            UColor::Plain(s, r) => {
                let sk = side_sketch(*s);
                ((*s, sk.src(*r)), (*s, sk.tgt(*r)))
            }
            UColor::Cross(0, u, v) => ((0, *u), (1, *v)),
            UColor::Cross(_, u, v) => ((1, *v), (0, *u)),
        }
    };
    let mut q = vec![0u64; k * k * k];
    for (ri, r) in colors.iter().enumerate() {
        for (si, s) in colors.iter().enumerate() {
            for (ti, t) in colors.iter().enumerate() {
                let (r_src, r_tgt) = ends(r);
                let (s_src, s_tgt) = ends(s);
                let (t_src, t_tgt) = ends(t);
                // A walk u → w → v over (S, T) on top of (u,v) ∈ R requires
                // matching fibers at all three corners.
                let compatible = |a: (u8, usize), b: (u8, usize)| {
                    a.1 == b.1 && (merged || a.0 == b.0)
                };
                if !compatible(r_src, s_src)
                    || !compatible(r_tgt, t_tgt)
                    || !compatible(s_tgt, t_src)
                {
                    continue;
                }
                let val = match (r, s, t) {
                    (UColor::Plain(sd, rp), UColor::Plain(_, sp), UColor::Plain(_, tp)) => {
                        // All on one side: the component count.
                        side_sketch(*sd).q(*rp, *sp, *tp)
                    }
                    (UColor::Plain(_, _), UColor::Cross(..), UColor::Cross(..)) => {
                        // w lives on the opposite side and is only
                        // constrained to the shared middle fiber.
                        let (wside, wfiber) = s_tgt;
                        side_sketch(wside).fiber_size(wfiber)
                    }
                    (UColor::Cross(..), UColor::Plain(sd, sp), UColor::Cross(..)) => {
                        // w on the source side: any S-out-neighbor of u that
                        // lands in the middle fiber; colors have unique
                        // target fibers, so this is the full out-degree.
                        let sk = side_sketch(*sd);
                        sk.q(sk.src(*sp), *sp, sk.inverse(*sp))
                    }
                    (UColor::Cross(..), UColor::Cross(..), UColor::Plain(sd, tp)) => {
                        // w on the target side: any T-in-neighbor of v.
                        let sk = side_sketch(*sd);
                        sk.q(sk.tgt(*tp), sk.inverse(*tp), *tp)
                    }
                    _ => 0, // parity of side changes forbids the other shapes
                };
                q[(ri * k + si) * k + ti] = val;
            }
        }
    }
    let diagonal: Vec<bool> = colors
        .iter()
        .map(|c| matches!(c, UColor::Plain(s, r) if side_sketch(*s).diagonal[*r]))
        .collect();
    let mut subset_rel = BTreeSet::new();
    for (ci, c) in colors.iter().enumerate() {
        if let UColor::Plain(s, r) = c {
            let sk = side_sketch(*s);
            for (rc, name) in &sk.subset_rel {
                if rc == r {
                    subset_rel.insert((ci, name.clone()));
                }
            }
            if !merged {
                // A plain color refines a base relation only if the twin
                // color on the other side does not break it — relations are
                // unions over both sides, so the subset relation is kept
                // per side as-is (crossing pairs are never in a relation).
            }
        }
    }
    let mut out =
        Sketch { tau: sa.tau.clone(), num_colors: k, diagonal, subset_rel, q };
    out.normalize();
    Ok(out)
}

// ---------------------------------------------------------------------------
// Sketch-level restriction (induced substructure + reduct)
// ---------------------------------------------------------------------------

/// Sketch of the induced substructure on the vertex class given by a set of
/// fibers, keeping only the listed relations — computed from the sketch
/// alone. The surviving colors still form a coherent configuration refining
/// the reduct; the coarsest one is found by fusing colors: start from the
/// (diagonal flag, kept refinements) partition and split classes until the
/// summed intersection numbers are class-independent.
pub fn restrict_sketch(
    s: &Sketch,
    keep: &BTreeSet<String>,
    class_fibers: &BTreeSet<usize>,
) -> Result<Sketch, CoherentError> {
    for f in class_fibers {
        if *f >= s.num_colors || !s.diagonal[*f] {
            return Err(CoherentError::Invalid(format!("color {f} is not a fiber")));
        }
    }
    for r in keep {
        if !s.tau.contains(r) {
            return Err(CoherentError::Invalid(format!("unknown relation `{r}`")));
        }
    }
    // Colors surviving the restriction: both end fibers inside the class.
    let survivors: Vec<usize> = (0..s.num_colors)
        .filter(|&c| class_fibers.contains(&s.src(c)) && class_fibers.contains(&s.tgt(c)))
        .collect();
    if survivors.is_empty() {
        return Err(CoherentError::Invalid("empty vertex class".into()));
    }
    let pos: BTreeMap<usize, usize> =
        survivors.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let m = survivors.len();
    // Initial fusion classes: diagonal flag + kept refinements.
    let mut name: Vec<usize> = {
        let descs: Vec<(bool, Vec<&String>)> = survivors
            .iter()
            .map(|&c| {
                let refs: Vec<&String> = s
                    .subset_rel
                    .iter()
                    .filter(|(col, rel)| *col == c && keep.contains(rel))
                    .map(|(_, rel)| rel)
                    .collect();
                (s.diagonal[c], refs)
            })
            .collect();
        rank_by(&descs)
    };
    // Refine: split by summed q-rows over current fusion classes.
    loop {
        let classes = name.iter().max().unwrap() + 1;
        let descs: Vec<(usize, Vec<u64>)> = (0..m)
            .map(|i| {
                let mut row = vec![0u64; classes * classes];
                for j in 0..m {
                    for l in 0..m {
                        row[name[j] * classes + name[l]] +=
                            s.q(survivors[i], survivors[j], survivors[l]);
                    }
                }
                (name[i], row)
            })
            .collect();
        let new_name = rank_by(&descs);
        if new_name == name {
            break;
        }
        name = new_name;
    }
    let classes = name.iter().max().unwrap() + 1;
    let mut q = vec![0u64; classes * classes * classes];
    let mut seen = vec![false; classes];
    let mut diagonal = vec![false; classes];
    let mut subset_rel = BTreeSet::new();
    for i in 0..m {
        let r = name[i];
        diagonal[r] = s.diagonal[survivors[i]];
        if !seen[r] {
            seen[r] = true;
            let mut row = vec![0u64; classes * classes];
            for j in 0..m {
                for l in 0..m {
                    row[name[j] * classes + name[l]] +=
                        s.q(survivors[i], survivors[j], survivors[l]);
                }
            }
            for sc in 0..classes {
                for tc in 0..classes {
                    q[(r * classes + sc) * classes + tc] = row[sc * classes + tc];
                }
            }
        }
        for (col, rel) in &s.subset_rel {
            if *col == survivors[i] && keep.contains(rel) {
                subset_rel.insert((r, rel.clone()));
            }
        }
        let _ = pos;
    }
    let tau: Vec<String> =
        s.tau.iter().filter(|r| keep.contains(*r)).cloned().collect();
    let mut out = Sketch { tau, num_colors: classes, diagonal, subset_rel, q };
    out.normalize();
    Ok(out)
}

/// Ranks items by their sort order, equal items sharing a rank.
fn rank_by<S: Ord>(descs: &[S]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..descs.len()).collect();
    order.sort_by(|&a, &b| descs[a].cmp(&descs[b]));
    let mut name = vec![0usize; descs.len()];
    let mut next = 0;
    for i in 0..order.len() {
        if i > 0 && descs[order[i]] != descs[order[i - 1]] {
            next += 1;
        }
        name[order[i]] = next;
    }
    name
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// Byte-stable text form used by the command-line front-end.
pub fn render_sketch(s: &Sketch) -> String {
    let mut out = String::new();
    out.push_str(&format!("tau: {}\n", s.tau.join(" ")));
    out.push_str(&format!("sigma: {} colors\n", s.num_colors));
    let fibers: Vec<String> = (0..s.num_colors)
        .filter(|&c| s.diagonal[c])
        .map(|c| format!("c{c}"))
        .collect();
    out.push_str(&format!("fibers: {}\n", fibers.join(" ")));
    let subs: Vec<String> =
        s.subset_rel.iter().map(|(c, r)| format!("(c{c},{r})")).collect();
    out.push_str(&format!("subset: {}\n", subs.join(" ")));
    let mut entries = Vec::new();
    for r in 0..s.num_colors {
        for sc in 0..s.num_colors {
            for t in 0..s.num_colors {
                let v = s.q(r, sc, t);
                if v != 0 {
                    entries.push(format!("(c{r},c{sc},c{t})={v}"));
                }
            }
        }
    }
    out.push_str(&format!("q: {}\n", entries.join(" ")));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs;
    use crate::structure::{disjoint_union, orbits_k, Structure};

    fn graph_cc(s: &Structure) -> CoherentConfig {
        refine_2wl(s).unwrap()
    }

    /// Same partition of V², ignoring how the classes are numbered (the
    /// oracle's ids depend on its split order).
    fn same_partition(a: &CoherentConfig, b: &CoherentConfig) -> bool {
        if a.n != b.n || a.num_colors != b.num_colors {
            return false;
        }
        let mut map = vec![usize::MAX; a.num_colors];
        for u in 0..a.n {
            for v in 0..a.n {
                let (ca, cb) = (a.color_of(u, v), b.color_of(u, v));
                if map[ca] == usize::MAX {
                    map[ca] = cb;
                } else if map[ca] != cb {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn pinned_color_counts() {
        assert_eq!(graph_cc(&graphs::from_edges(1, &[])).num_colors, 1);
        // C5: diagonal, adjacent, non-adjacent.
        assert_eq!(graph_cc(&graphs::cycle(5)).num_colors, 3);
        // K4: diagonal, off-diagonal; two common neighbors per edge.
        let k4 = graph_cc(&graphs::complete(4));
        assert_eq!(k4.num_colors, 2);
        let s = sketch(&graphs::complete(4)).unwrap();
        let off = (0..2).find(|&c| !s.diagonal[c]).unwrap();
        assert_eq!(s.q(off, off, off), 2);
    }

    #[test]
    fn c5_is_triangle_free_in_the_table() {
        let s = sketch(&graphs::cycle(5)).unwrap();
        assert_eq!(s.num_colors, 3);
        // The adjacency color: off-diagonal and refines E.
        let adj = (0..3)
            .find(|&c| !s.diagonal[c] && s.subset_rel.contains(&(c, "E".to_string())))
            .unwrap();
        assert_eq!(s.q(adj, adj, adj), 0);
    }

    #[test]
    fn axioms_and_coarsest_on_small_graphs() {
        for n in 1..=5 {
            for g in graphs::all_graphs(n) {
                let a = g.to_structure();
                let cc = graph_cc(&a);
                cc.check_axioms().unwrap_or_else(|e| panic!("axioms on {g:?}: {e}"));
                let oracle = coherent_closure_oracle(&a).unwrap();
                assert!(same_partition(&cc, &oracle), "coarsest mismatch on {g:?}");
            }
        }
    }

    #[test]
    fn orbit_partition_refines_colors() {
        for g in [graphs::cycle(6), graphs::paw(), graphs::wheel4(), graphs::path(5)] {
            let cc = graph_cc(&g);
            for orbit in orbits_k(&g, 2, 10).unwrap() {
                let colors: BTreeSet<usize> =
                    orbit.iter().map(|t| cc.color_of(t[0], t[1])).collect();
                assert_eq!(colors.len(), 1, "a 2-orbit must lie inside one color");
            }
        }
    }

    #[test]
    fn sketches_are_relabeling_invariant() {
        use crate::structure::Signature;
        let g = graphs::paw();
        let base = sketch(&g).unwrap();
        // A fixed nontrivial relabeling.
        let perm = [2usize, 0, 3, 1];
        let mut h = Structure::new(Signature::graph(), 4);
        for t in &g.relations["E"] {
            h.add_tuple("E", vec![perm[t[0]], perm[t[1]]]).unwrap();
        }
        assert_eq!(base, sketch(&h).unwrap());
    }

    #[test]
    fn sketch_distinguishes_c6_from_two_triangles() {
        let c6 = sketch(&graphs::cycle(6)).unwrap();
        let two_c3 =
            sketch(&disjoint_union(&graphs::cycle(3), &graphs::cycle(3)).unwrap()).unwrap();
        assert_ne!(c6, two_c3);
    }

    #[test]
    fn union_sketch_matches_direct_computation() {
        for (a, b) in [
            (graphs::cycle(5), graphs::cycle(5)),
            (graphs::complete(3), graphs::path(3)),
            (graphs::paw(), graphs::cycle(4)),
            (graphs::cycle(6), graphs::cycle(3)),
        ] {
            let direct = sketch(&disjoint_union(&a, &b).unwrap()).unwrap();
            let synth = sketch_of_union(&sketch(&a).unwrap(), &sketch(&b).unwrap()).unwrap();
            assert_eq!(direct, synth);
        }
    }

    #[test]
    fn fiber_sizes_recovered_from_tables() {
        let s = sketch(&graphs::paw()).unwrap();
        let total: u64 = s.num_vertices();
        assert_eq!(total, 4);
        let s = sketch(&graphs::cycle(7)).unwrap();
        assert_eq!(s.num_vertices(), 7);
    }

    #[test]
    fn restriction_round_trips() {
        // keep = all relations, class = all fibers: unchanged.
        let s = sketch(&graphs::paw()).unwrap();
        let keep: BTreeSet<String> = s.tau.iter().cloned().collect();
        let fibers: BTreeSet<usize> =
            (0..s.num_colors).filter(|&c| s.diagonal[c]).collect();
        assert_eq!(restrict_sketch(&s, &keep, &fibers).unwrap(), s);
        // Restricting a union of two different components to one side
        // recovers that side's sketch.
        let a = graphs::cycle(6);
        let b = graphs::cycle(3);
        let u = sketch(&disjoint_union(&a, &b).unwrap()).unwrap();
        let ua = sketch(&a).unwrap();
        // Pick the fibers of the C6 side: fiber sizes identify them.
        let side: BTreeSet<usize> = (0..u.num_colors)
            .filter(|&c| u.diagonal[c] && u.fiber_size(c) == 6)
            .collect();
        let keep: BTreeSet<String> = u.tau.iter().cloned().collect();
        assert_eq!(restrict_sketch(&u, &keep, &side).unwrap(), ua);
    }

    #[test]
    fn render_is_stable() {
        let s = sketch(&graphs::cycle(4)).unwrap();
        let r1 = render_sketch(&s);
        let r2 = render_sketch(&sketch(&graphs::cycle(4)).unwrap());
        assert_eq!(r1, r2);
        assert!(r1.starts_with("tau: E\n"));
    }
}
