//! Finite relational structures with optional colors and individualized
//! atoms, plus the brute-force group-theoretic oracles used to cross-check
//! the symbolic machinery: automorphism enumeration, k-orbit partitions,
//! isomorphism testing, and orbit-witness verification.
//!
//! The oracles are exact backtracking searches intended for desk-scale
//! inputs; a configurable cap (default 10 atoms, overridable via the
//! `CHOICELESS_ORACLE_CAP` environment variable or an explicit argument)
//! guards against accidental blow-ups.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::hfset::{self, HFValue, Perm};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StructError {
    #[error("universe size {size} exceeds the brute-force oracle cap {cap}")]
    CapExceeded { size: usize, cap: usize },
    #[error("signatures do not match")]
    SignatureMismatch,
    #[error("invalid structure: {0}")]
    Invalid(String),
    #[error("parse error on line {0}: {1}")]
    Parse(usize, String),
}

/// Relation names with arities. Order is significant for rendering only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Signature {
    pub relations: Vec<(String, usize)>,
}

impl Signature {
    pub fn new(relations: Vec<(String, usize)>) -> Result<Signature, StructError> {
        let mut names = BTreeSet::new();
        for (name, arity) in &relations {
            if !names.insert(name.clone()) {
                return Err(StructError::Invalid(format!("duplicate relation {name}")));
            }
            if *arity == 0 {
                return Err(StructError::Invalid(format!("relation {name} has arity 0")));
            }
        }
        Ok(Signature { relations })
    }

    /// The one-binary-relation graph signature `E`.
    pub fn graph() -> Signature {
        Signature { relations: vec![("E".to_string(), 2)] }
    }

    pub fn arity(&self, name: &str) -> Option<usize> {
        self.relations.iter().find(|(n, _)| n == name).map(|(_, a)| *a)
    }
}

/// A finite relational structure over universe {0, …, universe_size−1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Structure {
    pub signature: Signature,
    pub universe_size: usize,
    /// Tuples per relation name, kept sorted for deterministic output.
    pub relations: BTreeMap<String, BTreeSet<Vec<usize>>>,
    /// Optional total preorder on atoms as an ordered list of color classes.
    pub colors: Option<Vec<Vec<usize>>>,
    /// Individualized atoms, in order, no duplicates.
    pub indiv: Vec<usize>,
}

impl Structure {
    pub fn new(signature: Signature, universe_size: usize) -> Structure {
        let relations = signature
            .relations
            .iter()
            .map(|(n, _)| (n.clone(), BTreeSet::new()))
            .collect();
        Structure { signature, universe_size, relations, colors: None, indiv: Vec::new() }
    }

    pub fn add_tuple(&mut self, relation: &str, tuple: Vec<usize>) -> Result<(), StructError> {
        let arity = self
            .signature
            .arity(relation)
            .ok_or_else(|| StructError::Invalid(format!("unknown relation {relation}")))?;
        if tuple.len() != arity {
            return Err(StructError::Invalid(format!(
                "tuple {tuple:?} has wrong arity for {relation} (expected {arity})"
            )));
        }
        if tuple.iter().any(|&a| a >= self.universe_size) {
            return Err(StructError::Invalid(format!("tuple {tuple:?} exceeds the universe")));
        }
        self.relations.get_mut(relation).unwrap().insert(tuple);
        Ok(())
    }

    /// Adds both directions of an undirected edge to a binary relation.
    pub fn add_edge(&mut self, relation: &str, u: usize, v: usize) -> Result<(), StructError> {
        self.add_tuple(relation, vec![u, v])?;
        self.add_tuple(relation, vec![v, u])
    }

    pub fn has_tuple(&self, relation: &str, tuple: &[usize]) -> bool {
        self.relations.get(relation).is_some_and(|set| set.contains(tuple))
    }

    pub fn set_colors(&mut self, classes: Vec<Vec<usize>>) -> Result<(), StructError> {
        let mut seen = vec![false; self.universe_size];
        for class in &classes {
            for &a in class {
                if a >= self.universe_size || seen[a] {
                    return Err(StructError::Invalid(
                        "color classes must partition the universe".to_string(),
                    ));
                }
                seen[a] = true;
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(StructError::Invalid(
                "color classes must cover the universe".to_string(),
            ));
        }
        self.colors = Some(classes);
        Ok(())
    }

    pub fn individualize(&mut self, a: usize) -> Result<(), StructError> {
        if a >= self.universe_size {
            return Err(StructError::Invalid(format!("atom {a} exceeds the universe")));
        }
        if self.indiv.contains(&a) {
            return Err(StructError::Invalid(format!("atom {a} already individualized")));
        }
        self.indiv.push(a);
        Ok(())
    }

    /// Color class index of an atom (0 when the structure is uncolored).
    pub fn color_of(&self, a: usize) -> usize {
        match &self.colors {
            None => 0,
            Some(classes) => classes
                .iter()
                .position(|class| class.contains(&a))
                .expect("color classes partition the universe"),
        }
    }

    /// Relabels atoms through a bijection: relation tuples, color classes and
    /// the individualization tuple all move along.
    pub fn apply_perm(&self, phi: &Perm) -> Structure {
        assert_eq!(phi.degree(), self.universe_size);
        let relations = self
            .relations
            .iter()
            .map(|(name, tuples)| {
                let mapped = tuples
                    .iter()
                    .map(|t| t.iter().map(|&a| phi.apply(a)).collect::<Vec<_>>())
                    .collect();
                (name.clone(), mapped)
            })
            .collect();
        let colors = self.colors.as_ref().map(|classes| {
            classes
                .iter()
                .map(|class| {
                    let mut mapped: Vec<usize> = class.iter().map(|&a| phi.apply(a)).collect();
                    mapped.sort_unstable();
                    mapped
                })
                .collect()
        });
        Structure {
            signature: self.signature.clone(),
            universe_size: self.universe_size,
            relations,
            colors,
            indiv: self.indiv.iter().map(|&a| phi.apply(a)).collect(),
        }
    }

    /// Induced substructure on the given atoms (which are renumbered
    /// 0, 1, … in the given order). Colors and indiv are restricted.
    pub fn induced(&self, keep: &[usize]) -> Structure {
        let index: HashMap<usize, usize> =
            keep.iter().enumerate().map(|(i, &a)| (a, i)).collect();
        let relations = self
            .relations
            .iter()
            .map(|(name, tuples)| {
                let mapped = tuples
                    .iter()
                    .filter_map(|t| {
                        t.iter().map(|a| index.get(a).copied()).collect::<Option<Vec<_>>>()
                    })
                    .collect();
                (name.clone(), mapped)
            })
            .collect();
        let colors = self.colors.as_ref().map(|classes| {
            classes
                .iter()
                .map(|class| {
                    class.iter().filter_map(|a| index.get(a).copied()).collect::<Vec<_>>()
                })
                .filter(|class: &Vec<usize>| !class.is_empty())
                .collect()
        });
        Structure {
            signature: self.signature.clone(),
            universe_size: keep.len(),
            relations,
            colors,
            indiv: self.indiv.iter().filter_map(|a| index.get(a).copied()).collect(),
        }
    }

    /// Connected components of the Gaifman graph (atoms linked when they
    /// co-occur in some tuple), each as a sorted atom list, ordered by their
    /// smallest atom.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.universe_size];
        for tuples in self.relations.values() {
            for t in tuples {
                for &a in t {
                    for &b in t {
                        if a != b {
                            adj[a].insert(b);
                        }
                    }
                }
            }
        }
        let mut seen = vec![false; self.universe_size];
        let mut out = Vec::new();
        for start in 0..self.universe_size {
            if seen[start] {
                continue;
            }
            let mut comp = Vec::new();
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(v) = stack.pop() {
                comp.push(v);
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

/// Renders the structure text format:
/// `universe N;` then `R: (i,j) (k,l) ... ;` per relation, then optional
/// `colors: [0,1][2,3] ;` and `indiv: 0 3 ;` lines.
pub fn render_structure(s: &Structure) -> String {
    let mut out = String::new();
    writeln!(out, "universe {};", s.universe_size).unwrap();
    for (name, _) in &s.signature.relations {
        let tuples = &s.relations[name];
        write!(out, "{name}:").unwrap();
        for t in tuples {
            let parts: Vec<String> = t.iter().map(|a| a.to_string()).collect();
            write!(out, " ({})", parts.join(",")).unwrap();
        }
        writeln!(out, " ;").unwrap();
    }
    if let Some(classes) = &s.colors {
        write!(out, "colors:").unwrap();
        for class in classes {
            let parts: Vec<String> = class.iter().map(|a| a.to_string()).collect();
            write!(out, " [{}]", parts.join(",")).unwrap();
        }
        writeln!(out, " ;").unwrap();
    }
    if !s.indiv.is_empty() {
        let parts: Vec<String> = s.indiv.iter().map(|a| a.to_string()).collect();
        writeln!(out, "indiv: {} ;", parts.join(" ")).unwrap();
    }
    out
}

/// Parses the structure text format. Relation arities are inferred from the
/// first tuple of each relation; an empty relation gets arity 2.
pub fn parse_structure(text: &str) -> Result<Structure, StructError> {
    // Statements are `;`-terminated; line numbers in errors refer to the
    // statement count, which is close enough for hand-written files.
    let mut universe: Option<usize> = None;
    let mut rel_tuples: Vec<(String, Vec<Vec<usize>>)> = Vec::new();
    let mut colors: Option<Vec<Vec<usize>>> = None;
    let mut indiv: Vec<usize> = Vec::new();

    for (lineno, stmt) in text.split(';').enumerate() {
        let stmt = stmt.trim();
        if stmt.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        if let Some(rest) = stmt.strip_prefix("universe") {
            let n = rest
                .trim()
                .parse::<usize>()
                .map_err(|_| StructError::Parse(lineno, "bad universe size".into()))?;
            universe = Some(n);
        } else if let Some(rest) = stmt.strip_prefix("colors:") {
            let mut classes = Vec::new();
            for chunk in rest.split('[').skip(1) {
                let inner = chunk
                    .split(']')
                    .next()
                    .ok_or_else(|| StructError::Parse(lineno, "unterminated [".into()))?;
                let class = parse_numbers(inner, lineno)?;
                classes.push(class);
            }
            colors = Some(classes);
        } else if let Some(rest) = stmt.strip_prefix("indiv:") {
            indiv = parse_numbers(rest, lineno)?;
        } else if let Some(colon) = stmt.find(':') {
            let name = stmt[..colon].trim().to_string();
            if name.is_empty() || !name.chars().all(|c| c.is_alphanumeric() || c == '_') {
                return Err(StructError::Parse(lineno, format!("bad relation name {name:?}")));
            }
            let mut tuples = Vec::new();
            for chunk in stmt[colon + 1..].split('(').skip(1) {
                let inner = chunk
                    .split(')')
                    .next()
                    .ok_or_else(|| StructError::Parse(lineno, "unterminated (".into()))?;
                tuples.push(parse_numbers(inner, lineno)?);
            }
            rel_tuples.push((name, tuples));
        } else {
            return Err(StructError::Parse(lineno, format!("unrecognized statement {stmt:?}")));
        }
    }

    let universe =
        universe.ok_or_else(|| StructError::Parse(0, "missing `universe N;`".into()))?;
    let sig = Signature::new(
        rel_tuples
            .iter()
            .map(|(name, tuples)| {
                let arity = tuples.first().map(|t| t.len()).unwrap_or(2);
                (name.clone(), arity)
            })
            .collect(),
    )?;
    let mut s = Structure::new(sig, universe);
    for (name, tuples) in rel_tuples {
        for t in tuples {
            s.add_tuple(&name, t)?;
        }
    }
    if let Some(classes) = colors {
        s.set_colors(classes)?;
    }
    for a in indiv {
        s.individualize(a)?;
    }
    Ok(s)
}

fn parse_numbers(text: &str, lineno: usize) -> Result<Vec<usize>, StructError> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| StructError::Parse(lineno, format!("bad number {p:?}")))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Disjoint union
// ---------------------------------------------------------------------------

/// Disjoint union: B's atoms are shifted past A's. Colors are concatenated
/// positionally when both sides are colored (or synthesized as the two
/// component classes when neither is); indiv tuples are concatenated.
pub fn disjoint_union(a: &Structure, b: &Structure) -> Result<Structure, StructError> {
    if a.signature != b.signature {
        return Err(StructError::SignatureMismatch);
    }
    let shift = a.universe_size;
    let mut out = Structure::new(a.signature.clone(), a.universe_size + b.universe_size);
    for (name, tuples) in &a.relations {
        for t in tuples {
            out.add_tuple(name, t.clone())?;
        }
    }
    for (name, tuples) in &b.relations {
        for t in tuples {
            out.add_tuple(name, t.iter().map(|&x| x + shift).collect())?;
        }
    }
    match (&a.colors, &b.colors) {
        (Some(ca), Some(cb)) => {
            let mut classes = ca.clone();
            classes.extend(
                cb.iter().map(|class| class.iter().map(|&x| x + shift).collect::<Vec<_>>()),
            );
            out.set_colors(classes)?;
        }
        (None, None) => {}
        _ => {
            return Err(StructError::Invalid(
                "cannot union a colored with an uncolored structure".to_string(),
            ))
        }
    }
    out.indiv = a.indiv.clone();
    out.indiv.extend(b.indiv.iter().map(|&x| x + shift));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Brute-force oracles
// ---------------------------------------------------------------------------

/// Default brute-force cap; `CHOICELESS_ORACLE_CAP` overrides.
pub fn default_oracle_cap() -> usize {
    std::env::var("CHOICELESS_ORACLE_CAP")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(10)
}

fn check_cap(s: &Structure, cap: usize) -> Result<(), StructError> {
    if s.universe_size > cap {
        Err(StructError::CapExceeded { size: s.universe_size, cap })
    } else {
        Ok(())
    }
}

/// Stable joint color refinement over several structures: initial colors
/// come from (declared color class, indiv position, per-relation incidence
/// counts), then iterated neighborhood refinement until stable. Colors are
/// comparable across the input structures, which makes this usable as a
/// pruning invariant for both automorphism and isomorphism search.
fn refine_joint(structures: &[&Structure]) -> Vec<Vec<u64>> {
    #[derive(PartialEq, Eq, PartialOrd, Ord, Hash, Clone)]
    struct Sig(Vec<u64>, Vec<(String, usize, Vec<u64>)>);

    let mut colorings: Vec<Vec<u64>> = structures
        .iter()
        .map(|s| {
            (0..s.universe_size)
                .map(|v| {
                    let indiv_pos = s.indiv.iter().position(|&a| a == v);
                    // Mix declared color class and indiv position into an
                    // initial value; exact packing is irrelevant, only
                    // equality matters.
                    let mut h = s.color_of(v) as u64;
                    h = h * 1000 + indiv_pos.map(|p| p as u64 + 1).unwrap_or(0);
                    h
                })
                .collect()
        })
        .collect();

    loop {
        // Per-vertex signature: current color + sorted contributions from
        // every tuple the vertex occurs in (relation, position, colors of
        // the other entries).
        let mut sigs: Vec<Vec<Sig>> = Vec::new();
        for (si, s) in structures.iter().enumerate() {
            let mut per_vertex: Vec<Vec<(String, usize, Vec<u64>)>> =
                vec![Vec::new(); s.universe_size];
            for (name, tuples) in &s.relations {
                for t in tuples {
                    for (pos, &v) in t.iter().enumerate() {
                        let others: Vec<u64> =
                            t.iter().map(|&w| colorings[si][w]).collect();
                        per_vertex[v].push((name.clone(), pos, others));
                    }
                }
            }
            sigs.push(
                (0..s.universe_size)
                    .map(|v| {
                        let mut contribs = std::mem::take(&mut per_vertex[v]);
                        contribs.sort();
                        Sig(vec![colorings[si][v]], contribs)
                    })
                    .collect(),
            );
        }
        // Canonical renaming shared across structures.
        let mut all: Vec<&Sig> = sigs.iter().flatten().collect();
        all.sort();
        all.dedup();
        let rank: HashMap<&Sig, u64> =
            all.iter().enumerate().map(|(i, s)| (*s, i as u64)).collect();
        let next: Vec<Vec<u64>> = sigs
            .iter()
            .map(|vs| vs.iter().map(|s| rank[s]).collect())
            .collect();
        if next == colorings {
            return colorings;
        }
        colorings = next;
    }
}

/// Backtracking search for bijections source→target respecting relations,
/// colors, and indiv positions. With `find_all` false, stops at the first
/// hit. Identical source/target gives the automorphism group.
fn search_isos(source: &Structure, target: &Structure, find_all: bool) -> Vec<Perm> {
    if source.universe_size != target.universe_size
        || source.signature != target.signature
        || source.indiv.len() != target.indiv.len()
    {
        return Vec::new();
    }
    for (name, tuples) in &source.relations {
        if tuples.len() != target.relations[name].len() {
            return Vec::new();
        }
    }
    let refined = refine_joint(&[source, target]);
    let (src_colors, tgt_colors) = (&refined[0], &refined[1]);
    {
        let mut a = src_colors.clone();
        let mut b = tgt_colors.clone();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Vec::new();
        }
    }
    let n = source.universe_size;
    // Process vertices rarest-refined-color first to fail fast.
    let mut order: Vec<usize> = (0..n).collect();
    let mut freq: HashMap<u64, usize> = HashMap::new();
    for &c in src_colors {
        *freq.entry(c).or_default() += 1;
    }
    order.sort_by_key(|&v| (freq[&src_colors[v]], src_colors[v], v));

    let mut forward: Vec<Option<usize>> = vec![None; n];
    let mut backward: Vec<Option<usize>> = vec![None; n];
    let mut found = Vec::new();

    // Consistency of assigning v→w given the current partial map: every
    // source tuple fully assigned after the extension must map into the
    // target relation, and symmetrically for target tuples.
    fn consistent(
        source: &Structure,
        target: &Structure,
        forward: &[Option<usize>],
        backward: &[Option<usize>],
        v: usize,
        w: usize,
    ) -> bool {
        for (name, tuples) in &source.relations {
            let tgt = &target.relations[name];
            for t in tuples {
                if !t.contains(&v) {
                    continue;
                }
                let image: Option<Vec<usize>> = t
                    .iter()
                    .map(|&x| if x == v { Some(w) } else { forward[x] })
                    .collect();
                if let Some(img) = image {
                    if !tgt.contains(&img) {
                        return false;
                    }
                }
            }
            let src = tuples;
            for t in tgt {
                if !t.contains(&w) {
                    continue;
                }
                let pre: Option<Vec<usize>> = t
                    .iter()
                    .map(|&x| if x == w { Some(v) } else { backward[x] })
                    .collect();
                if let Some(p) = pre {
                    if !src.contains(&p) {
                        return false;
                    }
                }
            }
        }
        true
    }

    // Two pruning regimes. Small structures keep the one-shot refinement
    // (recomputing it per node costs more than it saves). Larger ones
    // re-refine jointly after every assignment, with the partial map
    // individualized, and pick the next vertex from the rarest refined
    // class — without this, refinement-resistant families (CFI graphs)
    // blow the backtracking up exponentially. Both regimes are complete:
    // refinement only discards candidates no isomorphism can use.
    let dynamic = n > 12;

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        source: &Structure,
        target: &Structure,
        order: &[usize],
        src_colors: &[u64],
        tgt_colors: &[u64],
        dynamic: bool,
        stack: &mut Vec<(usize, usize)>,
        forward: &mut Vec<Option<usize>>,
        backward: &mut Vec<Option<usize>>,
        found: &mut Vec<Perm>,
        find_all: bool,
    ) {
        let n = source.universe_size;
        let depth = stack.len();
        if depth == n {
            let map: Vec<usize> = forward.iter().map(|x| x.unwrap()).collect();
            found.push(Perm::new(map).expect("search produces bijections"));
            return;
        }
        let refined: Option<(Vec<u64>, Vec<u64>)> = if dynamic {
            let mut s = source.clone();
            let mut t = target.clone();
            for &(v, w) in stack.iter() {
                s.indiv.push(v);
                t.indiv.push(w);
            }
            let r = refine_joint(&[&s, &t]);
            let mut x = r[0].clone();
            let mut y = r[1].clone();
            x.sort_unstable();
            y.sort_unstable();
            if x != y {
                // The refined color histograms differ: no extension exists.
                return;
            }
            Some((r[0].clone(), r[1].clone()))
        } else {
            None
        };
        let (sc, tc): (&[u64], &[u64]) = match &refined {
            Some((a, b)) => (a, b),
            None => (src_colors, tgt_colors),
        };
        let v = if dynamic {
            let mut freq: HashMap<u64, usize> = HashMap::new();
            for x in 0..n {
                if forward[x].is_none() {
                    *freq.entry(sc[x]).or_default() += 1;
                }
            }
            (0..n)
                .filter(|&x| forward[x].is_none())
                .min_by_key(|&x| (freq[&sc[x]], sc[x], x))
                .expect("depth < n leaves an unassigned vertex")
        } else {
            order[depth]
        };
        // indiv must match positionally.
        let forced = source.indiv.iter().position(|&a| a == v).map(|p| target.indiv[p]);
        for w in 0..target.universe_size {
            if !find_all && !found.is_empty() {
                return;
            }
            if backward[w].is_some() || tc[w] != sc[v] {
                continue;
            }
            if let Some(f) = forced {
                if w != f {
                    continue;
                }
            }
            if !consistent(source, target, forward, backward, v, w) {
                continue;
            }
            forward[v] = Some(w);
            backward[w] = Some(v);
            stack.push((v, w));
            recurse(
                source, target, order, src_colors, tgt_colors, dynamic, stack, forward,
                backward, found, find_all,
            );
            stack.pop();
            forward[v] = None;
            backward[w] = None;
        }
    }

    let mut stack = Vec::new();
    recurse(
        source, target, &order, src_colors, tgt_colors, dynamic, &mut stack, &mut forward,
        &mut backward, &mut found, find_all,
    );
    found
}

/// The full automorphism group of (A, colors, indiv) by backtracking search.
pub fn automorphisms(a: &Structure, cap: usize) -> Result<Vec<Perm>, StructError> {
    check_cap(a, cap)?;
    Ok(search_isos(a, a, true))
}

/// Automorphisms that additionally fix every listed HF value.
pub fn automorphisms_stabilizing(
    a: &Structure,
    stabilize: &[HFValue],
    cap: usize,
) -> Result<Vec<Perm>, StructError> {
    let auts = automorphisms(a, cap)?;
    Ok(auts
        .into_iter()
        .filter(|phi| stabilize.iter().all(|v| hfset::apply_permutation(v, phi) == *v))
        .collect())
}

/// Exact isomorphism test respecting colors positionally (class i must map
/// to class i) and indiv tuples positionally.
pub fn is_isomorphic(a: &Structure, b: &Structure, cap: usize) -> Result<bool, StructError> {
    check_cap(a, cap)?;
    check_cap(b, cap)?;
    if a.universe_size != b.universe_size {
        return Ok(false);
    }
    if a.signature != b.signature {
        return Err(StructError::SignatureMismatch);
    }
    match (&a.colors, &b.colors) {
        (Some(ca), Some(cb)) => {
            if ca.len() != cb.len()
                || ca.iter().zip(cb.iter()).any(|(x, y)| x.len() != y.len())
            {
                return Ok(false);
            }
        }
        (None, None) => {}
        _ => return Ok(false),
    }
    Ok(!search_isos(a, b, false).is_empty())
}

/// Partition of A^k under the automorphism action. Classes are sorted
/// internally and ordered by their least tuple.
pub fn orbits_k(a: &Structure, k: usize, cap: usize) -> Result<Vec<Vec<Vec<usize>>>, StructError> {
    let auts = automorphisms(a, cap)?;
    let n = a.universe_size;
    let mut tuples: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..k {
        tuples = tuples
            .into_iter()
            .flat_map(|t| {
                (0..n).map(move |x| {
                    let mut t2 = t.clone();
                    t2.push(x);
                    t2
                })
            })
            .collect();
    }
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut classes = Vec::new();
    for t in &tuples {
        if seen.contains(t) {
            continue;
        }
        let mut class: BTreeSet<Vec<usize>> = BTreeSet::new();
        for phi in &auts {
            class.insert(t.iter().map(|&x| phi.apply(x)).collect());
        }
        for u in &class {
            seen.insert(u.clone());
        }
        classes.push(class.into_iter().collect());
    }
    Ok(classes)
}

/// The orbit of an HF value under automorphisms stabilizing the given values.
pub fn hf_orbit(
    a: &Structure,
    stabilize: &[HFValue],
    v: &HFValue,
    cap: usize,
) -> Result<Vec<HFValue>, StructError> {
    let auts = automorphisms_stabilizing(a, stabilize, cap)?;
    let mut out: Vec<HFValue> = Vec::new();
    for phi in &auts {
        let img = hfset::apply_permutation(v, phi);
        if !out.contains(&img) {
            out.push(img);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Witness sets
// ---------------------------------------------------------------------------

/// Atom maps decoded from an HF value; validity is judged later by
/// [`is_orbit_witnessed`], decoding itself is permissive.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct WitnessSet {
    pub maps: Vec<BTreeMap<usize, usize>>,
    /// How many elements of the source value were skipped as malformed.
    pub skipped: usize,
}

/// Decodes a set value into atom maps: every element that is a set of
/// Kuratowski atom-pairs forming a functional relation becomes a map; other
/// elements are counted as skipped.
pub fn decode_witnesses(w: &HFValue) -> WitnessSet {
    let mut out = WitnessSet::default();
    'elems: for elem in w.children() {
        if !elem.is_set() {
            out.skipped += 1;
            continue;
        }
        let mut map = BTreeMap::new();
        for pair in elem.children() {
            let Some((x, y)) = hfset::decode_kuratowski(pair) else {
                out.skipped += 1;
                continue 'elems;
            };
            let (Some(xi), Some(yi)) = (x.as_atom(), y.as_atom()) else {
                out.skipped += 1;
                continue 'elems;
            };
            if let Some(&prev) = map.get(&xi) {
                if prev != yi {
                    out.skipped += 1; // not functional
                    continue 'elems;
                }
            }
            map.insert(xi, yi);
        }
        if !out.maps.contains(&map) {
            out.maps.push(map);
        }
    }
    out
}

/// Converts a decoded map into a total bijection on the structure's
/// universe, or `None` when it is partial or non-injective.
pub fn witness_map_to_perm(map: &BTreeMap<usize, usize>, universe_size: usize) -> Option<Perm> {
    if map.len() != universe_size {
        return None;
    }
    let mut vec = vec![0usize; universe_size];
    for (&k, &v) in map {
        if k >= universe_size {
            return None;
        }
        vec[k] = v;
    }
    Perm::new(vec).ok()
}

/// Orbit-witnessing check: every map in M must be a (total) automorphism of
/// (A, colors, indiv) that fixes every value in `stabilize`, and for every
/// ordered pair b, c of elements of N some map must send b to c.
pub fn is_orbit_witnessed(
    a: &Structure,
    stabilize: &[HFValue],
    n: &HFValue,
    m: &WitnessSet,
) -> bool {
    if !n.is_set() {
        return false;
    }
    if m.skipped > 0 {
        return false; // a malformed element cannot be an automorphism
    }
    let mut perms = Vec::new();
    for map in &m.maps {
        let Some(perm) = witness_map_to_perm(map, a.universe_size) else {
            return false;
        };
        if !is_automorphism(a, &perm) {
            return false;
        }
        if !stabilize.iter().all(|v| hfset::apply_permutation(v, &perm) == *v) {
            return false;
        }
        perms.push(perm);
    }
    for b in n.children() {
        for c in n.children() {
            if !perms.iter().any(|phi| hfset::apply_permutation(b, phi) == *c) {
                return false;
            }
        }
    }
    true
}

/// Whether a bijection is an automorphism of (A, colors, indiv).
pub fn is_automorphism(a: &Structure, phi: &Perm) -> bool {
    if phi.degree() != a.universe_size {
        return false;
    }
    for tuples in a.relations.values() {
        for t in tuples {
            let img: Vec<usize> = t.iter().map(|&x| phi.apply(x)).collect();
            if !tuples.contains(&img) {
                return false;
            }
        }
    }
    if let Some(classes) = &a.colors {
        for class in classes {
            for &x in class {
                if !class.contains(&phi.apply(x)) {
                    return false;
                }
            }
        }
    }
    a.indiv.iter().all(|&x| phi.apply(x) == x)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
