//! Canonization by iterated orbit individualization.
//!
//! A canonical labeling is grown one atom at a time: at every round an orbit
//! chooser names a class of interchangeable atoms, one member is picked
//! arbitrarily, and explicit automorphisms witness that the picked atom could
//! have been any other member without changing the final relabeled structure.
//! The relabeled structure is therefore a complete invariant: two structures
//! get the same canonical form exactly when they are isomorphic.
//!
//! The module also emits the same procedure as a witnessed-choice program
//! (see [`emit_canon_edge_query`]) whose evaluation must reproduce the native
//! canonical form edge by edge.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::eval::{self, ChoicePolicy, EvalError, Verdict};
use crate::hfset::{self, compare_pure, HFValue, HfError, Perm};
use crate::structure::{self, is_automorphism, Structure, StructError};

#[derive(Debug, Error)]
pub enum CanonError {
    #[error("structure oracle failed: {0}")]
    Struct(#[from] StructError),
    #[error("set operation failed: {0}")]
    Hf(#[from] HfError),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("orbit chooser failed: {0}")]
    Chooser(String),
    #[error("generated program failed: {0}")]
    Program(String),
}

// ---------------------------------------------------------------------------
// Orbit choosers
// ---------------------------------------------------------------------------

/// Strategy for naming, at each round, one atom class of the structure with
/// the current prefix individualized. The returned class must be a 1-orbit
/// disjoint from the prefix, and which class is returned may only depend on
/// the structure up to isomorphism (otherwise equal canonical forms no longer
/// imply isomorphism).
pub enum OrbitChooser {
    /// Orbits from the automorphism oracle, ordered by the canonical form of
    /// the structure with a representative individualized.
    BruteForce {
        /// Upper bound handed to the automorphism search.
        cap: usize,
    },
    /// No oracle: candidate atoms are grouped by the canonical form of the
    /// structure with that atom individualized, and the class with the least
    /// form is returned. The groups coincide with the orbits because the
    /// canonical form (built recursively on longer prefixes) is a complete
    /// invariant.
    Invariant,
    /// Classes of a one-round descriptor — degree plus the prefix positions
    /// of adjacent individualized vertices — ordered degree-first. Only valid
    /// on graphs where these classes are genuine orbits at every round (all
    /// connected graphs on up to four vertices, wheels, …); mirrors exactly
    /// the selector of the generated witnessed-choice program.
    Descriptor,
    /// Caller-supplied selector, e.g. a closed-form chooser for a structure
    /// family with known orbits.
    Custom(Box<dyn Fn(&Structure, &[usize]) -> Result<Vec<usize>, String> + Send + Sync>),
}

/// Descriptor of the [`OrbitChooser::Descriptor`] strategy: degree together
/// with the 1-based prefix positions of adjacent individualized vertices.
fn vertex_descriptor(a: &Structure, prefix: &[usize], u: usize) -> (usize, BTreeSet<usize>) {
    let mut degree = 0;
    let mut positions = BTreeSet::new();
    for v in 0..a.universe_size {
        if v != u && a.has_tuple("E", &[u, v]) {
            degree += 1;
            if let Some(p) = prefix.iter().position(|&w| w == v) {
                positions.insert(p + 1);
            }
        }
    }
    (degree, positions)
}

/// Total order on descriptors: degree first, then the position sets compared
/// at the least element of their symmetric difference (the set owning it is
/// the larger). Mirrors the `ltdesc` formula of the generated program.
fn descriptor_cmp(a: &(usize, BTreeSet<usize>), b: &(usize, BTreeSet<usize>)) -> Ordering {
    match a.0.cmp(&b.0) {
        Ordering::Equal => {}
        other => return other,
    }
    if a.1 == b.1 {
        return Ordering::Equal;
    }
    let in_b = a
        .1
        .symmetric_difference(&b.1)
        .min()
        .map(|m| b.1.contains(m))
        .unwrap_or(false);
    if in_b {
        Ordering::Less
    } else {
        Ordering::Greater
    }
}

fn descriptor_orbit(a: &Structure, prefix: &[usize], candidates: &[usize]) -> Vec<usize> {
    let descs: Vec<(usize, BTreeSet<usize>)> =
        candidates.iter().map(|&u| vertex_descriptor(a, prefix, u)).collect();
    let best = descs.iter().min_by(|x, y| descriptor_cmp(x, y)).expect("non-empty").clone();
    candidates
        .iter()
        .zip(&descs)
        .filter(|(_, d)| descriptor_cmp(d, &best) == Ordering::Equal)
        .map(|(&u, _)| u)
        .collect()
}

// ---------------------------------------------------------------------------
// Canonization engine
// ---------------------------------------------------------------------------

/// One individualization round: the orbit offered by the chooser, the member
/// that was picked, and one automorphism per member sending the pick there
/// while fixing everything individualized before.
#[derive(Clone, Debug)]
pub struct RoundWitness {
    pub orbit: Vec<usize>,
    pub chosen: usize,
    pub maps: Vec<Perm>,
}

/// Result of a canonization run.
#[derive(Debug)]
pub struct CanonResult {
    /// The produced atom order: position `i` holds the atom labeled `i`.
    pub order: Vec<usize>,
    /// The structure relabeled along `order` — the canonical form.
    pub canon: Structure,
    /// The canonical form encoded as a pure set, comparable across runs.
    pub invariant: HFValue,
    /// Witnessing automorphisms, one round per atom beyond the initial
    /// individualized prefix.
    pub witness_log: Vec<RoundWitness>,
}

struct Engine<'a> {
    a: &'a Structure,
    chooser: &'a OrbitChooser,
    inv_memo: HashMap<Vec<usize>, HFValue>,
    label_memo: HashMap<Vec<usize>, Vec<usize>>,
}

impl<'a> Engine<'a> {
    fn new(a: &'a Structure, chooser: &'a OrbitChooser) -> Engine<'a> {
        Engine { a, chooser, inv_memo: HashMap::new(), label_memo: HashMap::new() }
    }

    fn with_prefix(&self, prefix: &[usize]) -> Structure {
        let mut s = self.a.clone();
        s.indiv = prefix.to_vec();
        s
    }

    /// The orbit offered for the given prefix, sorted ascending.
    fn choose(&mut self, prefix: &[usize]) -> Result<Vec<usize>, CanonError> {
        let candidates: Vec<usize> =
            (0..self.a.universe_size).filter(|u| !prefix.contains(u)).collect();
        if candidates.is_empty() {
            return Err(CanonError::Chooser("no atoms left to individualize".to_string()));
        }
        match self.chooser {
            OrbitChooser::BruteForce { cap } => {
                let ind = self.with_prefix(prefix);
                let orbits = structure::orbits_k(&ind, 1, *cap)?;
                let mut best: Option<(HFValue, Vec<usize>)> = None;
                for class in orbits {
                    let members: Vec<usize> = class.iter().map(|t| t[0]).collect();
                    if members.iter().any(|m| prefix.contains(m)) {
                        continue;
                    }
                    let mut p = prefix.to_vec();
                    p.push(members[0]);
                    let inv = self.invariant(&p)?;
                    let better = match &best {
                        None => true,
                        Some((b, _)) => compare_pure(&inv, b)? == Ordering::Less,
                    };
                    if better {
                        best = Some((inv, members));
                    }
                }
                best.map(|(_, m)| m)
                    .ok_or_else(|| CanonError::Chooser("no orbit disjoint from prefix".into()))
            }
            OrbitChooser::Invariant => {
                let mut groups: Vec<(HFValue, Vec<usize>)> = Vec::new();
                for &u in &candidates {
                    let mut p = prefix.to_vec();
                    p.push(u);
                    let inv = self.invariant(&p)?;
                    match groups.iter_mut().find(|(i, _)| *i == inv) {
                        Some((_, members)) => members.push(u),
                        None => groups.push((inv, vec![u])),
                    }
                }
                let mut best = groups.pop().expect("candidates were non-empty");
                for g in groups {
                    if compare_pure(&g.0, &best.0)? == Ordering::Less {
                        best = g;
                    }
                }
                Ok(best.1)
            }
            OrbitChooser::Descriptor => Ok(descriptor_orbit(self.a, prefix, &candidates)),
            OrbitChooser::Custom(f) => {
                let mut orbit = f(self.a, prefix).map_err(CanonError::Chooser)?;
                orbit.sort_unstable();
                Ok(orbit)
            }
        }
    }

    /// Deterministic completion of a prefix to a full atom order, always
    /// taking the least member of the offered orbit.
    fn complete(&mut self, prefix: &[usize]) -> Result<Vec<usize>, CanonError> {
        if let Some(l) = self.label_memo.get(prefix) {
            return Ok(l.clone());
        }
        let mut p = prefix.to_vec();
        while p.len() < self.a.universe_size {
            let orbit = self.choose(&p)?;
            p.push(orbit[0]);
        }
        self.label_memo.insert(prefix.to_vec(), p.clone());
        Ok(p)
    }

    /// Canonical form of the structure with the prefix individualized,
    /// encoded as a pure set.
    fn invariant(&mut self, prefix: &[usize]) -> Result<HFValue, CanonError> {
        if let Some(v) = self.inv_memo.get(prefix) {
            return Ok(v.clone());
        }
        let order = self.complete(prefix)?;
        let canon = relabel(&self.with_prefix(prefix), &order);
        let enc = encode_structure(&canon)?;
        self.inv_memo.insert(prefix.to_vec(), enc.clone());
        Ok(enc)
    }
}

/// Relabels the structure so that the atom at `order[i]` becomes `i`.
fn relabel(a: &Structure, order: &[usize]) -> Structure {
    let mut map = vec![0usize; a.universe_size];
    for (i, &b) in order.iter().enumerate() {
        map[b] = i;
    }
    a.apply_perm(&Perm::new(map).expect("a full atom order is a permutation"))
}

/// Encodes a structure as a pure set: universe size, the tuple set of every
/// relation (in name order), the color classes, and the individualized atoms,
/// all with atoms replaced by their ordinals. Equal encodings mean equal
/// structures over the same signature.
fn encode_structure(c: &Structure) -> Result<HFValue, HfError> {
    let ord = |a: usize| hfset::von_neumann(a as u64);
    let mut parts = vec![hfset::von_neumann(c.universe_size as u64)];
    for tuples in c.relations.values() {
        let encoded = tuples
            .iter()
            .map(|t| hfset::encode_tuple(&t.iter().map(|&a| ord(a)).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>, _>>()?;
        parts.push(hfset::make_set(encoded)?);
    }
    let colors = match &c.colors {
        Some(classes) => {
            let encoded = classes
                .iter()
                .map(|cl| hfset::make_set(cl.iter().map(|&a| ord(a)).collect()))
                .collect::<Result<Vec<_>, _>>()?;
            hfset::encode_tuple(&encoded)?
        }
        None => hfset::empty(),
    };
    parts.push(colors);
    parts.push(hfset::encode_tuple(&c.indiv.iter().map(|&a| ord(a)).collect::<Vec<_>>())?);
    hfset::encode_tuple(&parts)
}

/// Canonizes a structure: repeatedly asks the chooser for an orbit, picks one
/// member by policy, and records automorphisms witnessing that every other
/// member would have led to the same canonical form. Atoms already
/// individualized on the input form the initial prefix and keep the lowest
/// labels.
pub fn gurevich_canon(
    a: &Structure,
    chooser: &OrbitChooser,
    policy: ChoicePolicy,
) -> Result<CanonResult, CanonError> {
    let mut eng = Engine::new(a, chooser);
    let mut rng = match policy {
        ChoicePolicy::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        ChoicePolicy::FirstCanonical => None,
    };
    let mut prefix = a.indiv.clone();
    let mut witness_log = Vec::new();
    while prefix.len() < a.universe_size {
        let orbit = eng.choose(&prefix)?;
        let chosen = match &mut rng {
            Some(r) => orbit[r.gen_range(0..orbit.len())],
            None => orbit[0],
        };
        // Two deterministic completions differing only in the individualized
        // orbit member; matching their labels position by position yields an
        // automorphism sending the pick to that member.
        let mut with_chosen = prefix.clone();
        with_chosen.push(chosen);
        let base = eng.complete(&with_chosen)?;
        let mut maps = Vec::with_capacity(orbit.len());
        for &v in &orbit {
            let mut with_v = prefix.clone();
            with_v.push(v);
            let other = eng.complete(&with_v)?;
            let mut m = vec![0usize; a.universe_size];
            for (j, &c) in base.iter().enumerate() {
                m[c] = other[j];
            }
            maps.push(Perm::new(m)?);
        }
        witness_log.push(RoundWitness { orbit, chosen, maps });
        prefix.push(chosen);
    }
    let canon = relabel(a, &prefix);
    let invariant = encode_structure(&canon)?;
    Ok(CanonResult { order: prefix, canon, invariant, witness_log })
}

/// The canonical form of a structure as a pure set value — a complete
/// isomorphism invariant for the given chooser.
pub fn complete_invariant(a: &Structure, chooser: &OrbitChooser) -> Result<HFValue, CanonError> {
    Engine::new(a, chooser).invariant(&a.indiv.clone())
}

/// Replays a canonization result against the structure directly: every
/// logged map must be an automorphism fixing the atoms individualized before
/// its round and sending the round's pick to its orbit member.
pub fn witnesses_valid(a: &Structure, res: &CanonResult) -> bool {
    let base_len = a.indiv.len();
    for (r, rw) in res.witness_log.iter().enumerate() {
        let prefix = &res.order[..base_len + r];
        if rw.chosen != res.order[base_len + r]
            || !rw.orbit.contains(&rw.chosen)
            || rw.maps.len() != rw.orbit.len()
        {
            return false;
        }
        for (&v, phi) in rw.orbit.iter().zip(&rw.maps) {
            if !is_automorphism(a, phi)
                || phi.apply(rw.chosen) != v
                || prefix.iter().any(|&p| phi.apply(p) != p)
            {
                return false;
            }
        }
    }
    true
}

/// Partitions all k-tuples of atoms by the canonical form of the structure
/// with the tuple individualized (appended to the existing prefix, repeats
/// dropped). Classes are ordered by their form, tuples lexicographically;
/// with a sound chooser the classes are exactly the k-orbits.
pub fn distinguishable_orbits(
    a: &Structure,
    chooser: &OrbitChooser,
    k: usize,
) -> Result<Vec<Vec<Vec<usize>>>, CanonError> {
    let mut eng = Engine::new(a, chooser);
    let n = a.universe_size;
    let mut classes: Vec<(HFValue, Vec<Vec<usize>>)> = Vec::new();
    let mut tuple = vec![0usize; k];
    loop {
        let mut prefix = a.indiv.clone();
        for &e in &tuple {
            if !prefix.contains(&e) {
                prefix.push(e);
            }
        }
        let inv = eng.invariant(&prefix)?;
        match classes.iter_mut().find(|(i, _)| *i == inv) {
            Some((_, members)) => members.push(tuple.clone()),
            None => classes.push((inv, vec![tuple.clone()])),
        }
        // Next tuple in lexicographic order.
        let mut pos = k;
        while pos > 0 && tuple[pos - 1] + 1 == n {
            tuple[pos - 1] = 0;
            pos -= 1;
        }
        if pos == 0 {
            break;
        }
        tuple[pos - 1] += 1;
    }
    classes.sort_by(|x, y| compare_pure(&x.0, &y.0).expect("encodings are pure"));
    Ok(classes.into_iter().map(|(_, members)| members).collect())
}

/// Isomorphism test via canonical forms, component by component: split both
/// structures into connected components, canonize each, and compare the
/// sorted lists of component forms.
pub fn iso_by_canon(
    a: &Structure,
    b: &Structure,
    chooser: &OrbitChooser,
) -> Result<bool, CanonError> {
    if a.signature != b.signature || a.universe_size != b.universe_size {
        return Ok(false);
    }
    let forms = |s: &Structure| -> Result<Vec<HFValue>, CanonError> {
        let mut out = Vec::new();
        for comp in s.components() {
            out.push(complete_invariant(&s.induced(&comp), chooser)?);
        }
        out.sort_by(hfset::canonical_cmp);
        Ok(out)
    };
    Ok(forms(a)? == forms(b)?)
}

// ---------------------------------------------------------------------------
// Witnessed-choice program generator
// ---------------------------------------------------------------------------

/// Shared definitions of the generated canonization program: ordinal helpers,
/// the descriptor-based orbit selector `orb`, the deterministic labeling
/// `tlabel`, and the witness table `twit`.
fn canon_preamble() -> String {
    // Note the dc binders are named cx/cy so that substituting the outer wsc
    // variables into tlabel's arguments cannot be captured.
    "\
# Canonical-form edge query. A total vertex order is grown by repeatedly
# individualizing one vertex from the minimal descriptor class (degree plus
# adjacency to already ordered vertices); explicit automorphism witnesses
# certify each class, and the query tests one edge of the reordered graph.

signature { E: 2; }

bound 10*n + 20;

term zero := empty;
term succ(k) := k cup pair(k, k);
term one := succ(zero);
term kpair(a, b) := pair(pair(a, a), pair(a, b));

formula mem(z, w) := ~({ v | v in w, v = z } = empty);
formula lt(a, b) := mem(a, b);

# Components of an ordered pair.
term fst(p) := unique({ z | z in union(p), { w | w in p, ~mem(z, w) } = empty });
term snd(p) := unique({ z | z in union(p), ~(z = fst(p)) }
                  cup { z | z in union(p), card(union(p)) = one });

# 1-based position of u in the tuple it, or the empty set when absent.
term pos(u, it) := unique({ succ(j) | j in card(atoms), proj(it, succ(j)) = u });

term cand(it) := { u | u in atoms, pos(u, it) = empty };
term deg(u) := card({ v | v in atoms, E(u, v) });
term nbrpos(u, it) := { pos(v, it) | v in atoms, E(u, v) /\\ ~(pos(v, it) = empty) };
term desc(u, it) := kpair(deg(u), nbrpos(u, it));

# Total order on descriptors: degree first, then the position sets compared
# at the least element of their symmetric difference.
term symdiff(s, t) := (s diff t) cup (t diff s);
term minsym(s, t) := unique({ z | z in symdiff(s, t),
                              { w | w in symdiff(s, t), lt(w, z) } = empty });
formula ltset(s, t) := ~(s = t) /\\ mem(minsym(s, t), t);
formula ltdesc(c, d) := lt(fst(c), fst(d))
                     \\/ ((fst(c) = fst(d)) /\\ ltset(snd(c), snd(d)));

term descs(it) := { desc(u, it) | u in cand(it), u = u };
term mindesc(it) := unique({ c | c in descs(it),
                             { d | d in descs(it), ltdesc(d, c) } = empty });

# The minimal descriptor class among the not-yet-ordered vertices.
term orb(it) := { u | u in cand(it), desc(u, it) = mindesc(it) };

# Deterministic completion of the prefix it, resolving every choice by the
# total order o.
term tlabel(o, it) := dc cx cy (concat(it, concat(cx, cy)); orb(concat(it, cx)); o);

term labs(o, it) := { tlabel(o, concat(it, u)) | u in orb(it), u = u };

# The atom map reading two completions off position by position.
term maprow(l1, l2) := { kpair(proj(l1, succ(j)), proj(l2, succ(j)))
                       | j in card(atoms), j = j };

# Witnesses for the class at stage it: one map per ordered pair of
# completions. The ls binder makes the completion set evaluate once.
term twit(o, it) := union(union(
    { { { maprow(l1, l2) | l2 in ls, l2 = l2 } | l1 in ls, l1 = l1 }
    | ls in pair(labs(o, it), labs(o, it)), ls = ls }));
"
    .to_string()
}

fn ordinal_text(k: usize) -> String {
    let mut s = "zero".to_string();
    for _ in 0..k {
        s = format!("succ({s})");
    }
    s
}

/// Emits a witnessed-choice program deciding whether the canonical form of
/// the input graph has an edge between labels `i` and `j` (0-based).
pub fn emit_canon_edge_query(i: usize, j: usize) -> String {
    format!(
        "{preamble}
formula canonedge := wsc x y (concat(x, y); orb(x); twit(y, x);
                              E(proj(x, {pi}), proj(x, {pj})));

entry canonedge;
",
        preamble = canon_preamble(),
        pi = ordinal_text(i + 1),
        pj = ordinal_text(j + 1),
    )
}

/// Recovers the full canonical edge set of a graph by evaluating the emitted
/// edge query for every label pair. The graph is undirected, so only one
/// direction is queried and the result mirrored.
pub fn canon_edges_via_program(a: &Structure) -> Result<BTreeSet<(usize, usize)>, CanonError> {
    let n = a.universe_size;
    let mut edges = BTreeSet::new();
    for p in 0..n {
        for q in (p + 1)..n {
            let src = emit_canon_edge_query(p, q);
            let prog = crate::logic::parse_program(&src)
                .map_err(|e| CanonError::Program(e.to_string()))?;
            match eval::eval_program(a, &prog, ChoicePolicy::FirstCanonical)? {
                Verdict::Truth(true) => {
                    edges.insert((p, q));
                    edges.insert((q, p));
                }
                Verdict::Truth(false) => {}
                other => {
                    return Err(CanonError::Program(format!(
                        "edge query ({p},{q}) returned {other}"
                    )))
                }
            }
        }
    }
    Ok(edges)
}
