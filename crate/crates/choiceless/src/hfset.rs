//! Hereditarily finite sets over a fixed atom universe.
//!
//! Values are immutable, hash-consed DAG nodes: two structurally equal values
//! are the same allocation, so equality is a pointer comparison. A value is
//! an atom (an element of the structure universe, identified by index), a
//! finite set of values, or the distinguished error marker ("dagger") that
//! the evaluator produces on bound violations. The dagger is deliberately
//! rejected by every set constructor here: it can only propagate outward
//! through evaluation, never hide inside a set.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use thiserror::Error;

/// Errors from set construction and the pure-set comparator.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum HfError {
    #[error("the error marker cannot be placed inside a set")]
    DaggerElement,
    #[error("compare_pure applied to a value containing an atom")]
    AtomInPure,
    #[error("mapping is not a bijection on the atom universe")]
    NotBijection,
    #[error("parse error at byte {0}: {1}")]
    Parse(usize, String),
}

#[derive(Debug)]
enum Kind {
    Atom(usize),
    Set(Vec<HFValue>),
    Dagger,
}

#[derive(Debug)]
struct Node {
    kind: Kind,
    /// |TC(a)|: number of distinct values reachable through membership,
    /// counting the value itself. Atoms have tc_size 1. (The inclusive
    /// convention; off by one from the exclusive reading, which is harmless
    /// because resource bounds are user-supplied polynomials — but it must be
    /// applied consistently, so it is fixed here and tested.)
    tc_size: u64,
    /// Whether any atom occurs in the transitive closure.
    has_atom: bool,
}

/// A hereditarily finite value: atom, set, or the error marker.
///
/// Cheap to clone (reference-counted) and to compare (pointer identity).
#[derive(Clone)]
pub struct HFValue(Arc<Node>);

impl PartialEq for HFValue {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}
impl Eq for HFValue {}

impl std::hash::Hash for HFValue {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        (Arc::as_ptr(&self.0) as usize).hash(state);
    }
}

// ---------------------------------------------------------------------------
// Interner
// ---------------------------------------------------------------------------

/// Structural key for one interning level. Children are already interned, so
/// one-level structural equality (with children compared by pointer) is full
/// structural equality.
#[derive(PartialEq, Eq, Hash)]
enum InternKey {
    Atom(usize),
    Set(Vec<usize>), // canonical-order child pointer addresses
    Dagger,
}

fn interner() -> &'static Mutex<HashMap<InternKey, HFValue>> {
    static TABLE: OnceLock<Mutex<HashMap<InternKey, HFValue>>> = OnceLock::new();
    TABLE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn intern(key: InternKey, build: impl FnOnce() -> Node) -> HFValue {
    let mut table = interner().lock().unwrap();
    if let Some(v) = table.get(&key) {
        return v.clone();
    }
    let v = HFValue(Arc::new(build()));
    table.insert(key, v.clone());
    v
}

// ---------------------------------------------------------------------------
// Constructors
// ---------------------------------------------------------------------------

/// The empty set.
pub fn empty() -> HFValue {
    make_set(Vec::new()).expect("empty set has no elements")
}

/// The atom with the given universe index.
pub fn atom(index: usize) -> HFValue {
    intern(InternKey::Atom(index), || Node {
        kind: Kind::Atom(index),
        tc_size: 1,
        has_atom: true,
    })
}

/// The evaluation error marker. Not a set; rejected by all set constructors.
pub fn dagger() -> HFValue {
    intern(InternKey::Dagger, || Node {
        kind: Kind::Dagger,
        tc_size: 1,
        has_atom: false,
    })
}

/// Builds a set from the given elements, deduplicating and storing them in
/// canonical order (atoms by index first, then sets by tc_size and
/// recursively by the same order).
pub fn make_set(mut elems: Vec<HFValue>) -> Result<HFValue, HfError> {
    if elems.iter().any(|e| e.is_dagger()) {
        return Err(HfError::DaggerElement);
    }
    elems.sort_by(canonical_cmp);
    elems.dedup();
    let key = InternKey::Set(elems.iter().map(|e| Arc::as_ptr(&e.0) as usize).collect());
    Ok(intern(key, || {
        let tc_size = tc_count(&elems);
        let has_atom = elems.iter().any(|e| e.0.has_atom);
        Node { kind: Kind::Set(elems), tc_size, has_atom }
    }))
}

/// Number of distinct values reachable from the elements, plus one for the
/// set being built. Shared subtrees are counted once.
fn tc_count(elems: &[HFValue]) -> u64 {
    let mut seen: HashSet<*const Node> = HashSet::new();
    let mut stack: Vec<&HFValue> = elems.iter().collect();
    while let Some(v) = stack.pop() {
        if seen.insert(Arc::as_ptr(&v.0)) {
            if let Kind::Set(children) = &v.0.kind {
                stack.extend(children.iter());
            }
        }
    }
    seen.len() as u64 + 1
}

/// The Kuratowski pair {{x},{x,y}} (degenerating to {{x}} when x = y).
pub fn kuratowski_pair(x: &HFValue, y: &HFValue) -> Result<HFValue, HfError> {
    let fst = make_set(vec![x.clone()])?;
    let both = make_set(vec![x.clone(), y.clone()])?;
    make_set(vec![fst, both])
}

/// The von Neumann ordinal n: 0 = ∅, n+1 = n ∪ {n}.
pub fn von_neumann(n: u64) -> HFValue {
    let mut current = empty();
    let mut elems: Vec<HFValue> = Vec::new();
    for _ in 0..n {
        elems.push(current.clone());
        current = make_set(elems.clone()).expect("ordinal elements are dagger-free");
    }
    current
}

// ---------------------------------------------------------------------------
// Accessors
// ---------------------------------------------------------------------------

impl HFValue {
    pub fn is_atom(&self) -> bool {
        matches!(self.0.kind, Kind::Atom(_))
    }

    pub fn is_set(&self) -> bool {
        matches!(self.0.kind, Kind::Set(_))
    }

    pub fn is_dagger(&self) -> bool {
        matches!(self.0.kind, Kind::Dagger)
    }

    pub fn is_empty_set(&self) -> bool {
        matches!(&self.0.kind, Kind::Set(es) if es.is_empty())
    }

    pub fn as_atom(&self) -> Option<usize> {
        match self.0.kind {
            Kind::Atom(i) => Some(i),
            _ => None,
        }
    }

    /// Elements in canonical storage order; empty slice for atoms/dagger.
    pub fn children(&self) -> &[HFValue] {
        match &self.0.kind {
            Kind::Set(es) => es,
            _ => &[],
        }
    }

    /// |TC(a)| under the inclusive convention (counts the value itself).
    pub fn tc_size(&self) -> u64 {
        self.0.tc_size
    }

    /// Whether any atom occurs in the transitive closure.
    pub fn has_atom(&self) -> bool {
        self.0.has_atom
    }

    pub fn contains(&self, elem: &HFValue) -> bool {
        self.children().iter().any(|c| c == elem)
    }

    /// If this value is a von Neumann ordinal, its numeric value.
    pub fn as_ordinal(&self) -> Option<u64> {
        match &self.0.kind {
            Kind::Set(es) => {
                let n = es.len() as u64;
                if *self == von_neumann(n) {
                    Some(n)
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    /// All atom indices occurring in the transitive closure.
    pub fn atoms_used(&self) -> HashSet<usize> {
        let mut out = HashSet::new();
        let mut seen: HashSet<*const Node> = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !seen.insert(Arc::as_ptr(&v.0)) {
                continue;
            }
            match &v.0.kind {
                Kind::Atom(i) => {
                    out.insert(*i);
                }
                Kind::Set(es) => stack.extend(es.iter().cloned()),
                Kind::Dagger => {}
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Ordering
// ---------------------------------------------------------------------------

/// Internal canonical total order used for set storage: atoms first (by
/// index), then sets (by tc_size, then lexicographically on canonically
/// ordered children), then the error marker. Semantics never depend on this
/// order except through `compare_pure`, which is restricted to atom-free
/// values and therefore isomorphism-invariant.
pub fn canonical_cmp(a: &HFValue, b: &HFValue) -> Ordering {
    if a == b {
        return Ordering::Equal;
    }
    fn rank(v: &HFValue) -> u8 {
        match v.0.kind {
            Kind::Atom(_) => 0,
            Kind::Set(_) => 1,
            Kind::Dagger => 2,
        }
    }
    match rank(a).cmp(&rank(b)) {
        Ordering::Equal => {}
        o => return o,
    }
    match (&a.0.kind, &b.0.kind) {
        (Kind::Atom(i), Kind::Atom(j)) => i.cmp(j),
        (Kind::Set(xs), Kind::Set(ys)) => match a.0.tc_size.cmp(&b.0.tc_size) {
            Ordering::Equal => {
                for (x, y) in xs.iter().zip(ys.iter()) {
                    match canonical_cmp(x, y) {
                        Ordering::Equal => continue,
                        o => return o,
                    }
                }
                xs.len().cmp(&ys.len())
            }
            o => o,
        },
        _ => Ordering::Equal, // unreachable: two daggers are pointer-equal
    }
}

/// Total order on HF(∅). Errors if either value contains an atom. On von
/// Neumann ordinals this coincides with numeric order (their tc_sizes are
/// strictly increasing), which the pure-order tests pin down.
pub fn compare_pure(x: &HFValue, y: &HFValue) -> Result<Ordering, HfError> {
    if x.0.has_atom || y.0.has_atom {
        return Err(HfError::AtomInPure);
    }
    Ok(canonical_cmp(x, y))
}

// ---------------------------------------------------------------------------
// DAG encoding of pure sets
// ---------------------------------------------------------------------------

/// Encodes a pure set as the edge list of its membership DAG: the distinct
/// values of TC(v) ∪ {v} are numbered 1, 2, … ascending in the canonical
/// pure order, and (i, j) is an edge whenever value j is an element of value
/// i. The empty set encodes as no edges; values containing atoms (or the
/// failure marker) have no encoding.
pub fn to_dag(v: &HFValue) -> Option<Vec<(usize, usize)>> {
    if v.has_atom() || v.is_dagger() {
        return None;
    }
    if v.children().is_empty() {
        return Some(Vec::new());
    }
    let mut nodes: Vec<HFValue> = Vec::new();
    let mut stack = vec![v.clone()];
    while let Some(x) = stack.pop() {
        if nodes.contains(&x) {
            continue;
        }
        stack.extend(x.children().iter().cloned());
        nodes.push(x);
    }
    nodes.sort_by(|a, b| compare_pure(a, b).expect("atom-free by construction"));
    let index = |x: &HFValue| nodes.iter().position(|n| n == x).expect("collected") + 1;
    let mut edges = Vec::new();
    for n in &nodes {
        let i = index(n);
        for c in n.children() {
            edges.push((i, index(c)));
        }
    }
    edges.sort_unstable();
    Some(edges)
}

/// Rebuilds a pure set from a membership-DAG edge list: vertices without
/// outgoing edges are the empty set, every other vertex is the set of its
/// successors, and the result is the unique source. No edges yield the empty
/// set; a malformed list (no unique source, or a cycle) also yields the
/// empty set.
pub fn from_dag(edges: &[(usize, usize)]) -> HFValue {
    if edges.is_empty() {
        return empty();
    }
    let vertices: BTreeSet<usize> = edges.iter().flat_map(|&(i, j)| [i, j]).collect();
    let targets: BTreeSet<usize> = edges.iter().map(|&(_, j)| j).collect();
    let sources: Vec<usize> = vertices.iter().copied().filter(|v| !targets.contains(v)).collect();
    let [root] = sources[..] else {
        return empty();
    };
    fn build(
        v: usize,
        edges: &[(usize, usize)],
        memo: &mut BTreeMap<usize, Option<HFValue>>,
    ) -> Option<HFValue> {
        match memo.get(&v) {
            Some(Some(val)) => return Some(val.clone()),
            Some(None) => return None, // revisited while in progress: a cycle
            None => {}
        }
        memo.insert(v, None);
        let mut elems = Vec::new();
        for &(i, j) in edges {
            if i == v {
                elems.push(build(j, edges, memo)?);
            }
        }
        let val = make_set(elems).expect("pure elements");
        memo.insert(v, Some(val.clone()));
        Some(val)
    }
    build(root, edges, &mut BTreeMap::new()).unwrap_or_else(empty)
}

// ---------------------------------------------------------------------------
// Permutations
// ---------------------------------------------------------------------------

/// A bijection on the atom universe {0, …, n−1}.
#[derive(Clone, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct Perm {
    map: Vec<usize>,
}

impl Perm {
    pub fn new(map: Vec<usize>) -> Result<Perm, HfError> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &v in &map {
            if v >= n || seen[v] {
                return Err(HfError::NotBijection);
            }
            seen[v] = true;
        }
        Ok(Perm { map })
    }

    pub fn identity(n: usize) -> Perm {
        Perm { map: (0..n).collect() }
    }

    pub fn degree(&self) -> usize {
        self.map.len()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn inverse(&self) -> Perm {
        let mut inv = vec![0; self.map.len()];
        for (i, &v) in self.map.iter().enumerate() {
            inv[v] = i;
        }
        Perm { map: inv }
    }

    /// self ∘ other: first `other`, then `self`.
    pub fn compose(&self, other: &Perm) -> Perm {
        assert_eq!(self.map.len(), other.map.len());
        Perm { map: other.map.iter().map(|&v| self.map[v]).collect() }
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &v)| i == v)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }
}

/// Relabels every atom in the DAG through the bijection and re-canonicalizes.
pub fn apply_permutation(x: &HFValue, phi: &Perm) -> HFValue {
    fn go(v: &HFValue, phi: &Perm, memo: &mut HashMap<HFValue, HFValue>) -> HFValue {
        if !v.0.has_atom {
            return v.clone(); // pure sets are fixed by every relabeling
        }
        if let Some(r) = memo.get(v) {
            return r.clone();
        }
        let out = match &v.0.kind {
            Kind::Atom(i) => atom(phi.apply(*i)),
            Kind::Set(es) => {
                let mapped = es.iter().map(|e| go(e, phi, memo)).collect();
                make_set(mapped).expect("permutation preserves dagger-freeness")
            }
            Kind::Dagger => v.clone(),
        };
        memo.insert(v.clone(), out.clone());
        out
    }
    go(x, phi, &mut HashMap::new())
}

// ---------------------------------------------------------------------------
// Pairs and tuples
// ---------------------------------------------------------------------------

/// Decodes a Kuratowski pair: {{x}} ↦ (x,x), {{x},{x,y}} ↦ (x,y).
pub fn decode_kuratowski(v: &HFValue) -> Option<(HFValue, HFValue)> {
    let kids = v.children();
    match kids.len() {
        1 => {
            let inner = &kids[0];
            if inner.is_set() && inner.children().len() == 1 {
                let x = inner.children()[0].clone();
                Some((x.clone(), x))
            } else {
                None
            }
        }
        2 => {
            // One child must be a singleton {x}; the other a doubleton
            // {x,y} containing x.
            let (s, d) = if kids[0].children().len() == 1 {
                (&kids[0], &kids[1])
            } else {
                (&kids[1], &kids[0])
            };
            if s.children().len() != 1 || d.children().len() != 2 {
                return None;
            }
            let x = s.children()[0].clone();
            let (a, b) = (d.children()[0].clone(), d.children()[1].clone());
            if a == x {
                Some((x, b))
            } else if b == x {
                Some((x, a))
            } else {
                None
            }
        }
        _ => None,
    }
}

/// Encodes a tuple as a set: the empty tuple is ∅; a nonempty tuple is the
/// Kuratowski pair of its length ordinal and a right-nested chain of
/// Kuratowski pairs terminated by ∅. The length marker makes decoding
/// unambiguous even when elements are themselves pairs or ∅.
pub fn encode_tuple(elems: &[HFValue]) -> Result<HFValue, HfError> {
    if elems.is_empty() {
        return Ok(empty());
    }
    let mut payload = empty();
    for e in elems.iter().rev() {
        payload = kuratowski_pair(e, &payload)?;
    }
    kuratowski_pair(&von_neumann(elems.len() as u64), &payload)
}

/// Inverse of [`encode_tuple`]; `None` when the value is not a tuple code.
pub fn decode_tuple(v: &HFValue) -> Option<Vec<HFValue>> {
    if v.is_empty_set() {
        return Some(Vec::new());
    }
    let (len_ord, mut payload) = decode_kuratowski(v)?;
    let n = len_ord.as_ordinal()?;
    if n == 0 {
        return None; // nonempty encodings always carry a positive length
    }
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let (head, rest) = decode_kuratowski(&payload)?;
        out.push(head);
        payload = rest;
    }
    if payload.is_empty_set() {
        Some(out)
    } else {
        None
    }
}

/// Tuple concatenation with the duplicate-dropping conventions used by the
/// canonization machinery: appending an element already present is a no-op,
/// appending a singleton set appends its element, appending ∅ appends
/// nothing, and appending a tuple appends its entries in order. Returns
/// `None` when the left side is not a tuple (or atom, read as a 1-tuple).
pub fn concat(x: &HFValue, y: &HFValue) -> Option<HFValue> {
    let mut elems = if let Some(i) = x.as_atom() {
        vec![atom(i)]
    } else {
        decode_tuple(x)?
    };
    fn push(elems: &mut Vec<HFValue>, item: &HFValue) {
        if item.is_empty_set() {
            return;
        }
        if let Some(parts) = (!item.is_atom()).then(|| decode_tuple(item)).flatten() {
            for p in &parts {
                push(elems, p);
            }
            return;
        }
        if !item.is_atom() && item.children().len() == 1 {
            push(elems, &item.children()[0]);
            return;
        }
        if !elems.contains(item) {
            elems.push(item.clone());
        }
    }
    push(&mut elems, y);
    Some(encode_tuple(&elems).expect("tuple parts are dagger-free"))
}

/// 1-based tuple projection: the i-th entry, or ∅ when the value is not a
/// tuple or the index is out of range. Atoms project as 1-tuples.
pub fn project(x: &HFValue, i: u64) -> HFValue {
    let elems = if x.is_atom() {
        vec![x.clone()]
    } else {
        match decode_tuple(x) {
            Some(es) => es,
            None => return empty(),
        }
    };
    if i == 0 || i as usize > elems.len() {
        empty()
    } else {
        elems[i as usize - 1].clone()
    }
}

// ---------------------------------------------------------------------------
// Rendering and parsing
// ---------------------------------------------------------------------------

impl fmt::Debug for HFValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render(self))
    }
}

impl fmt::Display for HFValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render(self))
    }
}

/// Renders atoms as `a<index>` and sets as `{...}` in canonical order.
pub fn render(v: &HFValue) -> String {
    match &v.0.kind {
        Kind::Atom(i) => format!("a{i}"),
        Kind::Dagger => "dagger".to_string(),
        Kind::Set(es) => {
            let parts: Vec<String> = es.iter().map(render).collect();
            format!("{{{}}}", parts.join(", "))
        }
    }
}

/// Like [`render`], but von Neumann ordinals print as `#n`.
pub fn render_with_ordinals(v: &HFValue) -> String {
    if let Some(n) = v.as_ordinal() {
        return format!("#{n}");
    }
    match &v.0.kind {
        Kind::Atom(i) => format!("a{i}"),
        Kind::Dagger => "dagger".to_string(),
        Kind::Set(es) => {
            let parts: Vec<String> = es.iter().map(render_with_ordinals).collect();
            format!("{{{}}}", parts.join(", "))
        }
    }
}

/// Parses the rendering grammar: `a<index>`, `#n`, `dagger`, `{v, v, ...}`.
pub fn parse(text: &str) -> Result<HFValue, HfError> {
    let bytes = text.as_bytes();
    let mut pos = 0usize;
    let v = parse_value(bytes, &mut pos)?;
    skip_ws(bytes, &mut pos);
    if pos != bytes.len() {
        return Err(HfError::Parse(pos, "trailing input".into()));
    }
    Ok(v)
}

fn skip_ws(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
}

fn parse_number(bytes: &[u8], pos: &mut usize) -> Result<u64, HfError> {
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(HfError::Parse(start, "expected a number".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .unwrap()
        .parse()
        .map_err(|_| HfError::Parse(start, "number out of range".into()))
}

fn parse_value(bytes: &[u8], pos: &mut usize) -> Result<HFValue, HfError> {
    skip_ws(bytes, pos);
    match bytes.get(*pos) {
        Some(b'a') => {
            *pos += 1;
            Ok(atom(parse_number(bytes, pos)? as usize))
        }
        Some(b'#') => {
            *pos += 1;
            Ok(von_neumann(parse_number(bytes, pos)?))
        }
        Some(b'd') => {
            if bytes[*pos..].starts_with(b"dagger") {
                *pos += 6;
                Ok(dagger())
            } else {
                Err(HfError::Parse(*pos, "expected `dagger`".into()))
            }
        }
        Some(b'{') => {
            *pos += 1;
            let mut elems = Vec::new();
            skip_ws(bytes, pos);
            if bytes.get(*pos) == Some(&b'}') {
                *pos += 1;
                return make_set(elems);
            }
            loop {
                elems.push(parse_value(bytes, pos)?);
                skip_ws(bytes, pos);
                match bytes.get(*pos) {
                    Some(b',') => *pos += 1,
                    Some(b'}') => {
                        *pos += 1;
                        return make_set(elems);
                    }
                    _ => return Err(HfError::Parse(*pos, "expected `,` or `}`".into())),
                }
            }
        }
        _ => Err(HfError::Parse(*pos, "expected a value".into())),
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_interned_and_small() {
        assert_eq!(empty(), empty());
        assert_eq!(empty().tc_size(), 1);
        assert!(empty().is_empty_set());
    }

    #[test]
    fn make_set_dedups() {
        let a = atom(0);
        let b = atom(1);
        let s = make_set(vec![a.clone(), a.clone(), b.clone()]).unwrap();
        assert_eq!(s.children().len(), 2);
        assert_eq!(s, make_set(vec![b, a]).unwrap());
    }

    #[test]
    fn make_set_rejects_dagger() {
        assert_eq!(make_set(vec![dagger()]), Err(HfError::DaggerElement));
    }

    #[test]
    fn dag_encoding_round_trips_pure_values() {
        // ∅ ↔ no edges.
        assert_eq!(to_dag(&empty()), Some(vec![]));
        assert_eq!(from_dag(&[]), empty());
        // {∅}: nodes ∅=1, {∅}=2, one edge.
        let s1 = make_set(vec![empty()]).unwrap();
        assert_eq!(to_dag(&s1), Some(vec![(2, 1)]));
        // Round trip over a battery of pure values, including shared nodes.
        let two = von_neumann(2);
        let shared = make_set(vec![two.clone(), make_set(vec![two]).unwrap()]).unwrap();
        for v in [empty(), s1, von_neumann(5), shared] {
            let edges = to_dag(&v).unwrap();
            assert_eq!(from_dag(&edges), v);
        }
        // Atoms have no encoding.
        assert_eq!(to_dag(&atom(0)), None);
        assert_eq!(to_dag(&make_set(vec![atom(1)]).unwrap()), None);
        // Malformed inputs collapse to ∅: two sources, and a cycle.
        assert_eq!(from_dag(&[(2, 1), (3, 1)]), empty());
        assert_eq!(from_dag(&[(1, 2), (2, 1)]), empty());
    }

    #[test]
    fn tc_size_hand_enumerated() {
        // {∅, {∅}} has TC {itself, {∅}, ∅} → 3.
        let v = make_set(vec![empty(), make_set(vec![empty()]).unwrap()]).unwrap();
        assert_eq!(v.tc_size(), 3);
        // Ordinal 3 = {0,1,2} has TC {3,2,1,0} → 4.
        assert_eq!(von_neumann(3).tc_size(), 4);
    }

    #[test]
    fn tc_size_counts_shared_nodes_once() {
        let inner = make_set(vec![atom(0), atom(1)]).unwrap();
        let left = make_set(vec![inner.clone()]).unwrap();
        let right = make_set(vec![inner.clone(), atom(0)]).unwrap();
        let top = make_set(vec![left, right]).unwrap();
        // TC: top, left, right, inner, a0, a1 → 6 distinct nodes.
        assert_eq!(top.tc_size(), 6);
    }

    #[test]
    fn kuratowski_shapes() {
        let a = atom(0);
        let b = atom(1);
        let p = kuratowski_pair(&a, &b).unwrap();
        assert_eq!(decode_kuratowski(&p), Some((a.clone(), b.clone())));
        let d = kuratowski_pair(&a, &a).unwrap();
        assert_eq!(d.children().len(), 1); // {{a}}
        assert_eq!(decode_kuratowski(&d), Some((a.clone(), a)));
    }

    #[test]
    fn von_neumann_ordinals() {
        assert_eq!(von_neumann(0), empty());
        let two = make_set(vec![empty(), make_set(vec![empty()]).unwrap()]).unwrap();
        assert_eq!(von_neumann(2), two);
        for n in 0..8 {
            assert_eq!(von_neumann(n).as_ordinal(), Some(n));
        }
        assert_eq!(make_set(vec![von_neumann(1)]).unwrap().as_ordinal(), None);
    }

    #[test]
    fn compare_pure_orders_ordinals() {
        let vals: Vec<HFValue> = (0..5).map(von_neumann).collect();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(
                    compare_pure(&vals[i], &vals[j]).unwrap(),
                    i.cmp(&j),
                    "ordinals {i} vs {j}"
                );
            }
        }
        assert_eq!(compare_pure(&atom(0), &empty()), Err(HfError::AtomInPure));
    }

    #[test]
    fn permutation_action() {
        let phi = Perm::new(vec![1, 0, 2]).unwrap();
        let v = make_set(vec![atom(0), make_set(vec![atom(1)]).unwrap()]).unwrap();
        let moved = apply_permutation(&v, &phi);
        let expect = make_set(vec![atom(1), make_set(vec![atom(0)]).unwrap()]).unwrap();
        assert_eq!(moved, expect);
        assert_eq!(apply_permutation(&moved, &phi.inverse()), v);
        assert_eq!(apply_permutation(&v, &Perm::identity(3)), v);
    }

    #[test]
    fn tuple_round_trip() {
        let cases: Vec<Vec<HFValue>> = vec![
            vec![],
            vec![atom(0)],
            vec![atom(0), atom(1), atom(0)],
            vec![empty(), von_neumann(2), atom(3)],
            vec![encode_tuple(&[atom(0), atom(1)]).unwrap(), empty()],
        ];
        for t in cases {
            let enc = encode_tuple(&t).unwrap();
            assert_eq!(decode_tuple(&enc), Some(t));
        }
    }

    #[test]
    fn concat_conventions() {
        let t01 = encode_tuple(&[atom(0), atom(1)]).unwrap();
        // appending a fresh atom extends the tuple
        assert_eq!(
            concat(&t01, &atom(2)),
            Some(encode_tuple(&[atom(0), atom(1), atom(2)]).unwrap())
        );
        // appending a present atom is dropped
        assert_eq!(concat(&t01, &atom(1)), Some(t01.clone()));
        // singleton unwraps
        let single = make_set(vec![atom(2)]).unwrap();
        assert_eq!(
            concat(&t01, &single),
            Some(encode_tuple(&[atom(0), atom(1), atom(2)]).unwrap())
        );
        // empty set appends nothing
        assert_eq!(concat(&t01, &empty()), Some(t01.clone()));
        // tuple appends entrywise with dedup
        let t12 = encode_tuple(&[atom(1), atom(2)]).unwrap();
        assert_eq!(
            concat(&t01, &t12),
            Some(encode_tuple(&[atom(0), atom(1), atom(2)]).unwrap())
        );
    }

    #[test]
    fn projection_is_one_based_with_empty_fallback() {
        let t = encode_tuple(&[atom(4), atom(7)]).unwrap();
        assert_eq!(project(&t, 1), atom(4));
        assert_eq!(project(&t, 2), atom(7));
        assert_eq!(project(&t, 3), empty());
        assert_eq!(project(&t, 0), empty());
        assert_eq!(project(&atom(5), 1), atom(5));
        assert_eq!(project(&von_neumann(3), 9), empty());
    }

    #[test]
    fn render_parse_round_trip() {
        let vals = vec![
            empty(),
            atom(12),
            dagger(),
            von_neumann(3),
            make_set(vec![atom(0), make_set(vec![atom(1), empty()]).unwrap()]).unwrap(),
        ];
        for v in vals {
            assert_eq!(parse(&render(&v)).unwrap(), v);
            assert_eq!(parse(&render_with_ordinals(&v)).unwrap(), v);
        }
        assert_eq!(parse("#4").unwrap(), von_neumann(4));
    }
}
