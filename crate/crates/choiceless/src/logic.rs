//! Term/formula language with comprehension, bounded iteration, witnessed
//! symmetric choice and deterministic choice, plus the `.bgs` program file
//! format.
//!
//! Concrete grammar (ASCII):
//!
//! ```text
//! program   := signature bound? binding* entry
//! signature := "signature" "{" (name ":" arity ";")* "}"
//! bound     := "bound" poly ";"            // ambient bound for bindings
//! binding   := ("term" | "formula") name params? ":=" body ";"
//! params    := "(" name ("," name)* ")"
//! entry     := "entry" name ";"
//! term      := "empty" | "atoms" | var | "pair(s,t)" | "union(s)"
//!            | "unique(s)" | "card(s)" | "{ s | y in t, phi }"
//!            | "iter y . s" | "wsc x y (step; choice; wit; out)"
//!            | "dc x y (step; choice; order)" | "concat(s,t)" | "proj(s,t)"
//!            | term ("cup"|"cap"|"diff") term | "(" term ")"
//! formula   := formula "\/" formula | formula "/\" formula | "~" formula
//!            | term "=" term | R(t1,…,tk) | wsc-with-formula-out | "(" formula ")"
//! poly      := e.g. "3*n^2 + n + 5"
//! ```
//!
//! Named bindings are syntactic abbreviations: a use of a binding name
//! (optionally applied to argument terms when the binding declares
//! parameters) is expanded in place at parse time, substituting the
//! arguments for the parameters. A `bound p;` statement attaches to the
//! immediately preceding binding when that binding has no bound yet, and
//! becomes the ambient default for later bindings.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::structure::Signature;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LogicError {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown identifier `{0}`")]
    Unknown(String),
    #[error("`{name}` expects {expected} argument(s), got {got}")]
    Arity { name: String, expected: usize, got: usize },
    #[error("entry binding `{0}` has unbound variable(s): {1}")]
    Unbound(String, String),
    #[error("invalid program: {0}")]
    Invalid(String),
}

// ---------------------------------------------------------------------------
// Polynomials
// ---------------------------------------------------------------------------

/// A polynomial with natural coefficients: c₀ + c₁·n + c₂·n² + …
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Polynomial {
    pub coefficients: Vec<u64>,
}

impl Polynomial {
    pub fn constant(c: u64) -> Polynomial {
        Polynomial { coefficients: vec![c] }
    }

    /// Exact evaluation at n (saturating on overflow; bounds that large are
    /// effectively infinite at desk scale anyway).
    pub fn eval(&self, n: u64) -> u64 {
        let mut acc: u64 = 0;
        let mut power: u64 = 1;
        for (i, &c) in self.coefficients.iter().enumerate() {
            acc = acc.saturating_add(c.saturating_mul(power));
            if i + 1 < self.coefficients.len() {
                power = power.saturating_mul(n);
            }
        }
        acc
    }

    /// The square p(n)², used by the output-term reduction.
    pub fn squared(&self) -> Polynomial {
        let a = &self.coefficients;
        let mut out = vec![0u64; a.len().saturating_mul(2).saturating_sub(1).max(1)];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in a.iter().enumerate() {
                out[i + j] = out[i + j].saturating_add(x.saturating_mul(y));
            }
        }
        Polynomial { coefficients: out }
    }

    /// Parses expressions like `3*n^2 + n + 5`.
    pub fn parse(text: &str) -> Result<Polynomial, String> {
        let mut coeffs: Vec<u64> = Vec::new();
        for part in text.split('+') {
            let part = part.trim();
            if part.is_empty() {
                return Err("empty summand".to_string());
            }
            let (coeff_str, rest) = match part.find('n') {
                None => (part, None),
                Some(pos) => (part[..pos].trim_end_matches('*').trim(), Some(&part[pos + 1..])),
            };
            let coeff: u64 = if coeff_str.is_empty() {
                1
            } else {
                coeff_str.trim().parse().map_err(|_| format!("bad coefficient {coeff_str:?}"))?
            };
            let degree: usize = match rest {
                None => 0,
                Some(r) => {
                    let r = r.trim();
                    if r.is_empty() {
                        1
                    } else if let Some(exp) = r.strip_prefix('^') {
                        exp.trim().parse().map_err(|_| format!("bad exponent {exp:?}"))?
                    } else {
                        return Err(format!("unexpected {r:?} after n"));
                    }
                }
            };
            if coeffs.len() <= degree {
                coeffs.resize(degree + 1, 0);
            }
            coeffs[degree] += coeff;
        }
        while coeffs.len() > 1 && *coeffs.last().unwrap() == 0 {
            coeffs.pop();
        }
        Ok(Polynomial { coefficients: coeffs })
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        for (deg, &c) in self.coefficients.iter().enumerate().rev() {
            if c == 0 && !(deg == 0 && parts.is_empty() && self.coefficients.len() == 1) {
                continue;
            }
            let part = match (deg, c) {
                (0, c) => format!("{c}"),
                (1, 1) => "n".to_string(),
                (1, c) => format!("{c}*n"),
                (d, 1) => format!("n^{d}"),
                (d, c) => format!("{c}*n^{d}"),
            };
            parts.push(part);
        }
        if parts.is_empty() {
            parts.push("0".to_string());
        }
        write!(f, "{}", parts.join(" + "))
    }
}

// ---------------------------------------------------------------------------
// AST
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetOp {
    Union,     // cup
    Intersect, // cap
    Diff,      // diff
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Term {
    Var(String),
    Empty,
    Atoms,
    Pair(Box<Term>, Box<Term>),
    Union(Box<Term>),
    Unique(Box<Term>),
    Card(Box<Term>),
    /// { result | binder in domain, filter }
    Comprehension {
        result: Box<Term>,
        binder: String,
        domain: Box<Term>,
        filter: Box<Formula>,
    },
    /// iter binder . body — iterate body from ∅ until a fixed point.
    Iterate { binder: String, body: Box<Term> },
    /// wsc x y (step; choice; wit; out) with a term output (set denotation).
    Wsc(Box<WscNode<Term>>),
    /// dc x y (step; choice; order) — deterministic minimal choice.
    Dc {
        x: String,
        y: String,
        step: Box<Term>,
        choice: Box<Term>,
        order: Box<Term>,
    },
    Concat(Box<Term>, Box<Term>),
    Proj(Box<Term>, Box<Term>),
    BinOp(SetOp, Box<Term>, Box<Term>),
}

/// Shared shape of the witnessed-choice operator; `Out` is `Term` for the
/// set-valued (output-term) form and `Formula` for the boolean form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WscNode<Out> {
    pub x: String,
    pub y: String,
    pub step: Term,
    pub choice: Term,
    pub wit: Term,
    pub out: Out,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Formula {
    Rel(String, Vec<Term>),
    Eq(Term, Term),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Wsc(Box<WscNode<Formula>>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Node {
    Term(Term),
    Formula(Formula),
}

/// One named binding with its polynomial resource bound.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Binding {
    pub node: Node,
    pub bound: Polynomial,
}

/// A parsed program: signature, fully expanded named bindings, entry point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub signature: Signature,
    pub bindings: Vec<(String, Binding)>,
    pub entry: String,
}

impl Program {
    pub fn binding(&self, name: &str) -> Option<&Binding> {
        self.bindings.iter().find(|(n, _)| n == name).map(|(_, b)| b)
    }

    pub fn entry_binding(&self) -> &Binding {
        self.binding(&self.entry).expect("entry existence is checked at parse time")
    }
}

// ---------------------------------------------------------------------------
// Free variables
// ---------------------------------------------------------------------------

pub fn free_vars_term(t: &Term) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    collect_term(t, &mut out);
    out
}

pub fn free_vars_formula(f: &Formula) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    collect_formula(f, &mut out);
    out
}

pub fn free_vars_node(n: &Node) -> BTreeSet<String> {
    match n {
        Node::Term(t) => free_vars_term(t),
        Node::Formula(f) => free_vars_formula(f),
    }
}

fn collect_term(t: &Term, out: &mut BTreeSet<String>) {
    match t {
        Term::Var(v) => {
            out.insert(v.clone());
        }
        Term::Empty | Term::Atoms => {}
        Term::Pair(a, b) | Term::Concat(a, b) | Term::Proj(a, b) | Term::BinOp(_, a, b) => {
            collect_term(a, out);
            collect_term(b, out);
        }
        Term::Union(a) | Term::Unique(a) | Term::Card(a) => collect_term(a, out),
        Term::Comprehension { result, binder, domain, filter } => {
            collect_term(domain, out);
            let mut inner = BTreeSet::new();
            collect_term(result, &mut inner);
            collect_formula(filter, &mut inner);
            inner.remove(binder);
            out.extend(inner);
        }
        Term::Iterate { binder, body } => {
            let mut inner = BTreeSet::new();
            collect_term(body, &mut inner);
            inner.remove(binder);
            out.extend(inner);
        }
        Term::Wsc(w) => collect_wsc(w, |o, acc| collect_term(o, acc), out),
        Term::Dc { x, y, step, choice, order } => {
            // step binds x and y; choice and order bind only x.
            let mut s = BTreeSet::new();
            collect_term(step, &mut s);
            s.remove(x);
            s.remove(y);
            out.extend(s);
            for part in [choice, order] {
                let mut s = BTreeSet::new();
                collect_term(part, &mut s);
                s.remove(x);
                out.extend(s);
            }
        }
    }
}

fn collect_wsc<Out>(
    w: &WscNode<Out>,
    collect_out: impl Fn(&Out, &mut BTreeSet<String>),
    out: &mut BTreeSet<String>,
) {
    // y is bound only in step and wit; x is bound in every clause.
    for part in [&w.step, &w.wit] {
        let mut s = BTreeSet::new();
        collect_term(part, &mut s);
        s.remove(&w.x);
        s.remove(&w.y);
        out.extend(s);
    }
    let mut s = BTreeSet::new();
    collect_term(&w.choice, &mut s);
    s.remove(&w.x);
    out.extend(s);
    let mut s = BTreeSet::new();
    collect_out(&w.out, &mut s);
    s.remove(&w.x);
    out.extend(s);
}

fn collect_formula(f: &Formula, out: &mut BTreeSet<String>) {
    match f {
        Formula::Rel(_, args) => args.iter().for_each(|t| collect_term(t, out)),
        Formula::Eq(a, b) => {
            collect_term(a, out);
            collect_term(b, out);
        }
        Formula::Not(a) => collect_formula(a, out),
        Formula::And(a, b) | Formula::Or(a, b) => {
            collect_formula(a, out);
            collect_formula(b, out);
        }
        Formula::Wsc(w) => collect_wsc(w, |o, acc| collect_formula(o, acc), out),
    }
}

// ---------------------------------------------------------------------------
// Substitution (macro expansion of named bindings)
// ---------------------------------------------------------------------------

/// Every variable name occurring in the term, free or bound.
fn names_term(t: &Term, out: &mut BTreeSet<String>) {
    match t {
        Term::Var(v) => {
            out.insert(v.clone());
        }
        Term::Empty | Term::Atoms => {}
        Term::Pair(a, b) | Term::Concat(a, b) | Term::Proj(a, b) | Term::BinOp(_, a, b) => {
            names_term(a, out);
            names_term(b, out);
        }
        Term::Union(a) | Term::Unique(a) | Term::Card(a) => names_term(a, out),
        Term::Comprehension { result, binder, domain, filter } => {
            out.insert(binder.clone());
            names_term(result, out);
            names_term(domain, out);
            names_formula(filter, out);
        }
        Term::Iterate { binder, body } => {
            out.insert(binder.clone());
            names_term(body, out);
        }
        Term::Wsc(w) => {
            out.insert(w.x.clone());
            out.insert(w.y.clone());
            names_term(&w.step, out);
            names_term(&w.choice, out);
            names_term(&w.wit, out);
            names_term(&w.out, out);
        }
        Term::Dc { x, y, step, choice, order } => {
            out.insert(x.clone());
            out.insert(y.clone());
            names_term(step, out);
            names_term(choice, out);
            names_term(order, out);
        }
    }
}

fn names_formula(f: &Formula, out: &mut BTreeSet<String>) {
    match f {
        Formula::Rel(_, args) => args.iter().for_each(|t| names_term(t, out)),
        Formula::Eq(a, b) => {
            names_term(a, out);
            names_term(b, out);
        }
        Formula::Not(a) => names_formula(a, out),
        Formula::And(a, b) | Formula::Or(a, b) => {
            names_formula(a, out);
            names_formula(b, out);
        }
        Formula::Wsc(w) => {
            out.insert(w.x.clone());
            out.insert(w.y.clone());
            names_term(&w.step, out);
            names_term(&w.choice, out);
            names_term(&w.wit, out);
            names_formula(&w.out, out);
        }
    }
}

/// Whether substituting `map` under a binder of this name would capture a
/// free variable of one of the replacements.
fn would_capture(binder: &str, map: &[(String, Term)]) -> bool {
    map.iter().any(|(_, r)| free_vars_term(r).contains(binder))
}

fn fresh_binder(base: &str, avoid: &BTreeSet<String>) -> String {
    (1..)
        .map(|k| format!("{base}_{k}"))
        .find(|cand| !avoid.contains(cand))
        .expect("some suffix is unused")
}

fn subst_term(t: &Term, map: &[(String, Term)]) -> Term {
    let lookup = |v: &str| map.iter().find(|(k, _)| k == v).map(|(_, t)| t.clone());
    let without = |names: &[&String]| -> Vec<(String, Term)> {
        map.iter().filter(|(k, _)| !names.iter().any(|n| *n == k)).cloned().collect()
    };
    match t {
        Term::Var(v) => lookup(v).unwrap_or_else(|| t.clone()),
        Term::Empty | Term::Atoms => t.clone(),
        Term::Pair(a, b) => Term::Pair(subst_term(a, map).into(), subst_term(b, map).into()),
        Term::Union(a) => Term::Union(subst_term(a, map).into()),
        Term::Unique(a) => Term::Unique(subst_term(a, map).into()),
        Term::Card(a) => Term::Card(subst_term(a, map).into()),
        Term::Concat(a, b) => Term::Concat(subst_term(a, map).into(), subst_term(b, map).into()),
        Term::Proj(a, b) => Term::Proj(subst_term(a, map).into(), subst_term(b, map).into()),
        Term::BinOp(op, a, b) => {
            Term::BinOp(*op, subst_term(a, map).into(), subst_term(b, map).into())
        }
        Term::Comprehension { result, binder, domain, filter } => {
            let inner = without(&[binder]);
            // Rename the binder when a replacement mentions its name, so the
            // replacement's variable stays free after substitution.
            let (binder, result, filter) = if would_capture(binder, &inner) {
                let mut avoid = avoid_names(&inner);
                names_term(result, &mut avoid);
                names_formula(filter, &mut avoid);
                let fresh = fresh_binder(binder, &avoid);
                let rn = vec![(binder.clone(), Term::Var(fresh.clone()))];
                (fresh, subst_term(result, &rn), subst_formula(filter, &rn))
            } else {
                (binder.clone(), (**result).clone(), (**filter).clone())
            };
            Term::Comprehension {
                result: subst_term(&result, &inner).into(),
                binder,
                domain: subst_term(domain, map).into(),
                filter: subst_formula(&filter, &inner).into(),
            }
        }
        Term::Iterate { binder, body } => {
            let inner = without(&[binder]);
            let (binder, body) = if would_capture(binder, &inner) {
                let mut avoid = avoid_names(&inner);
                names_term(body, &mut avoid);
                let fresh = fresh_binder(binder, &avoid);
                let rn = vec![(binder.clone(), Term::Var(fresh.clone()))];
                (fresh, subst_term(body, &rn))
            } else {
                (binder.clone(), (**body).clone())
            };
            Term::Iterate { binder, body: subst_term(&body, &inner).into() }
        }
        Term::Wsc(w) => Term::Wsc(Box::new(subst_wsc(w, map, subst_term, names_term))),
        Term::Dc { x, y, step, choice, order } => {
            let xy = without(&[x, y]);
            let xonly = without(&[x]);
            // x is bound in all three clauses, y only in the step.
            let cap_x = would_capture(x, &xonly);
            let cap_y = would_capture(y, &xy);
            let (x, y, step, choice, order) = if cap_x || cap_y {
                let mut avoid = avoid_names(&xonly);
                names_term(step, &mut avoid);
                names_term(choice, &mut avoid);
                names_term(order, &mut avoid);
                let new_x = if cap_x { fresh_binder(x, &avoid) } else { x.clone() };
                avoid.insert(new_x.clone());
                let new_y = if cap_y { fresh_binder(y, &avoid) } else { y.clone() };
                let mut rn_step = Vec::new();
                let mut rn_rest = Vec::new();
                if cap_x {
                    rn_step.push((x.clone(), Term::Var(new_x.clone())));
                    rn_rest.push((x.clone(), Term::Var(new_x.clone())));
                }
                if cap_y {
                    rn_step.push((y.clone(), Term::Var(new_y.clone())));
                }
                (
                    new_x,
                    new_y,
                    subst_term(step, &rn_step),
                    subst_term(choice, &rn_rest),
                    subst_term(order, &rn_rest),
                )
            } else {
                (x.clone(), y.clone(), (**step).clone(), (**choice).clone(), (**order).clone())
            };
            Term::Dc {
                x,
                y,
                step: subst_term(&step, &xy).into(),
                choice: subst_term(&choice, &xonly).into(),
                order: subst_term(&order, &xonly).into(),
            }
        }
    }
}

/// Names a fresh binder must dodge: everything mentioned by the surviving
/// replacements, including their keys.
fn avoid_names(map: &[(String, Term)]) -> BTreeSet<String> {
    let mut avoid = BTreeSet::new();
    for (k, r) in map {
        avoid.insert(k.clone());
        names_term(r, &mut avoid);
    }
    avoid
}

fn subst_wsc<Out: Clone>(
    w: &WscNode<Out>,
    map: &[(String, Term)],
    subst_out: impl Fn(&Out, &[(String, Term)]) -> Out,
    names_out: impl Fn(&Out, &mut BTreeSet<String>),
) -> WscNode<Out> {
    let without = |names: &[&String]| -> Vec<(String, Term)> {
        map.iter().filter(|(k, _)| !names.iter().any(|n| *n == k)).cloned().collect()
    };
    let xy = without(&[&w.x, &w.y]);
    let xonly = without(&[&w.x]);
    // x is bound in all four clauses, y only in step and wit.
    let cap_x = would_capture(&w.x, &xonly);
    let cap_y = would_capture(&w.y, &xy);
    let (x, y, step, choice, wit, out) = if cap_x || cap_y {
        let mut avoid = avoid_names(&xonly);
        names_term(&w.step, &mut avoid);
        names_term(&w.choice, &mut avoid);
        names_term(&w.wit, &mut avoid);
        names_out(&w.out, &mut avoid);
        let new_x = if cap_x { fresh_binder(&w.x, &avoid) } else { w.x.clone() };
        avoid.insert(new_x.clone());
        let new_y = if cap_y { fresh_binder(&w.y, &avoid) } else { w.y.clone() };
        let mut rn_xy = Vec::new();
        let mut rn_x = Vec::new();
        if cap_x {
            rn_xy.push((w.x.clone(), Term::Var(new_x.clone())));
            rn_x.push((w.x.clone(), Term::Var(new_x.clone())));
        }
        if cap_y {
            rn_xy.push((w.y.clone(), Term::Var(new_y.clone())));
        }
        (
            new_x,
            new_y,
            subst_term(&w.step, &rn_xy),
            subst_term(&w.choice, &rn_x),
            subst_term(&w.wit, &rn_xy),
            subst_out(&w.out, &rn_x),
        )
    } else {
        (
            w.x.clone(),
            w.y.clone(),
            w.step.clone(),
            w.choice.clone(),
            w.wit.clone(),
            w.out.clone(),
        )
    };
    WscNode {
        x,
        y,
        step: subst_term(&step, &xy),
        choice: subst_term(&choice, &xonly),
        wit: subst_term(&wit, &xy),
        out: subst_out(&out, &xonly),
    }
}

fn subst_formula(f: &Formula, map: &[(String, Term)]) -> Formula {
    match f {
        Formula::Rel(name, args) => {
            Formula::Rel(name.clone(), args.iter().map(|t| subst_term(t, map)).collect())
        }
        Formula::Eq(a, b) => Formula::Eq(subst_term(a, map), subst_term(b, map)),
        Formula::Not(a) => Formula::Not(subst_formula(a, map).into()),
        Formula::And(a, b) => {
            Formula::And(subst_formula(a, map).into(), subst_formula(b, map).into())
        }
        Formula::Or(a, b) => {
            Formula::Or(subst_formula(a, map).into(), subst_formula(b, map).into())
        }
        Formula::Wsc(w) => Formula::Wsc(Box::new(subst_wsc(w, map, subst_formula, names_formula))),
    }
}

// ---------------------------------------------------------------------------
// Desugaring
// ---------------------------------------------------------------------------

/// Expands the infix set operations into core constructs:
/// `x cup y` → `union(pair(x,y))`,
/// `x cap y` → `{ z | z in x, ~({ w | w in y, w = z } = empty) }`,
/// `x diff y` → `{ z | z in x, { w | w in y, w = z } = empty }`.
/// Tuple concatenation and projection stay primitive (their defining
/// equations are enforced by the evaluator and covered by its tests).
pub fn desugar_term(t: &Term) -> Term {
    let fresh = |tag: &str, avoid: &BTreeSet<String>| -> String {
        let mut i = 0;
        loop {
            let name = format!("__{tag}{i}");
            if !avoid.contains(&name) {
                return name;
            }
            i += 1;
        }
    };
    match t {
        Term::BinOp(op, a, b) => {
            let a = desugar_term(a);
            let b = desugar_term(b);
            match op {
                SetOp::Union => {
                    Term::Union(Box::new(Term::Pair(a.into(), b.into())))
                }
                SetOp::Intersect | SetOp::Diff => {
                    let mut avoid = free_vars_term(&a);
                    avoid.extend(free_vars_term(&b));
                    let z = fresh("z", &avoid);
                    avoid.insert(z.clone());
                    let w = fresh("w", &avoid);
                    // { w | w in b, w = z } = empty  ⇔  z ∉ b
                    let member_set = Term::Comprehension {
                        result: Box::new(Term::Var(w.clone())),
                        binder: w,
                        domain: Box::new(b),
                        filter: Box::new(Formula::Eq(
                            Term::Var("__w_eq_probe".into()),
                            Term::Var("__w_eq_probe".into()),
                        )),
                    };
                    // Patch the filter to compare the bound w with z; built
                    // separately for clarity.
                    let member_set = match member_set {
                        Term::Comprehension { result, binder, domain, .. } => {
                            let filter = Formula::Eq(
                                Term::Var(binder.clone()),
                                Term::Var(z.clone()),
                            );
                            Term::Comprehension {
                                result,
                                binder,
                                domain,
                                filter: Box::new(filter),
                            }
                        }
                        _ => unreachable!(),
                    };
                    let nonmember = Formula::Eq(member_set, Term::Empty);
                    let filter = match op {
                        SetOp::Intersect => Formula::Not(Box::new(nonmember)),
                        SetOp::Diff => nonmember,
                        SetOp::Union => unreachable!(),
                    };
                    Term::Comprehension {
                        result: Box::new(Term::Var(z.clone())),
                        binder: z,
                        domain: Box::new(a),
                        filter: Box::new(filter),
                    }
                }
            }
        }
        Term::Var(_) | Term::Empty | Term::Atoms => t.clone(),
        Term::Pair(a, b) => Term::Pair(desugar_term(a).into(), desugar_term(b).into()),
        Term::Union(a) => Term::Union(desugar_term(a).into()),
        Term::Unique(a) => Term::Unique(desugar_term(a).into()),
        Term::Card(a) => Term::Card(desugar_term(a).into()),
        Term::Concat(a, b) => Term::Concat(desugar_term(a).into(), desugar_term(b).into()),
        Term::Proj(a, b) => Term::Proj(desugar_term(a).into(), desugar_term(b).into()),
        Term::Comprehension { result, binder, domain, filter } => Term::Comprehension {
            result: desugar_term(result).into(),
            binder: binder.clone(),
            domain: desugar_term(domain).into(),
            filter: desugar_formula(filter).into(),
        },
        Term::Iterate { binder, body } => {
            Term::Iterate { binder: binder.clone(), body: desugar_term(body).into() }
        }
        Term::Wsc(w) => Term::Wsc(Box::new(WscNode {
            x: w.x.clone(),
            y: w.y.clone(),
            step: desugar_term(&w.step),
            choice: desugar_term(&w.choice),
            wit: desugar_term(&w.wit),
            out: desugar_term(&w.out),
        })),
        Term::Dc { x, y, step, choice, order } => Term::Dc {
            x: x.clone(),
            y: y.clone(),
            step: desugar_term(step).into(),
            choice: desugar_term(choice).into(),
            order: desugar_term(order).into(),
        },
    }
}

pub fn desugar_formula(f: &Formula) -> Formula {
    match f {
        Formula::Rel(name, args) => {
            Formula::Rel(name.clone(), args.iter().map(desugar_term).collect())
        }
        Formula::Eq(a, b) => Formula::Eq(desugar_term(a), desugar_term(b)),
        Formula::Not(a) => Formula::Not(desugar_formula(a).into()),
        Formula::And(a, b) => {
            Formula::And(desugar_formula(a).into(), desugar_formula(b).into())
        }
        Formula::Or(a, b) => Formula::Or(desugar_formula(a).into(), desugar_formula(b).into()),
        Formula::Wsc(w) => Formula::Wsc(Box::new(WscNode {
            x: w.x.clone(),
            y: w.y.clone(),
            step: desugar_term(&w.step),
            choice: desugar_term(&w.choice),
            wit: desugar_term(&w.wit),
            out: desugar_formula(&w.out),
        })),
    }
}

pub fn desugar_node(n: &Node) -> Node {
    match n {
        Node::Term(t) => Node::Term(desugar_term(t)),
        Node::Formula(f) => Node::Formula(desugar_formula(f)),
    }
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

pub fn render_term(t: &Term) -> String {
    match t {
        Term::Var(v) => v.clone(),
        Term::Empty => "empty".to_string(),
        Term::Atoms => "atoms".to_string(),
        Term::Pair(a, b) => format!("pair({}, {})", render_term(a), render_term(b)),
        Term::Union(a) => format!("union({})", render_term(a)),
        Term::Unique(a) => format!("unique({})", render_term(a)),
        Term::Card(a) => format!("card({})", render_term(a)),
        Term::Concat(a, b) => format!("concat({}, {})", render_term(a), render_term(b)),
        Term::Proj(a, b) => format!("proj({}, {})", render_term(a), render_term(b)),
        Term::BinOp(op, a, b) => {
            let sym = match op {
                SetOp::Union => "cup",
                SetOp::Intersect => "cap",
                SetOp::Diff => "diff",
            };
            // Left-associative chain; parenthesize a right-nested operand.
            let left = render_term(a);
            let right = match **b {
                Term::BinOp(..) => format!("({})", render_term(b)),
                _ => render_term(b),
            };
            format!("{left} {sym} {right}")
        }
        Term::Comprehension { result, binder, domain, filter } => format!(
            "{{ {} | {} in {}, {} }}",
            render_term(result),
            binder,
            render_term(domain),
            render_formula(filter)
        ),
        Term::Iterate { binder, body } => format!("iter {binder} . {}", render_term(body)),
        Term::Wsc(w) => format!(
            "wsc {} {} ({}; {}; {}; {})",
            w.x,
            w.y,
            render_term(&w.step),
            render_term(&w.choice),
            render_term(&w.wit),
            render_term(&w.out)
        ),
        Term::Dc { x, y, step, choice, order } => format!(
            "dc {x} {y} ({}; {}; {})",
            render_term(step),
            render_term(choice),
            render_term(order)
        ),
    }
}

pub fn render_formula(f: &Formula) -> String {
    // Precedence: \/ (1) < /\ (2) < ~ (3) < atoms.
    fn go(f: &Formula, parent: u8) -> String {
        let (text, prec) = match f {
            Formula::Or(a, b) => (format!("{} \\/ {}", go(a, 1), go(b, 2)), 1),
            Formula::And(a, b) => (format!("{} /\\ {}", go(a, 2), go(b, 3)), 2),
            Formula::Not(a) => (format!("~{}", go(a, 3)), 3),
            Formula::Eq(a, b) => (format!("{} = {}", render_term(a), render_term(b)), 4),
            Formula::Rel(name, args) => {
                let parts: Vec<String> = args.iter().map(render_term).collect();
                (format!("{name}({})", parts.join(", ")), 4)
            }
            Formula::Wsc(w) => (
                format!(
                    "wsc {} {} ({}; {}; {}; {})",
                    w.x,
                    w.y,
                    render_term(&w.step),
                    render_term(&w.choice),
                    render_term(&w.wit),
                    render_formula(&w.out)
                ),
                4,
            ),
        };
        if prec < parent {
            format!("({text})")
        } else {
            text
        }
    }
    go(f, 0)
}

pub fn render_node(n: &Node) -> String {
    match n {
        Node::Term(t) => render_term(t),
        Node::Formula(f) => render_formula(f),
    }
}

/// Renders a whole program in the `.bgs` format (bindings appear expanded).
pub fn render_program(p: &Program) -> String {
    let mut out = String::new();
    out.push_str("signature {");
    for (name, arity) in &p.signature.relations {
        out.push_str(&format!(" {name}: {arity};"));
    }
    out.push_str(" }\n");
    for (name, b) in &p.bindings {
        out.push_str(&format!("bound {};\n", b.bound));
        let kind = match &b.node {
            Node::Term(_) => "term",
            Node::Formula(_) => "formula",
        };
        out.push_str(&format!("{kind} {name} := {};\n", render_node(&b.node)));
    }
    out.push_str(&format!("entry {};\n", p.entry));
    out
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Number(u64),
    Sym(&'static str),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, LogicError> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        let (tline, tcol) = (line, col);
        let bump = |c: char, line: &mut usize, col: &mut usize| {
            if c == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
        };
        if c.is_whitespace() {
            chars.next();
            bump(c, &mut line, &mut col);
            continue;
        }
        if c == '#' {
            // comment to end of line
            while let Some(&c) = chars.peek() {
                chars.next();
                bump(c, &mut line, &mut col);
                if c == '\n' {
                    break;
                }
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut ident = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    ident.push(c);
                    chars.next();
                    bump(c, &mut line, &mut col);
                } else {
                    break;
                }
            }
            out.push(Token { tok: Tok::Ident(ident), line: tline, col: tcol });
            continue;
        }
        if c.is_ascii_digit() {
            let mut num = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_digit() {
                    num.push(c);
                    chars.next();
                    bump(c, &mut line, &mut col);
                } else {
                    break;
                }
            }
            let value = num.parse().map_err(|_| LogicError::Syntax {
                line: tline,
                col: tcol,
                msg: "number out of range".to_string(),
            })?;
            out.push(Token { tok: Tok::Number(value), line: tline, col: tcol });
            continue;
        }
        // multi-char symbols first
        let rest: String = chars.clone().take(2).collect();
        let sym: &'static str = if rest == ":=" {
            ":="
        } else if rest == "/\\" {
            "/\\"
        } else if rest == "\\/" {
            "\\/"
        } else {
            match c {
                '{' => "{",
                '}' => "}",
                '(' => "(",
                ')' => ")",
                ',' => ",",
                ';' => ";",
                '.' => ".",
                '|' => "|",
                '=' => "=",
                '~' => "~",
                ':' => ":",
                '^' => "^",
                '*' => "*",
                '+' => "+",
                _ => {
                    return Err(LogicError::Syntax {
                        line: tline,
                        col: tcol,
                        msg: format!("unexpected character {c:?}"),
                    })
                }
            }
        };
        for ch in sym.chars() {
            chars.next();
            bump(ch, &mut line, &mut col);
        }
        out.push(Token { tok: Tok::Sym(sym), line: tline, col: tcol });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    signature: Signature,
    /// Bindings defined so far: name → (params, body).
    macros: Vec<(String, Vec<String>, Node)>,
    text_len: usize,
    _marker: std::marker::PhantomData<&'a ()>,
}

const KEYWORDS: &[&str] = &[
    "empty", "atoms", "pair", "union", "unique", "card", "iter", "wsc", "dc", "concat",
    "proj", "in", "cup", "cap", "diff", "signature", "bound", "term", "formula", "entry",
];

impl Parser<'_> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, LogicError> {
        let (line, col) = self
            .tokens
            .get(self.pos)
            .map(|t| (t.line, t.col))
            .unwrap_or((usize::MAX, self.text_len));
        Err(LogicError::Syntax { line, col, msg: msg.into() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).map(|t| t.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect_sym(&mut self, sym: &str) -> Result<(), LogicError> {
        match self.peek() {
            Some(Tok::Sym(s)) if *s == sym => {
                self.pos += 1;
                Ok(())
            }
            other => self.err(format!("expected `{sym}`, found {other:?}")),
        }
    }

    fn expect_ident(&mut self) -> Result<String, LogicError> {
        match self.peek() {
            Some(Tok::Ident(name)) => {
                let name = name.clone();
                self.pos += 1;
                Ok(name)
            }
            other => self.err(format!("expected an identifier, found {other:?}")),
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), LogicError> {
        match self.peek() {
            Some(Tok::Ident(name)) if name == kw => {
                self.pos += 1;
                Ok(())
            }
            other => self.err(format!("expected `{kw}`, found {other:?}")),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(name)) if name == kw)
    }

    fn at_sym(&self, sym: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(s)) if *s == sym)
    }

    fn find_macro(&self, name: &str) -> Option<&(String, Vec<String>, Node)> {
        self.macros.iter().find(|(n, _, _)| n == name)
    }

    // --- terms ---------------------------------------------------------

    fn parse_term(&mut self) -> Result<Term, LogicError> {
        let mut left = self.parse_term_atom()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Ident(k)) if k == "cup" => SetOp::Union,
                Some(Tok::Ident(k)) if k == "cap" => SetOp::Intersect,
                Some(Tok::Ident(k)) if k == "diff" => SetOp::Diff,
                _ => break,
            };
            self.pos += 1;
            let right = self.parse_term_atom()?;
            left = Term::BinOp(op, left.into(), right.into());
        }
        Ok(left)
    }

    fn parse_term_atom(&mut self) -> Result<Term, LogicError> {
        match self.peek().cloned() {
            Some(Tok::Sym("(")) => {
                self.pos += 1;
                let t = self.parse_term()?;
                self.expect_sym(")")?;
                Ok(t)
            }
            Some(Tok::Sym("{")) => {
                self.pos += 1;
                let result = self.parse_term()?;
                self.expect_sym("|")?;
                let binder = self.expect_ident()?;
                self.expect_keyword("in")?;
                let domain = self.parse_term()?;
                let filter = if self.at_sym(",") {
                    self.pos += 1;
                    self.parse_formula()?
                } else {
                    Formula::Eq(Term::Empty, Term::Empty) // omitted filter = true
                };
                self.expect_sym("}")?;
                Ok(Term::Comprehension {
                    result: result.into(),
                    binder,
                    domain: domain.into(),
                    filter: filter.into(),
                })
            }
            Some(Tok::Ident(name)) => match name.as_str() {
                "empty" => {
                    self.pos += 1;
                    Ok(Term::Empty)
                }
                "atoms" => {
                    self.pos += 1;
                    Ok(Term::Atoms)
                }
                "pair" | "concat" | "proj" => {
                    self.pos += 1;
                    self.expect_sym("(")?;
                    let a = self.parse_term()?;
                    self.expect_sym(",")?;
                    let b = self.parse_term()?;
                    self.expect_sym(")")?;
                    Ok(match name.as_str() {
                        "pair" => Term::Pair(a.into(), b.into()),
                        "concat" => Term::Concat(a.into(), b.into()),
                        _ => Term::Proj(a.into(), b.into()),
                    })
                }
                "union" | "unique" | "card" => {
                    self.pos += 1;
                    self.expect_sym("(")?;
                    let a = self.parse_term()?;
                    self.expect_sym(")")?;
                    Ok(match name.as_str() {
                        "union" => Term::Union(a.into()),
                        "unique" => Term::Unique(a.into()),
                        _ => Term::Card(a.into()),
                    })
                }
                "iter" => {
                    self.pos += 1;
                    let binder = self.expect_ident()?;
                    self.expect_sym(".")?;
                    let body = self.parse_term()?;
                    Ok(Term::Iterate { binder, body: body.into() })
                }
                "wsc" => {
                    self.pos += 1;
                    let (x, y, step, choice, wit) = self.parse_wsc_head()?;
                    // Output clause: a formula when one parses, else a term.
                    let save = self.pos;
                    let out_formula = self.parse_formula().ok().filter(|_| self.at_sym(")"));
                    match out_formula {
                        Some(out) => {
                            self.expect_sym(")")?;
                            // A formula-output operator used in term position
                            // is not meaningful; report it.
                            let _ = out;
                            self.err("witnessed-choice with a formula output cannot be used as a term")
                        }
                        None => {
                            self.pos = save;
                            let out = self.parse_term()?;
                            self.expect_sym(")")?;
                            Ok(Term::Wsc(Box::new(WscNode { x, y, step, choice, wit, out })))
                        }
                    }
                }
                "dc" => {
                    self.pos += 1;
                    let x = self.expect_ident()?;
                    let y = self.expect_ident()?;
                    self.expect_sym("(")?;
                    let step = self.parse_term()?;
                    self.expect_sym(";")?;
                    let choice = self.parse_term()?;
                    self.expect_sym(";")?;
                    let order = self.parse_term()?;
                    self.expect_sym(")")?;
                    Ok(Term::Dc {
                        x,
                        y,
                        step: step.into(),
                        choice: choice.into(),
                        order: order.into(),
                    })
                }
                _ if KEYWORDS.contains(&name.as_str()) => {
                    self.err(format!("keyword `{name}` cannot be used here"))
                }
                _ => {
                    self.pos += 1;
                    // Macro call with arguments?
                    if self.at_sym("(") && self.find_macro(&name).is_some() {
                        let args = self.parse_args()?;
                        return self.expand_macro_term(&name, args);
                    }
                    // Zero-argument macro reference, else a plain variable.
                    if let Some((_, params, Node::Term(_))) = self.find_macro(&name) {
                        if params.is_empty() {
                            return self.expand_macro_term(&name, Vec::new());
                        }
                    }
                    Ok(Term::Var(name))
                }
            },
            other => self.err(format!("expected a term, found {other:?}")),
        }
    }

    fn parse_wsc_head(&mut self) -> Result<(String, String, Term, Term, Term), LogicError> {
        let x = self.expect_ident()?;
        let y = self.expect_ident()?;
        self.expect_sym("(")?;
        let step = self.parse_term()?;
        self.expect_sym(";")?;
        let choice = self.parse_term()?;
        self.expect_sym(";")?;
        let wit = self.parse_term()?;
        self.expect_sym(";")?;
        Ok((x, y, step, choice, wit))
    }

    fn parse_args(&mut self) -> Result<Vec<Term>, LogicError> {
        self.expect_sym("(")?;
        let mut args = Vec::new();
        if !self.at_sym(")") {
            loop {
                args.push(self.parse_term()?);
                if self.at_sym(",") {
                    self.pos += 1;
                } else {
                    break;
                }
            }
        }
        self.expect_sym(")")?;
        Ok(args)
    }

    fn macro_subst(
        &self,
        name: &str,
        args: Vec<Term>,
    ) -> Result<(Node, Vec<(String, Term)>), LogicError> {
        let (_, params, body) = self
            .find_macro(name)
            .ok_or_else(|| LogicError::Unknown(name.to_string()))?;
        if params.len() != args.len() {
            return Err(LogicError::Arity {
                name: name.to_string(),
                expected: params.len(),
                got: args.len(),
            });
        }
        let map: Vec<(String, Term)> =
            params.iter().cloned().zip(args.into_iter()).collect();
        Ok((body.clone(), map))
    }

    fn expand_macro_term(&mut self, name: &str, args: Vec<Term>) -> Result<Term, LogicError> {
        let (body, map) = self.macro_subst(name, args)?;
        match body {
            Node::Term(t) => Ok(subst_term(&t, &map)),
            Node::Formula(_) => {
                self.err(format!("binding `{name}` is a formula, used in term position"))
            }
        }
    }

    fn expand_macro_formula(
        &mut self,
        name: &str,
        args: Vec<Term>,
    ) -> Result<Formula, LogicError> {
        let (body, map) = self.macro_subst(name, args)?;
        match body {
            Node::Formula(f) => Ok(subst_formula(&f, &map)),
            Node::Term(_) => {
                self.err(format!("binding `{name}` is a term, used in formula position"))
            }
        }
    }

    // --- formulas ------------------------------------------------------

    fn parse_formula(&mut self) -> Result<Formula, LogicError> {
        let mut left = self.parse_formula_and()?;
        while self.at_sym("\\/") {
            self.pos += 1;
            let right = self.parse_formula_and()?;
            left = Formula::Or(left.into(), right.into());
        }
        Ok(left)
    }

    fn parse_formula_and(&mut self) -> Result<Formula, LogicError> {
        let mut left = self.parse_formula_not()?;
        while self.at_sym("/\\") {
            self.pos += 1;
            let right = self.parse_formula_not()?;
            left = Formula::And(left.into(), right.into());
        }
        Ok(left)
    }

    fn parse_formula_not(&mut self) -> Result<Formula, LogicError> {
        if self.at_sym("~") {
            self.pos += 1;
            let inner = self.parse_formula_not()?;
            return Ok(Formula::Not(inner.into()));
        }
        self.parse_formula_atom()
    }

    fn parse_formula_atom(&mut self) -> Result<Formula, LogicError> {
        // Parenthesized formula? Could also be a parenthesized term opening
        // an equation — backtrack on failure.
        if self.at_sym("(") {
            let save = self.pos;
            self.pos += 1;
            if let Ok(f) = self.parse_formula() {
                if self.at_sym(")") {
                    self.pos += 1;
                    // Must not be followed by `=`: then it was a term paren.
                    if !self.at_sym("=") {
                        return Ok(f);
                    }
                }
            }
            self.pos = save;
        }
        // Witnessed choice with formula output.
        if self.at_keyword("wsc") {
            let save = self.pos;
            self.pos += 1;
            let head = self.parse_wsc_head();
            if let Ok((x, y, step, choice, wit)) = head {
                let fsave = self.pos;
                if let Ok(out) = self.parse_formula() {
                    if self.at_sym(")") {
                        self.pos += 1;
                        return Ok(Formula::Wsc(Box::new(WscNode {
                            x,
                            y,
                            step,
                            choice,
                            wit,
                            out,
                        })));
                    }
                }
                self.pos = fsave;
                // Term-output operator in formula position: parse the term
                // to fail with a sensible message.
                let _ = self.parse_term()?;
                return self.err("witnessed-choice with a term output cannot be used as a formula");
            }
            self.pos = save;
        }
        // Relation application or formula macro call.
        if let Some(Tok::Ident(name)) = self.peek().cloned() {
            if !KEYWORDS.contains(&name.as_str()) {
                let is_rel = self.signature.arity(&name).is_some();
                let macro_formula = matches!(
                    self.find_macro(&name),
                    Some((_, _, Node::Formula(_)))
                );
                let next_is_paren =
                    matches!(self.tokens.get(self.pos + 1).map(|t| &t.tok), Some(Tok::Sym("(")));
                if is_rel && next_is_paren {
                    self.pos += 1;
                    let args = self.parse_args()?;
                    let expected = self.signature.arity(&name).unwrap();
                    if args.len() != expected {
                        return Err(LogicError::Arity { name, expected, got: args.len() });
                    }
                    return Ok(Formula::Rel(name, args));
                }
                if macro_formula {
                    self.pos += 1;
                    let args =
                        if next_is_paren { self.parse_args()? } else { Vec::new() };
                    return self.expand_macro_formula(&name, args);
                }
            }
        }
        // Fall back to an equation between terms.
        let left = self.parse_term()?;
        self.expect_sym("=")?;
        let right = self.parse_term()?;
        Ok(Formula::Eq(left, right))
    }

    // --- program -------------------------------------------------------

    fn parse_poly(&mut self) -> Result<Polynomial, LogicError> {
        // Consume tokens up to `;` and reuse the string parser.
        let mut text = String::new();
        loop {
            match self.peek() {
                Some(Tok::Sym(";")) | None => break,
                Some(Tok::Ident(id)) => {
                    text.push_str(id);
                    self.pos += 1;
                }
                Some(Tok::Number(n)) => {
                    text.push_str(&n.to_string());
                    self.pos += 1;
                }
                Some(Tok::Sym(s)) => {
                    text.push_str(s);
                    self.pos += 1;
                }
            }
        }
        Polynomial::parse(&text)
            .map_err(|msg| self.err::<()>(msg).unwrap_err())
    }
}

/// Parses a `.bgs` program file.
pub fn parse_program(text: &str) -> Result<Program, LogicError> {
    let tokens = lex(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        signature: Signature { relations: Vec::new() },
        macros: Vec::new(),
        text_len: text.len(),
        _marker: std::marker::PhantomData,
    };

    // signature { R: 2; S: 1; }
    p.expect_keyword("signature")?;
    p.expect_sym("{")?;
    let mut relations = Vec::new();
    while !p.at_sym("}") {
        let name = p.expect_ident()?;
        p.expect_sym(":")?;
        let arity = match p.next() {
            Some(Tok::Number(n)) => n as usize,
            other => return p.err(format!("expected an arity, found {other:?}")),
        };
        p.expect_sym(";")?;
        relations.push((name, arity));
    }
    p.expect_sym("}")?;
    p.signature =
        Signature::new(relations).map_err(|e| LogicError::Invalid(e.to_string()))?;

    let default_bound = Polynomial::parse("n + 2").unwrap();
    let mut ambient = default_bound.clone();
    let mut bindings: Vec<(String, Binding)> = Vec::new();
    let mut entry: Option<String> = None;

    while p.peek().is_some() {
        if p.at_keyword("bound") {
            p.pos += 1;
            let poly = p.parse_poly()?;
            p.expect_sym(";")?;
            // Attach to the immediately preceding binding when it still has
            // the ambient default, and make this the new ambient.
            if let Some((_, last)) = bindings.last_mut() {
                if last.bound == ambient {
                    last.bound = poly.clone();
                }
            }
            ambient = poly;
            continue;
        }
        if p.at_keyword("entry") {
            p.pos += 1;
            let name = p.expect_ident()?;
            p.expect_sym(";")?;
            entry = Some(name);
            continue;
        }
        let kind = if p.at_keyword("term") {
            p.pos += 1;
            "term"
        } else if p.at_keyword("formula") {
            p.pos += 1;
            "formula"
        } else {
            return p.err("expected `term`, `formula`, `bound`, or `entry`");
        };
        let name = p.expect_ident()?;
        if KEYWORDS.contains(&name.as_str()) {
            return Err(LogicError::Invalid(format!("`{name}` is a reserved word")));
        }
        let params = if p.at_sym("(") {
            p.pos += 1;
            let mut params = Vec::new();
            if !p.at_sym(")") {
                loop {
                    params.push(p.expect_ident()?);
                    if p.at_sym(",") {
                        p.pos += 1;
                    } else {
                        break;
                    }
                }
            }
            p.expect_sym(")")?;
            params
        } else {
            Vec::new()
        };
        p.expect_sym(":=")?;
        let node = if kind == "term" {
            Node::Term(p.parse_term()?)
        } else {
            Node::Formula(p.parse_formula()?)
        };
        p.expect_sym(";")?;
        if p.find_macro(&name).is_some() {
            return Err(LogicError::Invalid(format!("binding `{name}` defined twice")));
        }
        p.macros.push((name.clone(), params, node.clone()));
        bindings.push((name, Binding { node, bound: ambient.clone() }));
    }

    let entry = entry.ok_or_else(|| LogicError::Invalid("missing `entry`".to_string()))?;
    let signature = p.signature.clone();
    let program = Program { signature, bindings, entry };
    let entry_binding = program
        .binding(&program.entry)
        .ok_or_else(|| LogicError::Unknown(program.entry.clone()))?;
    // The entry must be closed modulo declared parameters; parameters are
    // macro-level and already expanded away, so any leftover free variable
    // makes the program unevaluable.
    let entry_macro = |name: &str| -> Vec<String> {
        p.macros
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, params, _)| params.clone())
            .unwrap_or_default()
    };
    let params = entry_macro(&program.entry);
    let frees: Vec<String> = free_vars_node(&entry_binding.node)
        .into_iter()
        .filter(|v| !params.contains(v))
        .collect();
    if !frees.is_empty() {
        return Err(LogicError::Unbound(program.entry.clone(), frees.join(", ")));
    }
    Ok(program)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn term(text: &str) -> Term {
        let program = format!("signature {{ E: 2; }}\nbound n;\nterm main := {text};\nentry main;");
        match parse_program(&program).unwrap().entry_binding().node.clone() {
            Node::Term(t) => t,
            _ => panic!("expected a term"),
        }
    }

    fn formula(text: &str) -> Formula {
        let program =
            format!("signature {{ E: 2; }}\nbound n;\nformula main := {text};\nentry main;");
        match parse_program(&program).unwrap().entry_binding().node.clone() {
            Node::Formula(f) => f,
            _ => panic!("expected a formula"),
        }
    }

    #[test]
    fn polynomial_parse_eval_render() {
        let p = Polynomial::parse("3*n^2 + n + 5").unwrap();
        assert_eq!(p.coefficients, vec![5, 1, 3]);
        assert_eq!(p.eval(4), 3 * 16 + 4 + 5);
        assert_eq!(p.to_string(), "3*n^2 + n + 5");
        assert_eq!(Polynomial::parse(&p.to_string()).unwrap(), p);
        assert_eq!(Polynomial::parse("1").unwrap().eval(100), 1);
        assert_eq!(Polynomial::parse("n").unwrap().coefficients, vec![0, 1]);
        let sq = Polynomial::parse("n + 1").unwrap().squared();
        assert_eq!(sq.coefficients, vec![1, 2, 1]);
    }

    #[test]
    fn simple_terms_parse() {
        assert_eq!(term("empty"), Term::Empty);
        assert_eq!(
            term("pair(empty, atoms)"),
            Term::Pair(Term::Empty.into(), Term::Atoms.into())
        );
        let comp = term("{ y | y in atoms, y = y }");
        match comp {
            Term::Comprehension { binder, filter, .. } => {
                assert_eq!(binder, "y");
                assert_eq!(*filter, Formula::Eq(Term::Var("y".into()), Term::Var("y".into())));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(
            term("iter y . atoms"),
            Term::Iterate { binder: "y".into(), body: Term::Atoms.into() }
        );
    }

    #[test]
    fn formula_precedence() {
        let f = formula("empty = empty /\\ ~atoms = empty \\/ E(empty, empty)");
        // Parses as ((empty=empty /\ ~(atoms=empty)) \/ E(...)).
        match f {
            Formula::Or(left, right) => {
                assert!(matches!(*left, Formula::And(..)));
                assert!(matches!(*right, Formula::Rel(..)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn relation_arity_checked() {
        let program =
            "signature { E: 2; }\nbound n;\nformula main := E(empty);\nentry main;";
        assert!(matches!(
            parse_program(program),
            Err(LogicError::Arity { expected: 2, got: 1, .. })
        ));
    }

    #[test]
    fn wsc_parses_in_both_positions() {
        let f = formula("wsc x y (x cup pair(y, y); atoms diff x; empty; x = atoms)");
        match f {
            Formula::Wsc(w) => {
                assert_eq!(w.x, "x");
                assert_eq!(w.y, "y");
                assert!(matches!(w.out, Formula::Eq(..)));
            }
            other => panic!("unexpected {other:?}"),
        }
        let t = term("wsc x y (x; atoms; empty; x)");
        assert!(matches!(t, Term::Wsc(_)));
    }

    #[test]
    fn free_vars_binding_rules() {
        // Iteration binds its variable: iter y . concat(x, y) has frees {x}.
        assert_eq!(
            free_vars_term(&Term::Iterate {
                binder: "y".into(),
                body: Term::Concat(
                    Term::Var("x".into()).into(),
                    Term::Var("y".into()).into()
                )
                .into()
            }),
            BTreeSet::from(["x".to_string()])
        );
        assert_eq!(
            free_vars_term(&Term::Var("x".into())),
            BTreeSet::from(["x".to_string()])
        );
    }

    #[test]
    fn wsc_y_only_bound_in_step_and_wit() {
        let w = WscNode {
            x: "x".to_string(),
            y: "y".to_string(),
            step: Term::Var("y".into()),
            choice: Term::Var("y".into()), // y is NOT bound here
            wit: Term::Var("y".into()),
            out: Term::Var("y".into()), // nor here
        };
        let frees = free_vars_term(&Term::Wsc(Box::new(w)));
        assert_eq!(frees, BTreeSet::from(["y".to_string()]));
    }

    #[test]
    fn entry_must_be_closed() {
        let program = "signature { }\nbound n;\nterm main := x;\nentry main;";
        assert!(matches!(parse_program(program), Err(LogicError::Unbound(..))));
    }

    #[test]
    fn bindings_expand_as_macros() {
        let text = "signature { E: 2; }\n\
                    bound n;\n\
                    term r := atoms diff x;\n\
                    term use := union(r);\n\
                    term f(a, b) := pair(a, b);\n\
                    term main := { f(z, z) | z in atoms, z = z };\n\
                    entry main;";
        let program = parse_program(text).unwrap();
        // `use` expanded `r` with x free (capture-intended macro semantics).
        let use_binding = program.binding("use").unwrap();
        match &use_binding.node {
            Node::Term(Term::Union(inner)) => {
                assert!(matches!(**inner, Term::BinOp(SetOp::Diff, ..)));
            }
            other => panic!("unexpected {other:?}"),
        }
        // f(z, z) expanded to pair(z, z) inside the comprehension.
        match &program.entry_binding().node {
            Node::Term(Term::Comprehension { result, .. }) => {
                assert_eq!(
                    **result,
                    Term::Pair(Term::Var("z".into()).into(), Term::Var("z".into()).into())
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bound_attaches_to_preceding_binding() {
        let text = "signature { }\nformula f := empty = empty;\nbound 1;\nentry f;";
        let program = parse_program(text).unwrap();
        assert_eq!(program.entry_binding().bound, Polynomial::constant(1));
        assert_eq!(program.bindings.len(), 1);
        assert!(matches!(program.entry_binding().node, Node::Formula(Formula::Eq(..))));
    }

    #[test]
    fn render_parse_round_trip_on_samples() {
        let samples = [
            "empty",
            "atoms",
            "pair(empty, atoms)",
            "union(pair(atoms, empty))",
            "{ pair(y, y) | y in atoms, ~y = empty }",
            "iter y . atoms",
            "concat(empty, atoms)",
            "proj(empty, card(atoms))",
            "atoms cup empty",
            "atoms cap (atoms diff empty)",
            "wsc x y (x cup pair(y, y); atoms diff x; empty; x)",
            "dc x y (concat(x, y); atoms diff x; atoms)",
        ];
        for s in samples {
            let t = term(s);
            assert_eq!(term(&render_term(&t)), t, "term round-trip for {s}");
        }
        let fsamples = [
            "empty = empty",
            "~empty = atoms",
            "E(empty, atoms)",
            "empty = empty /\\ (atoms = empty \\/ ~E(empty, empty))",
            "wsc x y (x; atoms; empty; x = atoms)",
        ];
        for s in fsamples {
            let f = formula(s);
            assert_eq!(formula(&render_formula(&f)), f, "formula round-trip for {s}");
        }
    }

    #[test]
    fn desugar_expands_set_ops() {
        let t = term("atoms cup empty");
        assert_eq!(
            desugar_term(&t),
            Term::Union(Box::new(Term::Pair(Term::Atoms.into(), Term::Empty.into())))
        );
        let inter = desugar_term(&term("atoms cap empty"));
        assert!(matches!(inter, Term::Comprehension { .. }));
        let diff = desugar_term(&term("atoms diff empty"));
        match &diff {
            Term::Comprehension { filter, .. } => {
                assert!(matches!(**filter, Formula::Eq(..)));
            }
            other => panic!("unexpected {other:?}"),
        }
        // Desugared forms contain no BinOp anywhere.
        fn no_binop(t: &Term) -> bool {
            !render_term(t).contains(" cup ")
                && !render_term(t).contains(" cap ")
                && !render_term(t).contains(" diff ")
        }
        assert!(no_binop(&desugar_term(&term("(atoms cup empty) cap (atoms diff empty)"))));
    }

    #[test]
    fn program_render_reparses() {
        let text = "signature { E: 2; }\n\
                    bound 2*n + 1;\n\
                    term r := atoms;\n\
                    formula main := r = atoms;\n\
                    entry main;";
        let program = parse_program(text).unwrap();
        let rendered = render_program(&program);
        let reparsed = parse_program(&rendered).unwrap();
        assert_eq!(reparsed, program);
    }
}
