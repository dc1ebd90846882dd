//! Interpreter and toolkit for choiceless polynomial time with witnessed
//! symmetric choice: hereditarily finite set values, a term/formula language
//! with comprehension, polynomially bounded iteration and witnessed choice
//! operators, Gurevich-style canonization with witnessing automorphisms,
//! coherent-configuration sketches, and Cai-Fürer-Immerman instances —
//! everything cross-checked against brute-force oracles at desk scale.

pub mod cfi;
pub mod canonize;
pub mod coherent;
pub mod eval;
pub mod graphs;
pub mod hfset;
pub mod logic;
pub mod programs;
pub mod structure;
