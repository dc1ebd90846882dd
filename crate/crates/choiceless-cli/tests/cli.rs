//! End-to-end tests of the `choiceless` binary: verdicts, exit codes,
//! output formats, and byte-stability across runs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use choiceless::programs;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_choiceless"))
}

fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

const K3: &str = "universe 3;\nE: (0,1) (1,0) (0,2) (2,0) (1,2) (2,1) ;\n";
const P4: &str = "universe 4;\nE: (0,1) (1,0) (1,2) (2,1) (2,3) (3,2) ;\n";
// C5 twice, under different vertex labelings.
const C5A: &str = "universe 5;\nE: (0,1) (1,0) (1,2) (2,1) (2,3) (3,2) (3,4) (4,3) (4,0) (0,4) ;\n";
const C5B: &str = "universe 5;\nE: (0,2) (2,0) (2,4) (4,2) (4,1) (1,4) (1,3) (3,1) (3,0) (0,3) ;\n";

#[test]
fn eval_reports_verdicts_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let prog = write(dir.path(), "threshold.bgs", programs::THRESHOLD);
    let k3 = write(dir.path(), "k3.struct", K3);
    let p4 = write(dir.path(), "p4.struct", P4);

    let out = run(&["eval", prog.to_str().unwrap(), k3.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "true\n");

    // Without --exit-code a false verdict still exits 0.
    let out = run(&["eval", prog.to_str().unwrap(), p4.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "false\n");

    let out = run(&["eval", prog.to_str().unwrap(), p4.to_str().unwrap(), "--exit-code"]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["eval", prog.to_str().unwrap(), k3.to_str().unwrap(), "--format", "records"]);
    assert_eq!(stdout(&out), "verdict=true\n");

    // Seeded runs resolve choices differently but agree on the verdict.
    let out = run(&["eval", prog.to_str().unwrap(), k3.to_str().unwrap(), "--seed", "9"]);
    assert_eq!(stdout(&out), "true\n");

    // The trace mentions every witnessed-choice stage.
    let out = run(&["eval", prog.to_str().unwrap(), k3.to_str().unwrap(), "--trace"]);
    let text = stdout(&out);
    assert!(text.contains("wsc stage 1"), "no stage log in {text:?}");
    assert!(text.ends_with("true\n"));
}

#[test]
fn eval_exhaustive_reports_path_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let prog = write(dir.path(), "threshold.bgs", programs::THRESHOLD);
    let k3 = write(dir.path(), "k3.struct", K3);
    let out = run(&["eval", prog.to_str().unwrap(), k3.to_str().unwrap(), "--exhaustive"]);
    assert_eq!(out.status.code(), Some(0));
    // 3! orders of individualizing the triangle, all witnessed, one value.
    assert_eq!(stdout(&out), "paths: 6\nwitnessed: 6\nfailed: no\nvalue: {a0, a1, a2}\n");
}

#[test]
fn iso_compares_structures() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.struct", C5A);
    let b = write(dir.path(), "b.struct", C5B);
    let p4 = write(dir.path(), "p4.struct", P4);

    let out = run(&["iso", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "isomorphic\n");

    let out = run(&["iso", a.to_str().unwrap(), p4.to_str().unwrap(), "--exit-code"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout(&out), "not isomorphic\n");

    let out = run(&["iso", a.to_str().unwrap(), b.to_str().unwrap(), "--format", "records"]);
    assert_eq!(stdout(&out), "isomorphic=true\n");
}

#[test]
fn canon_output_is_stable_and_label_independent() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.struct", C5A);
    let b = write(dir.path(), "b.struct", C5B);

    let first = stdout(&run(&["canon", a.to_str().unwrap()]));
    let again = stdout(&run(&["canon", a.to_str().unwrap()]));
    assert_eq!(first, again, "identical invocations must be byte-identical");

    // Isomorphic inputs yield the same canonical structure; the order line
    // depends on the input labeling and is skipped.
    let canon_of = |text: &str| text.lines().skip(1).collect::<Vec<_>>().join("\n");
    let other = stdout(&run(&["canon", b.to_str().unwrap()]));
    assert_eq!(canon_of(&first), canon_of(&other));

    // A seeded run picks different representatives but lands on the same form.
    let seeded = stdout(&run(&["canon", a.to_str().unwrap(), "--seed", "3"]));
    assert_eq!(canon_of(&first), canon_of(&seeded));
}

#[test]
fn emitted_program_decides_canonical_edges() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["canon", "--emit-bgs", "--edge", "0,1"]);
    assert_eq!(out.status.code(), Some(0));
    let prog = write(dir.path(), "edge.bgs", &stdout(&out));
    let k3 = write(dir.path(), "k3.struct", K3);
    // The triangle's canonical form has every edge.
    let out = run(&["eval", prog.to_str().unwrap(), k3.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "true\n");
}

#[test]
fn sketch_renders_the_triangle() {
    let dir = tempfile::tempdir().unwrap();
    let k3 = write(dir.path(), "k3.struct", K3);
    let out = run(&["sketch", k3.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with("tau: E\n"), "unexpected sketch {text:?}");
    assert!(text.contains("sigma: 2 colors"));
}

#[test]
fn cfi_gen_and_query_round_trip() {
    let dir = tempfile::tempdir().unwrap();

    let even = stdout(&run(&["cfi", "gen", "--base", "cycle:3"]));
    let even_path = write(dir.path(), "even.struct", &even);
    let out = run(&["cfi", "query", even_path.to_str().unwrap(), "--exit-code"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "even\n");

    let odd = stdout(&run(&["cfi", "gen", "--base", "cycle:3", "--flips", "0-1"]));
    let odd_path = write(dir.path(), "odd.struct", &odd);
    let out = run(&["cfi", "query", odd_path.to_str().unwrap(), "--exit-code"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout(&out), "odd\n");

    let out = run(&["cfi", "query", odd_path.to_str().unwrap(), "--format", "records"]);
    assert_eq!(stdout(&out), "parity=odd\n");

    // A base given as a file works the same as the named form.
    let k3 = write(dir.path(), "k3.struct", K3);
    let from_file = stdout(&run(&["cfi", "gen", "--base", k3.to_str().unwrap()]));
    assert_eq!(from_file, even);

    // Seeded labelings are reproducible.
    let s1 = stdout(&run(&["cfi", "gen", "--base", "k4", "--seed", "5"]));
    let s2 = stdout(&run(&["cfi", "gen", "--base", "k4", "--seed", "5"]));
    assert_eq!(s1, s2);
}

#[test]
fn usage_errors_exit_with_code_two() {
    let out = run(&["eval", "/nonexistent.bgs", "/nonexistent.struct"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["cfi", "gen", "--base", "mystery:9"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["cfi", "gen", "--base", "k4", "--flips", "0-1", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["canon", "--emit-bgs", "--edge", "2,2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn querying_a_non_cfi_structure_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let p4 = write(dir.path(), "p4.struct", P4);
    let out = run(&["cfi", "query", p4.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("not a recognizable instance"));
}
