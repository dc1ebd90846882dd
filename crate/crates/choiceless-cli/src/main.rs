//! Command-line front-end for the choiceless toolkit.
//!
//! Exit codes: 0 on success, 1 when a predicate subcommand run with
//! `--exit-code` answers in the negative (false / not isomorphic / odd),
//! 2 on usage or input errors, 3 on evaluation failure (the dagger value,
//! an exceeded oracle cap, a failed self-test).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};

use choiceless::canonize::{self, OrbitChooser};
use choiceless::cfi;
use choiceless::coherent;
use choiceless::eval::{self, ChoicePolicy, Verdict};
use choiceless::graphs;
use choiceless::logic::{self, Node};
use choiceless::programs;
use choiceless::structure::{self, Structure};

const EXIT_NEGATIVE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_FAILURE: u8 = 3;

/// Maximum number of paths explored in `eval --exhaustive`.
const EXHAUSTIVE_PATH_CAP: usize = 10_000;

#[derive(Parser)]
#[command(name = "choiceless", version, about = "Evaluate choiceless programs, canonize structures, test isomorphism, compute coherent-configuration sketches, and build and decide CFI instances", max_term_width = 100)]
struct Cli {
    /// Output style for scalar results.
    #[arg(long, global = true, value_enum, default_value_t = Format::Plain)]
    format: Format,
    /// Override the brute-force oracle size cap (also settable via the
    /// CHOICELESS_ORACLE_CAP environment variable).
    #[arg(long, global = true)]
    oracle_cap: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    /// Human-readable lines.
    Plain,
    /// Line-oriented key=value records for harness consumption.
    Records,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a program on a structure.
    Eval(EvalArgs),
    /// Canonize a structure, or emit an equivalent canonization program.
    Canon(CanonArgs),
    /// Decide isomorphism of two structures with the brute-force oracle.
    Iso(IsoArgs),
    /// Print the coherent-configuration sketch of a structure.
    Sketch {
        /// Structure file.
        structure: PathBuf,
    },
    /// Build and decide CFI instances.
    Cfi {
        #[command(subcommand)]
        command: CfiCommand,
    },
    /// Run the oracle cross-check batteries and print a summary.
    Selftest {
        /// Number of batteries run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Args)]
struct EvalArgs {
    /// Program file (.bgs).
    program: PathBuf,
    /// Structure file.
    structure: PathBuf,
    /// Resolve choices pseudo-randomly from this seed instead of picking
    /// the canonically least element.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the choice/witness log before the verdict.
    #[arg(long)]
    trace: bool,
    /// Explore every choice path of a top-level witnessed-choice entry and
    /// report the path statistics instead of a single verdict.
    #[arg(long)]
    exhaustive: bool,
    /// Exit with code 1 when the verdict is false.
    #[arg(long)]
    exit_code: bool,
}

#[derive(Args)]
struct CanonArgs {
    /// Structure file; optional with --emit-bgs.
    structure: Option<PathBuf>,
    /// Resolve orbit choices pseudo-randomly from this seed; the canonical
    /// form is the same for every seed, only the witnesses differ.
    #[arg(long)]
    seed: Option<u64>,
    /// Instead of canonizing, print a witnessed-choice program that decides
    /// whether the canonical form has the edge given by --edge.
    #[arg(long)]
    emit_bgs: bool,
    /// Canonical labels I,J (0-based) queried by the emitted program.
    #[arg(long, value_name = "I,J", default_value = "0,1")]
    edge: String,
}

#[derive(Args)]
struct IsoArgs {
    /// First structure file.
    a: PathBuf,
    /// Second structure file.
    b: PathBuf,
    /// Exit with code 1 when the structures are not isomorphic.
    #[arg(long)]
    exit_code: bool,
}

#[derive(Subcommand)]
enum CfiCommand {
    /// Build a CFI instance over a base graph and print its structure text.
    Gen {
        /// Base graph: a structure file path or one of cycle:N, ring:N, k4, paw.
        #[arg(long)]
        base: String,
        /// Comma-separated base edges to label 1, e.g. 0-1,2-3.
        #[arg(long)]
        flips: Option<String>,
        /// Label the base edges pseudo-randomly from this seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Decide the twist parity of a CFI instance.
    Query {
        /// Structure file in the shape produced by `cfi gen`.
        structure: PathBuf,
        /// Exit with code 1 when the parity is odd.
        #[arg(long)]
        exit_code: bool,
    },
}

/// An error carrying the exit code it should produce.
struct CliError {
    code: u8,
    message: String,
}

fn usage_err(message: impl Into<String>) -> CliError {
    CliError { code: EXIT_USAGE, message: message.into() }
}

fn run_err(message: impl Into<String>) -> CliError {
    CliError { code: EXIT_FAILURE, message: message.into() }
}

trait OrUsage<T> {
    fn or_usage(self, what: &str) -> Result<T, CliError>;
}

impl<T, E: std::fmt::Display> OrUsage<T> for Result<T, E> {
    fn or_usage(self, what: &str) -> Result<T, CliError> {
        self.map_err(|e| usage_err(format!("{what}: {e}")))
    }
}

trait OrFailure<T> {
    fn or_failure(self) -> Result<T, CliError>;
}

impl<T, E: std::fmt::Display> OrFailure<T> for Result<T, E> {
    fn or_failure(self) -> Result<T, CliError> {
        self.map_err(|e| run_err(e.to_string()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(cap) = cli.oracle_cap {
        std::env::set_var("CHOICELESS_ORACLE_CAP", cap.to_string());
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let format = cli.format;
    match cli.command {
        Command::Eval(args) => cmd_eval(args, format),
        Command::Canon(args) => cmd_canon(args, format),
        Command::Iso(args) => cmd_iso(args, format),
        Command::Sketch { structure } => cmd_sketch(&structure),
        Command::Cfi { command } => match command {
            CfiCommand::Gen { base, flips, seed } => cmd_cfi_gen(&base, flips.as_deref(), seed),
            CfiCommand::Query { structure, exit_code } => {
                cmd_cfi_query(&structure, exit_code, format)
            }
        },
        Command::Selftest { jobs } => cmd_selftest(jobs, format),
    }
}

fn read_structure(path: &Path) -> Result<Structure, CliError> {
    let text = std::fs::read_to_string(path)
        .or_usage(&format!("cannot read {}", path.display()))?;
    structure::parse_structure(&text).or_usage(&format!("cannot parse {}", path.display()))
}

fn policy(seed: Option<u64>) -> ChoicePolicy {
    match seed {
        Some(s) => ChoicePolicy::Seeded(s),
        None => ChoicePolicy::FirstCanonical,
    }
}

/// Bare value in plain mode; key=value in records mode.
fn print_kv(format: Format, key: &str, value: &str) {
    match format {
        Format::Plain => println!("{value}"),
        Format::Records => println!("{key}={value}"),
    }
}

/// Labeled in both modes; for multi-field outputs.
fn print_field(format: Format, key: &str, value: &str) {
    match format {
        Format::Plain => println!("{key}: {value}"),
        Format::Records => println!("{key}={value}"),
    }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn cmd_eval(args: EvalArgs, format: Format) -> Result<u8, CliError> {
    let text = std::fs::read_to_string(&args.program)
        .or_usage(&format!("cannot read {}", args.program.display()))?;
    let program = logic::parse_program(&text)
        .or_usage(&format!("cannot parse {}", args.program.display()))?;
    let a = read_structure(&args.structure)?;

    if args.exhaustive {
        return cmd_eval_exhaustive(&a, &program, format);
    }

    let (verdict, trace) =
        eval::eval_program_traced(&a, &program, policy(args.seed), args.trace).or_failure()?;
    for line in &trace {
        match format {
            Format::Plain => println!("{line}"),
            Format::Records => println!("trace={line}"),
        }
    }
    print_kv(format, "verdict", &verdict.to_string());
    Ok(match verdict {
        Verdict::Dagger => EXIT_FAILURE,
        Verdict::Truth(false) if args.exit_code => EXIT_NEGATIVE,
        _ => 0,
    })
}

fn cmd_eval_exhaustive(
    a: &Structure,
    program: &logic::Program,
    format: Format,
) -> Result<u8, CliError> {
    let binding = program.entry_binding();
    let env = eval::Env::new();
    let tree = match logic::desugar_node(&binding.node) {
        Node::Formula(logic::Formula::Wsc(w)) => {
            eval::exhaustive_formula_wsc(a, &env, &w, &binding.bound, EXHAUSTIVE_PATH_CAP)
        }
        Node::Term(logic::Term::Wsc(w)) => {
            eval::exhaustive_term_wsc(a, &env, &w, &binding.bound, EXHAUSTIVE_PATH_CAP)
        }
        _ => {
            return Err(usage_err(
                "--exhaustive requires the entry binding to be a witnessed-choice operator",
            ))
        }
    }
    .or_failure()?;
    let witnessed = tree.paths.iter().filter(|p| p.witnessed).count();
    print_field(format, "paths", &tree.paths.len().to_string());
    print_field(format, "witnessed", &witnessed.to_string());
    print_field(format, "failed", if tree.failed { "yes" } else { "no" });
    for v in tree.value_set() {
        print_field(format, "value", &choiceless::hfset::render(&v));
    }
    Ok(if tree.failed { EXIT_FAILURE } else { 0 })
}

// ---------------------------------------------------------------------------
// canon
// ---------------------------------------------------------------------------

fn cmd_canon(args: CanonArgs, format: Format) -> Result<u8, CliError> {
    if args.emit_bgs {
        let (i, j) = parse_edge_pair(&args.edge)?;
        print!("{}", canonize::emit_canon_edge_query(i, j));
        return Ok(0);
    }
    let path = args
        .structure
        .as_deref()
        .ok_or_else(|| usage_err("a structure file is required unless --emit-bgs is given"))?;
    let a = read_structure(path)?;
    let res =
        canonize::gurevich_canon(&a, &OrbitChooser::Invariant, policy(args.seed)).or_failure()?;
    if !canonize::witnesses_valid(&a, &res) {
        return Err(run_err("internal check failed: produced witnesses do not replay"));
    }
    let order: Vec<String> = res.order.iter().map(|v| v.to_string()).collect();
    match format {
        Format::Plain => println!("order: {}", order.join(" ")),
        Format::Records => println!("order={}", order.join(" ")),
    }
    print!("{}", structure::render_structure(&res.canon));
    Ok(0)
}

fn parse_edge_pair(text: &str) -> Result<(usize, usize), CliError> {
    let parts: Vec<&str> = text.split(',').collect();
    let [i, j] = parts[..] else {
        return Err(usage_err(format!("--edge expects I,J, got {text:?}")));
    };
    let i = i.trim().parse::<usize>().or_usage("--edge")?;
    let j = j.trim().parse::<usize>().or_usage("--edge")?;
    if i == j {
        return Err(usage_err("--edge labels must differ"));
    }
    Ok((i, j))
}

// ---------------------------------------------------------------------------
// iso / sketch
// ---------------------------------------------------------------------------

fn cmd_iso(args: IsoArgs, format: Format) -> Result<u8, CliError> {
    let a = read_structure(&args.a)?;
    let b = read_structure(&args.b)?;
    let iso =
        structure::is_isomorphic(&a, &b, structure::default_oracle_cap()).or_failure()?;
    match format {
        Format::Plain => println!("{}", if iso { "isomorphic" } else { "not isomorphic" }),
        Format::Records => println!("isomorphic={iso}"),
    }
    Ok(if !iso && args.exit_code { EXIT_NEGATIVE } else { 0 })
}

fn cmd_sketch(path: &Path) -> Result<u8, CliError> {
    let a = read_structure(path)?;
    let s = coherent::sketch(&a).or_failure()?;
    print!("{}", coherent::render_sketch(&s));
    Ok(0)
}

// ---------------------------------------------------------------------------
// cfi
// ---------------------------------------------------------------------------

fn resolve_base(name: &str) -> Result<cfi::BaseGraph, CliError> {
    if let Some(base) = cfi::base_from_name(name) {
        return Ok(base);
    }
    let path = Path::new(name);
    if !path.exists() {
        return Err(usage_err(format!(
            "--base {name:?} is neither a known base name (cycle:N, ring:N, k4, paw) nor a file"
        )));
    }
    let s = read_structure(path)?;
    let edges: Vec<(usize, usize)> = s
        .relations
        .get("E")
        .map(|tuples| {
            tuples.iter().filter(|t| t[0] < t[1]).map(|t| (t[0], t[1])).collect()
        })
        .unwrap_or_default();
    cfi::BaseGraph::new(s.universe_size, &edges, s.colors.clone())
        .or_usage(&format!("{} is not a usable base graph", path.display()))
}

fn parse_flips(text: &str) -> Result<Vec<(usize, usize)>, CliError> {
    text.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (u, v) = p
                .trim()
                .split_once('-')
                .ok_or_else(|| usage_err(format!("--flips expects U-V pairs, got {p:?}")))?;
            Ok((
                u.trim().parse::<usize>().or_usage("--flips")?,
                v.trim().parse::<usize>().or_usage("--flips")?,
            ))
        })
        .collect()
}

fn cmd_cfi_gen(base: &str, flips: Option<&str>, seed: Option<u64>) -> Result<u8, CliError> {
    if flips.is_some() && seed.is_some() {
        return Err(usage_err("--flips and --seed are mutually exclusive"));
    }
    let base = resolve_base(base)?;
    let spec = match (flips, seed) {
        (Some(text), _) => {
            cfi::CfiSpec::with_flips(base, &parse_flips(text)?).or_usage("--flips")?
        }
        (None, Some(s)) => cfi::CfiSpec::random(base, s),
        (None, None) => cfi::CfiSpec::even(base),
    };
    let g = cfi::build_cfi(&spec).or_failure()?;
    print!("{}", structure::render_structure(&g.structure));
    Ok(0)
}

fn cmd_cfi_query(path: &Path, exit_code: bool, format: Format) -> Result<u8, CliError> {
    let s = read_structure(path)?;
    let g = cfi::recover_cfi(&s).or_usage(&format!("{}", path.display()))?;
    let parity = cfi::cfi_query(&g).or_failure()?;
    print_kv(format, "parity", &parity.to_string());
    Ok(if parity == cfi::Parity::Odd && exit_code { EXIT_NEGATIVE } else { 0 })
}

// ---------------------------------------------------------------------------
// selftest
// ---------------------------------------------------------------------------

type Battery = (&'static str, fn() -> Result<(), String>);

const BATTERIES: &[Battery] = &[
    ("threshold-vs-brute-force", battery_threshold),
    ("canon-matches-iso-oracle", battery_canon),
    ("canon-witnesses-replay", battery_witnesses),
    ("coherent-closure-is-coarsest", battery_coherent),
    ("cfi-query-decides-parity", battery_cfi),
    ("emitted-program-matches-native-canon", battery_emitted),
];

fn cmd_selftest(jobs: usize, format: Format) -> Result<u8, CliError> {
    if jobs == 0 {
        return Err(usage_err("--jobs must be at least 1"));
    }
    let results: Mutex<Vec<Option<Result<(), String>>>> =
        Mutex::new(vec![None; BATTERIES.len()]);
    let next = Mutex::new(0usize);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(BATTERIES.len()) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= BATTERIES.len() {
                    break;
                }
                let outcome = (BATTERIES[i].1)();
                results.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    let results = results.into_inner().unwrap();
    let mut failed = 0usize;
    for ((name, _), outcome) in BATTERIES.iter().zip(&results) {
        match outcome.as_ref().expect("every battery ran") {
            Ok(()) => match format {
                Format::Plain => println!("PASS {name}"),
                Format::Records => println!("{name}=pass"),
            },
            Err(msg) => {
                failed += 1;
                match format {
                    Format::Plain => println!("FAIL {name}: {msg}"),
                    Format::Records => println!("{name}=fail"),
                }
            }
        }
    }
    let passed = BATTERIES.len() - failed;
    match format {
        Format::Plain => println!("passed {passed}/{} batteries", BATTERIES.len()),
        Format::Records => println!("passed={passed}\ntotal={}", BATTERIES.len()),
    }
    Ok(if failed == 0 { 0 } else { EXIT_FAILURE })
}

fn connected_structures_up_to(n: usize) -> Vec<Structure> {
    (1..=n)
        .flat_map(|k| graphs::connected_graphs(k))
        .map(|g| g.to_structure())
        .collect()
}

fn battery_threshold() -> Result<(), String> {
    let program = logic::parse_program(programs::THRESHOLD).map_err(|e| e.to_string())?;
    for g in connected_structures_up_to(5) {
        let want = programs::threshold_oracle(&g);
        let got = eval::eval_program(&g, &program, ChoicePolicy::FirstCanonical)
            .map_err(|e| e.to_string())?;
        if got != Verdict::Truth(want) {
            return Err(format!("disagreement on a {}-vertex graph", g.universe_size));
        }
    }
    Ok(())
}

fn battery_canon() -> Result<(), String> {
    let gs = connected_structures_up_to(5);
    let cap = structure::default_oracle_cap();
    for (i, a) in gs.iter().enumerate() {
        for b in &gs[i..] {
            let by_canon = canonize::iso_by_canon(a, b, &OrbitChooser::Invariant)
                .map_err(|e| e.to_string())?;
            let by_oracle = structure::is_isomorphic(a, b, cap).map_err(|e| e.to_string())?;
            if by_canon != by_oracle {
                return Err(format!(
                    "canon says {by_canon}, oracle says {by_oracle} on a pair of {}- and {}-vertex graphs",
                    a.universe_size, b.universe_size
                ));
            }
        }
    }
    Ok(())
}

fn battery_witnesses() -> Result<(), String> {
    for g in connected_structures_up_to(5) {
        let res = canonize::gurevich_canon(&g, &OrbitChooser::Invariant, ChoicePolicy::Seeded(7))
            .map_err(|e| e.to_string())?;
        if !canonize::witnesses_valid(&g, &res) {
            return Err(format!("witnesses fail on a {}-vertex graph", g.universe_size));
        }
    }
    Ok(())
}

fn battery_coherent() -> Result<(), String> {
    for k in 1..=4 {
        for g in graphs::all_graphs(k) {
            let s = g.to_structure();
            let fast = coherent::refine_2wl(&s).map_err(|e| e.to_string())?;
            let slow = coherent::coherent_closure_oracle(&s).map_err(|e| e.to_string())?;
            // Color ids are numbered differently by the two algorithms;
            // compare the partitions of V x V they induce.
            let mut fwd = std::collections::BTreeMap::new();
            let mut bwd = std::collections::BTreeMap::new();
            for u in 0..k {
                for v in 0..k {
                    let (cf, cs) = (fast.color_of(u, v), slow.color_of(u, v));
                    if *fwd.entry(cf).or_insert(cs) != cs || *bwd.entry(cs).or_insert(cf) != cf {
                        return Err(format!("closure mismatch on a {k}-vertex graph"));
                    }
                }
            }
        }
    }
    Ok(())
}

fn battery_cfi() -> Result<(), String> {
    let base = cfi::cycle_base(3);
    let mut specs = vec![cfi::CfiSpec::even(base.clone())];
    for &e in &[(0usize, 1usize), (1, 2), (0, 2)] {
        specs.push(cfi::CfiSpec::with_flips(base.clone(), &[e]).map_err(|e| e.to_string())?);
    }
    for spec in specs {
        let g = cfi::build_cfi(&spec).map_err(|e| e.to_string())?;
        let text = structure::render_structure(&g.structure);
        let parsed = structure::parse_structure(&text).map_err(|e| e.to_string())?;
        let recovered = cfi::recover_cfi(&parsed).map_err(|e| e.to_string())?;
        let parity = cfi::cfi_query(&recovered).map_err(|e| e.to_string())?;
        if parity != spec.parity() {
            let mut msg = String::new();
            write!(msg, "query says {parity}, labels say {}", spec.parity()).unwrap();
            return Err(msg);
        }
    }
    Ok(())
}

fn battery_emitted() -> Result<(), String> {
    for s in [graphs::path(3), graphs::complete(3), graphs::paw()] {
        let via_program =
            canonize::canon_edges_via_program(&s).map_err(|e| e.to_string())?;
        // The emitted program mirrors the descriptor selector, so compare
        // against the native run with the same chooser.
        let native =
            canonize::gurevich_canon(&s, &OrbitChooser::Descriptor, ChoicePolicy::FirstCanonical)
                .map_err(|e| e.to_string())?;
        let native_edges: std::collections::BTreeSet<(usize, usize)> = native
            .canon
            .relations
            .get("E")
            .map(|ts| ts.iter().map(|t| (t[0], t[1])).collect())
            .unwrap_or_default();
        if via_program != native_edges {
            return Err(format!(
                "emitted program and native canonizer disagree on a {}-vertex graph",
                s.universe_size
            ));
        }
    }
    Ok(())
}
