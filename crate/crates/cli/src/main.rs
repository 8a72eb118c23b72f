//! `apfree`: command-line front end for restricted 3-AP analysis.
//!
//! Exit codes: 0 success or free, 1 semantic negative (not free, stuck,
//! failed property), 2 usage or format error, 3 internal consistency
//! failure.

mod report;
mod verify;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use apfree::aps::{extremal_search, is_restricted_ap_free, triple_correlation, CountMethod, Freeness, PointSet, SearchMode, Support};
use apfree::embeddings::{count_embeddings_mod, universal_finite_embedding, verify_certificate, z_embedding, ZOutcome};
use apfree::funcspace::DenseFunction;
use apfree::increment::{increment_run, increment_step, IncrementConfig, IncrementTrace, StepOutcome, Termination};
use apfree::io::{decode_function, encode_function, parse_header};
use apfree::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use report::RunReport;

/// Largest table the CLI will load or build.
pub const MAX_CELLS: usize = 1 << 26;

#[derive(Parser)]
#[command(name = "apfree", version, about = "Restricted 3-AP free sets in F_p^n")]
struct Cli {
    /// Worker threads; falls back to APFREE_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a boolean table for a restricted 3-AP.
    CheckFree {
        #[arg(long)]
        input: PathBuf,
    },
    /// Normalised progression count Λ(1_A, 1_A, 1_A).
    Count {
        #[arg(long)]
        input: PathBuf,
        /// Defaults to `both` up to 4096 points and `direct` beyond, since the Fourier route is quadratic in the table size.
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Abelian embeddings of a support given as JSON {alphabets, atoms}.
    Embed {
        #[arg(long)]
        support: PathBuf,
        #[arg(long, value_enum)]
        target: TargetArg,
        /// Cross-check the finite group against enumeration into Z_m, m ≤ R.
        #[arg(long, default_value_t = 10)]
        max_order: u64,
    },
    /// Write the support of x, x+a, x+2a for a in the given differences.
    ApSupport {
        #[arg(long)]
        p: u32,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        differences: Vec<u32>,
    },
    /// Density increment step or iteration.
    Increment {
        #[command(subcommand)]
        mode: IncrementMode,
    },
    /// Re-apply a trace to its input and check every snapshot.
    Replay {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Expected output table; a byte mismatch is a consistency failure.
        #[arg(long)]
        expect: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the executable property suites.
    Verify {
        #[arg(long, value_enum, default_value_t = verify::Suite::All)]
        suite: verify::Suite,
        #[arg(long, default_value_t = 20)]
        trials: u32,
        #[arg(long)]
        seed: u64,
        /// Negate every tolerance; the suite must then fail.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Largest free set by exhaustive search or branch and bound.
    Search {
        #[arg(long)]
        p: u32,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Bb)]
        mode: ModeArg,
        #[arg(long, default_value_t = 10_000_000)]
        budget: u64,
    },
}

#[derive(Subcommand)]
enum IncrementMode {
    Step(IncrementArgs),
    Run {
        #[command(flatten)]
        args: IncrementArgs,
        #[arg(long, default_value_t = 16)]
        max_iters: usize,
    },
}

#[derive(Args)]
struct IncrementArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Direct,
    Fourier,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Z,
    Finite,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exhaustive,
    Bb,
}

/// A failed command: its exit code and what to print.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
    stdout: Option<Value>,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into(), stdout: None }
    }

    fn negative(message: impl Into<String>, stdout: Value) -> Self {
        Self { code: 1, message: message.into(), stdout: Some(stdout) }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NotFree { .. } => 1,
            Error::Consistency(_) => 3,
            _ => 2,
        };
        let stdout = match &e {
            Error::NotFree { x, a } => Some(json!({ "x": x, "a": a })),
            _ => None,
        };
        Self { code, message: e.to_string(), stdout }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::usage(e.to_string())
    }
}

type CmdResult = Result<Value, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(f) = configure_threads(cli.threads) {
        eprintln!("error: {}", f.message);
        return ExitCode::from(f.code);
    }
    match run(cli.command) {
        Ok(v) => {
            print_json(&v);
            ExitCode::SUCCESS
        }
        Err(f) => {
            if let Some(v) = &f.stdout {
                print_json(v);
            }
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// A closed pipe downstream is not an error worth reporting.
fn print_json(v: &Value) {
    let text = match v {
        Value::String(s) => s.clone(),
        _ => serde_json::to_string_pretty(v).expect("values serialize"),
    };
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn configure_threads(flag: Option<usize>) -> Result<(), Failure> {
    let threads = match flag {
        Some(t) => Some(t),
        None => match std::env::var("APFREE_THREADS") {
            Ok(s) => Some(s.trim().parse().map_err(|_| Failure::usage(format!("APFREE_THREADS = {s:?} is not a count")))?),
            Err(_) => None,
        },
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(Failure::usage("thread count must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::CheckFree { input } => cmd_check_free(&input),
        Command::Count { input, method } => cmd_count(&input, method),
        Command::Embed { support, target, max_order } => cmd_embed(&support, target, max_order),
        Command::ApSupport { p, differences } => {
            let dist = apfree::aps::ap_distribution(p, &differences)?;
            Ok(serde_json::to_value(dist.support())?)
        }
        Command::Increment { mode } => match mode {
            IncrementMode::Step(args) => cmd_increment(&args, None),
            IncrementMode::Run { args, max_iters } => cmd_increment(&args, Some(max_iters)),
        },
        Command::Replay { input, trace, expect, out } => cmd_replay(&input, &trace, expect.as_deref(), out.as_deref()),
        Command::Verify { suite, trials, seed, inject_fault } => {
            if trials == 0 {
                return Err(Failure::usage("--trials must be positive"));
            }
            let rep = verify::run_suite(suite, trials, seed, inject_fault)?;
            let value = serde_json::to_value(&rep)?;
            if rep.passed {
                Ok(value)
            } else {
                Err(Failure::negative("some properties failed", value))
            }
        }
        Command::Search { p, n, mode, budget } => {
            let mode = match mode {
                ModeArg::Exhaustive => SearchMode::Exhaustive,
                ModeArg::Bb => SearchMode::BranchBound,
            };
            Ok(serde_json::to_value(extremal_search(p, n, mode, budget)?)?)
        }
    }
}

pub fn load_function(path: &Path) -> Result<DenseFunction, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let header = parse_header(&bytes)?;
    let cells = header.cube()?.size();
    if cells > MAX_CELLS {
        return Err(Failure::usage(format!("table has {cells} cells, above the 2^26 cap")));
    }
    Ok(decode_function(&bytes)?)
}

fn load_boolean(path: &Path) -> Result<DenseFunction, Failure> {
    let f = load_function(path)?;
    if !f.is_boolean() {
        return Err(Failure::usage(format!("{} is not a boolean table", path.display())));
    }
    Ok(f)
}

fn cmd_check_free(input: &Path) -> CmdResult {
    let f = load_boolean(input)?;
    match is_restricted_ap_free(&PointSet::from_function(&f)?) {
        Freeness::Free => Ok(Value::String("free".into())),
        Freeness::Witness { x, a } => Err(Failure::negative("set contains a restricted 3-AP", json!({ "x": x, "a": a }))),
    }
}

/// Largest table for which the default `count` also runs the Fourier route.
const DEFAULT_FOURIER_LIMIT: usize = 4096;

fn cmd_count(input: &Path, method: Option<MethodArg>) -> CmdResult {
    let f = load_boolean(input)?;
    let method = method.unwrap_or(if f.cube().size() <= DEFAULT_FOURIER_LIMIT { MethodArg::Both } else { MethodArg::Direct });
    let (m, name) = match method {
        MethodArg::Direct => (CountMethod::Direct, "direct"),
        MethodArg::Fourier => (CountMethod::Fourier, "fourier"),
        MethodArg::Both => (CountMethod::Both, "both"),
    };
    let lambda = triple_correlation(&f, &f, &f, m)?;
    let alpha = f.support_size() as f64 / f.cube().size() as f64;
    let floor = alpha / 3f64.powi(f.n() as i32);
    Ok(json!({
        "p": f.p(),
        "n": f.n(),
        "alpha": alpha,
        "lambda": [lambda.re, lambda.im],
        "trivial_floor": floor,
        "method": name,
    }))
}

fn cmd_embed(path: &Path, target: TargetArg, max_order: u64) -> CmdResult {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let support: Support = serde_json::from_str(&text)?;
    support.validate()?;
    match target {
        TargetArg::Z => {
            let rep = z_embedding(&support)?;
            if let ZOutcome::Certificate { certificate } = &rep.outcome {
                let check = verify_certificate(certificate, &support)?;
                if !check.valid || check.trivial {
                    return Err(Error::Consistency("emitted Z certificate failed verification".into()).into());
                }
            }
            Ok(serde_json::to_value(rep)?)
        }
        TargetArg::Finite => {
            if max_order < 2 {
                return Err(Failure::usage("--max-order must be at least 2"));
            }
            let u = universal_finite_embedding(&support)?;
            let mut checks = Vec::new();
            for m in 2..=max_order {
                let counted = count_embeddings_mod(&support, m)?;
                let predicted = u.predicted_count_mod(m);
                if counted != predicted {
                    return Err(Error::Consistency(format!("Z_{m}: enumeration finds {counted}, the group predicts {predicted}")).into());
                }
                checks.push(json!({ "m": m, "embeddings": counted }));
            }
            let mut value = serde_json::to_value(&u)?;
            value["enumeration"] = Value::Array(checks);
            Ok(value)
        }
    }
}

fn read_config(path: &Path) -> Result<IncrementConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
}

fn cmd_increment(args: &IncrementArgs, max_iters: Option<usize>) -> CmdResult {
    let start = Instant::now();
    let f = load_boolean(&args.input)?;
    let mut cfg = read_config(&args.config)?;
    cfg.seed = args.seed;
    cfg.validate(f.p())?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::usage(format!("{}: {e}", args.out.display())))?;
    let trace_path = args.out.join("trace.jsonl");
    let table_path = args.out.join("output.fpfn");
    let density = |g: &DenseFunction| g.support_size() as f64 / g.cube().size() as f64;
    let (g, trace, results, negative) = match max_iters {
        None => match increment_step(&f, &cfg)? {
            StepOutcome::Advanced(rep) => {
                let results = json!({
                    "outcome": "advanced",
                    "branch": rep.branch,
                    "n_before": f.n(),
                    "n_after": rep.g.n(),
                    "density_before": density(&f),
                    "density_after": density(&rep.g),
                    "gain": rep.gain,
                    "diagnostics": rep.diagnostics,
                });
                (rep.g, rep.trace, results, false)
            }
            StepOutcome::Stuck(d) => {
                let results = json!({ "outcome": "stuck", "diagnostics": d });
                (f.clone(), IncrementTrace::default(), results, true)
            }
        },
        Some(iters) => {
            let rep = increment_run(&f, &cfg, iters)?;
            let results = json!({
                "termination": rep.termination,
                "iterations": rep.iterations,
                "n_before": f.n(),
                "n_after": rep.g.n(),
                "density_before": density(&f),
                "density_after": density(&rep.g),
                "endgame": rep.endgame,
                "stuck": rep.stuck,
            });
            let negative = rep.termination == Termination::Stuck && rep.iterations.is_empty();
            (rep.g, rep.trace, results, negative)
        }
    };
    write_file(&trace_path, trace.to_jsonl().as_bytes())?;
    write_file(&table_path, &encode_function(&g)?)?;
    let report = RunReport::new(if max_iters.is_some() { "increment run" } else { "increment step" })
        .config(serde_json::to_value(&cfg)?)
        .seed(args.seed)
        .results(results)
        .trace(&trace_path)
        .finish(start);
    let value = serde_json::to_value(&report)?;
    write_file(&args.out.join("report.json"), serde_json::to_string_pretty(&value)?.as_bytes())?;
    if negative {
        return Err(Failure::negative("increment is stuck", value));
    }
    Ok(value)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn cmd_replay(input: &Path, trace: &Path, expect: Option<&Path>, out: Option<&Path>) -> CmdResult {
    let f = load_boolean(input)?;
    let text = fs::read_to_string(trace).map_err(|e| Failure::usage(format!("{}: {e}", trace.display())))?;
    let trace = IncrementTrace::from_jsonl(&text)?;
    let g = trace.replay(&f)?;
    let bytes = encode_function(&g)?;
    let matches = match expect {
        Some(path) => {
            let want = fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            if want != bytes {
                return Err(Error::Consistency(format!("replayed table differs from {}", path.display())).into());
            }
            Some(true)
        }
        None => None,
    };
    if let Some(path) = out {
        write_file(path, &bytes)?;
    }
    Ok(json!({
        "steps": trace.steps.len(),
        "n": g.n(),
        "density": g.support_size() as f64 / g.cube().size() as f64,
        "matches_expected": matches,
    }))
}
