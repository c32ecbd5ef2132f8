//! `tdo`: generate instances, build oracles, answer and benchmark queries.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use tdo_core::bench::{run_bench, sample_queries};
use tdo_core::flat::{preprocess_flat, preprocess_traponly, BuildReport};
use tdo_core::generate::{generate, GeneratorConfig};
use tdo_core::horn::preprocess_horn;
use tdo_core::query::{self, psi, Algorithm};
use tdo_core::store::{Mode, OracleStore};
use tdo_core::tuning::{
    chi, estimate_profile, horn_budget, tune_flat, tune_horn, tune_traponly, MetricProfile, TuningParams,
};
use tdo_core::verify::{verify_instance, verify_store};
use tdo_core::{Error, NodeId, TdInstance};

#[derive(Parser)]
#[command(name = "tdo", version, about = "Time-dependent shortest-path distance oracles")]
struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic instance from a JSON config.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate the metric profile of an instance.
    Profile {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 16)]
        origins: usize,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Build an oracle store.
    Preprocess {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tune: TuneArgs,
    },
    /// Answer one query; prints a JSON line.
    Query {
        #[arg(long)]
        instance: PathBuf,
        /// Not needed for `--algo tdd`.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        origin: NodeId,
        #[arg(long)]
        dest: NodeId,
        #[arg(long, default_value_t = 0.0)]
        time: f64,
        #[arg(long, value_enum)]
        algo: Option<AlgoArg>,
        /// Recursion budget r (default: the store's).
        #[arg(long)]
        budget: Option<u32>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Rank-stratified benchmark against exact TDD.
    Bench {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum)]
        algo: Option<AlgoArg>,
        #[arg(long)]
        budget: Option<u32>,
        #[arg(long)]
        delta: Option<f64>,
        /// JSON report path.
        #[arg(long)]
        out: PathBuf,
        /// Per-query CSV path.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check instance (and store) invariants; exits 2 on violation.
    Verify {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        store: Option<PathBuf>,
        /// Approximate number of exact searches for sandwich checks.
        #[arg(long, default_value_t = 512)]
        checks: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Traponly,
    Flat,
    Horn,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Tdd,
    Fca,
    Rqa,
    #[value(name = "rqa+")]
    RqaPlus,
    Hqa,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Tdd => Algorithm::Tdd,
            AlgoArg::Fca => Algorithm::Fca,
            AlgoArg::Rqa => Algorithm::Rqa,
            AlgoArg::RqaPlus => Algorithm::RqaPlus,
            AlgoArg::Hqa => Algorithm::Hqa,
        }
    }
}

#[derive(Args)]
struct TuneArgs {
    /// `auto` or a key=value parameter file.
    #[arg(long, default_value = "auto")]
    params: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    #[arg(long, default_value_t = 0.66)]
    delta: f64,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    /// HORN levels k.
    #[arg(long = "levels", default_value_t = 2)]
    levels: u32,
    /// Override the tuned recursion budget r.
    #[arg(long)]
    budget: Option<u32>,
    /// Explicit comma-separated ξ_i for HORN instead of window midpoints.
    #[arg(long, value_delimiter = ',')]
    xi: Option<Vec<f64>>,
    #[arg(long, default_value_t = 16)]
    profile_origins: usize,
    #[arg(long, default_value_t = 64)]
    profile_grid: usize,
}

/// Failure with its exit code: 1 usage, 2 invariant violation, 3 I/O.
struct Fail {
    code: u8,
    msg: String,
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Parse { .. } => 3,
            Error::Invariant(_) | Error::Fifo { .. } | Error::Pwl(_) | Error::CellCap { .. } => 2,
            _ => 1,
        };
        Fail { code, msg: e.to_string() }
    }
}

fn usage(msg: impl Into<String>) -> Fail {
    Fail { code: 1, msg: msg.into() }
}

fn io(e: impl std::fmt::Display) -> Fail {
    Fail { code: 3, msg: e.to_string() }
}

fn emit<T: Serialize>(v: &T) -> Result<(), Fail> {
    use std::io::Write;
    let line = serde_json::to_string(v).map_err(io)?;
    match writeln!(std::io::stdout(), "{line}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(io(e)),
        _ => Ok(()),
    }
}

/// Key-value map as JSON, with numeric values as numbers.
fn kv_json(m: &BTreeMap<String, String>) -> Value {
    let obj = m
        .iter()
        .map(|(k, v)| {
            let val = v
                .parse::<f64>()
                .ok()
                .and_then(|x| serde_json::Number::from_f64(x).map(Value::Number))
                .unwrap_or_else(|| Value::String(v.clone()));
            (k.clone(), val)
        })
        .collect();
    Value::Object(obj)
}

fn load_instance(path: &PathBuf) -> Result<TdInstance, Fail> {
    Ok(TdInstance::load(path)?)
}

fn load_store(path: &PathBuf, inst: &TdInstance) -> Result<OracleStore, Fail> {
    let store = OracleStore::load(path, Some(inst.period()))?;
    if store.n != inst.n() {
        return Err(usage(format!("store was built for n = {}, instance has n = {}", store.n, inst.n())));
    }
    Ok(store)
}

fn read_params(path: &str) -> Result<TuningParams, Fail> {
    let text = fs::read_to_string(path).map_err(io)?;
    let mut m = BTreeMap::new();
    for tok in text.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| usage(format!("{path}: expected key=value, got `{tok}`")))?;
        m.insert(k.to_string(), v.to_string());
    }
    let p = TuningParams::from_kv(&m)?;
    p.validate()?;
    Ok(p)
}

fn tune(mode: Mode, inst: &TdInstance, profile: &MetricProfile, a: &TuneArgs) -> Result<TuningParams, Fail> {
    let n = inst.n();
    let alpha = inst.period().ln() / (n as f64).ln();
    let nu = profile.nu;
    let ps = psi(a.eps, profile.zeta, profile.lambda_max);
    let mut p = match mode {
        Mode::TrapOnly => tune_traponly(n, alpha, nu, a.eps, ps, a.delta, a.beta)?,
        Mode::Flat => tune_flat(n, alpha, nu, a.eps, ps, a.delta, a.beta)?,
        Mode::Horn => match &a.xi {
            None => tune_horn(n, alpha, nu, a.gamma, a.levels, a.delta, a.beta, a.eps, profile)?,
            Some(xi) => {
                let r = horn_budget(alpha, nu, a.gamma, a.delta, a.beta)?;
                TuningParams {
                    eps: a.eps,
                    alpha,
                    omega: a.delta / (r as f64 + 1.0),
                    theta: (1.0 + alpha) / (2.0 / nu + alpha),
                    nu,
                    delta: a.delta,
                    beta: a.beta,
                    r,
                    gamma: a.gamma,
                    k: a.levels,
                    xi: xi.clone(),
                    chi: chi(alpha, nu),
                    phi: query::phi(a.eps, ps, r),
                }
            }
        },
    };
    if let Some(r) = a.budget {
        p.r = r;
        p.omega = p.delta / (r as f64 + 1.0);
        p.phi = query::phi(p.eps, ps, r);
    }
    Ok(p)
}

fn run(cli: Cli) -> Result<(), Fail> {
    if let Some(w) = cli.workers {
        rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global().map_err(|e| usage(e.to_string()))?;
    }
    match cli.cmd {
        Cmd::Generate { config, out, seed } => {
            let mut cfg: GeneratorConfig = match config {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(io)?;
                    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
                }
                None => GeneratorConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let inst = generate(&cfg)?;
            inst.save(&out)?;
            let (k, kmax, kstar) = inst.breakpoint_stats();
            eprintln!("wrote {} (n = {}, m = {}, T = {:.4}, K = {k})", out.display(), inst.n(), inst.m(), inst.period());
            emit(&json!({"n": inst.n(), "m": inst.m(), "period": inst.period(), "k": k, "k_max": kmax, "k_star": kstar}))
        }
        Cmd::Profile { instance, origins, grid, seed } => {
            let inst = load_instance(&instance)?;
            let p = estimate_profile(&inst, origins, grid, seed)?;
            eprint!("{}", p.report());
            emit(&kv_json(&p.to_kv()))
        }
        Cmd::Preprocess { instance, mode, out, tune: a } => {
            let inst = load_instance(&instance)?;
            let mode = match mode {
                ModeArg::Traponly => Mode::TrapOnly,
                ModeArg::Flat => Mode::Flat,
                ModeArg::Horn => Mode::Horn,
            };
            let started = std::time::Instant::now();
            let profile = estimate_profile(&inst, a.profile_origins, a.profile_grid, a.seed)?;
            let params = if a.params == "auto" { tune(mode, &inst, &profile, &a)? } else { read_params(&a.params)? };
            let (store, report): (OracleStore, BuildReport) = match mode {
                Mode::TrapOnly => preprocess_traponly(&inst, &params, &profile, a.seed)?,
                Mode::Flat => preprocess_flat(&inst, &params, &profile, a.seed)?,
                Mode::Horn => preprocess_horn(&inst, &params, &profile, a.seed)?,
            };
            store.save(&out)?;
            let secs = started.elapsed().as_secs_f64();
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!(
                "{} store: {} landmarks, {} summaries, {} breakpoints, {} TDD calls, {secs:.2}s -> {}",
                mode,
                report.landmarks,
                report.summaries,
                report.breakpoints,
                report.tdd_calls,
                out.display()
            );
            emit(&json!({
                "mode": mode.to_string(),
                "params": kv_json(&params.to_kv()),
                "landmarks": report.landmarks,
                "summaries": report.summaries,
                "breakpoints": report.breakpoints,
                "tdd_calls": report.tdd_calls,
                "max_nearby": report.max_nearby,
                "max_expansion": report.max_expansion,
                "wall_seconds": secs,
                "warnings": report.warnings,
                "per_landmark": report.per_landmark,
            }))
        }
        Cmd::Query { instance, store, origin, dest, time, algo, budget, delta } => {
            let inst = load_instance(&instance)?;
            for v in [origin, dest] {
                if v as usize >= inst.n() {
                    return Err(usage(format!("vertex {v} out of range (n = {})", inst.n())));
                }
            }
            if matches!(algo, Some(AlgoArg::Tdd)) {
                return emit(&query::exact(&inst, origin, dest, time)?);
            }
            let path = store.ok_or_else(|| usage("--store is required for this algorithm"))?;
            let store = load_store(&path, &inst)?;
            let algo = algo.map(Algorithm::from).unwrap_or_else(|| Algorithm::default_for(store.mode));
            let r = budget.unwrap_or(store.params.r);
            let delta = delta.unwrap_or(store.params.delta);
            let res = query::run(algo, &inst, &store, origin, dest, time, r, delta)?;
            emit(&res)
        }
        Cmd::Bench { instance, store, queries, seed, algo, budget, delta, out, csv } => {
            let inst = load_instance(&instance)?;
            let store = load_store(&store, &inst)?;
            let algo = algo.map(Algorithm::from).unwrap_or_else(|| Algorithm::default_for(store.mode));
            let r = budget.unwrap_or(store.params.r);
            let delta = delta.unwrap_or(store.params.delta);
            let qs = sample_queries(&inst, queries, seed)?;
            let rep = run_bench(&inst, &store, algo, &qs, r, delta, seed)?;
            fs::write(&out, serde_json::to_string_pretty(&rep).map_err(io)?).map_err(io)?;
            if let Some(c) = csv {
                fs::write(&c, rep.to_csv()).map_err(io)?;
            }
            eprintln!(
                "{} queries: max stretch {:.4}, {} under-approximations, exponent {}",
                rep.records.len(),
                rep.max_stretch,
                rep.under_approximations,
                rep.fitted_exponent.map_or("n/a".into(), |x| format!("{x:.3}"))
            );
            emit(&json!({
                "queries": rep.records.len(),
                "max_stretch": rep.max_stretch,
                "under_approximations": rep.under_approximations,
                "fitted_exponent": rep.fitted_exponent,
                "buckets": rep.buckets,
            }))
        }
        Cmd::Verify { instance, store, checks, seed } => {
            let inst = load_instance(&instance)?;
            let violations = match store {
                Some(p) => verify_store(&inst, &load_store(&p, &inst)?, checks, seed)?,
                None => verify_instance(&inst),
            };
            for v in &violations {
                eprintln!("violation: {v}");
            }
            emit(&json!({"violations": violations.len(), "details": violations}))?;
            if violations.is_empty() {
                Ok(())
            } else {
                Err(Fail { code: 2, msg: format!("{} invariant violations", violations.len()) })
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
