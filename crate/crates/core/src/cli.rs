//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use statrs::statistics::{Data, OrderStatistics};

use crate::dcn::{from_orbits, random_graph_sequence, DynGraph};
use crate::engine::{
    centralized_solution, initial_allocation, lagrangian_scale, relative_error, run, write_trajectory_csv,
    LocalCostCache, DEFAULT_VAR_BUDGET, DEFAULT_ZETA,
};
use crate::error::{Error, Result};
use crate::model::{generate_random_scenario, GenParams, Scenario};
use crate::orbits::WalkerConfig;
use crate::robust::{bounds, compute_penalties, nominal_scenario, QNorm, RobustConfig, SyntheticSamples, UncertaintyModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "macop", version, about = "Decentralized constellation scheduling by allocation permutations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a random scenario and communication graph.
    Generate(GenerateArgs),
    /// Run the decentralized process and/or the centralized reference.
    Run(RunArgs),
    /// Robust lower/upper bounds over a sweep of the uncertainty scale.
    Bounds(BoundsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioSource {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Generator preset S1..S4.
    #[arg(long, conflicts_with = "scenario")]
    pub preset: Option<String>,
    #[arg(long, conflicts_with_all = ["scenario", "preset"])]
    pub n: Option<usize>,
    #[arg(long, conflicts_with_all = ["scenario", "preset"])]
    pub m: Option<usize>,
    /// Generator parameters as JSON (overrides defaults field by field).
    #[arg(long, conflicts_with = "scenario")]
    pub gen_config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GraphSource {
    /// Graph JSON file.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Walker configuration JSON; requires --d-max.
    #[arg(long, conflicts_with = "graph", requires = "d_max")]
    pub walker: Option<PathBuf>,
    /// Inter-satellite link range, km.
    #[arg(long)]
    pub d_max: Option<f64>,
    /// Seconds between graph samples for Walker graphs.
    #[arg(long, default_value_t = 600.0)]
    pub sample_dt: f64,
    /// Edge probability of random graphs.
    #[arg(long, default_value_t = 0.2)]
    pub density: f64,
    #[arg(long, default_value_t = 10)]
    pub graph_steps: usize,
    #[arg(long)]
    pub period: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RobustArgs {
    /// Uncertainty scale τ.
    #[arg(long, default_value_t = 0.0)]
    pub tau: f64,
    /// Significance level of the Hotelling region.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Dual norm: 1, 2 or inf.
    #[arg(long, default_value = "2")]
    pub q_norm: String,
    /// Per-satellite samples JSON ([[[q_1..q_m, DR], ...], ...]).
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 0.05)]
    pub rel_sd: f64,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub source: ScenarioSource,
    #[command(flatten)]
    pub graph: GraphSource,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Decentralized,
    Centralized,
    Both,
    RobustBounds,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: ScenarioSource,
    #[command(flatten)]
    pub graph: GraphSource,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    #[arg(long, value_enum, default_value_t = Mode::Decentralized)]
    pub mode: Mode,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Solve the robust local programs.
    #[arg(long)]
    pub tighten: bool,
    #[command(flatten)]
    pub robust: RobustArgs,
    /// Largest centralized program solved exactly.
    #[arg(long, default_value_t = DEFAULT_VAR_BUDGET)]
    pub var_budget: usize,
    /// Slater parameter of the Lagrangian scale.
    #[arg(long, default_value_t = DEFAULT_ZETA)]
    pub zeta: f64,
    /// Leave the timing column empty so outputs are byte-reproducible.
    #[arg(long)]
    pub no_timing: bool,
    /// Dump the allocation matrix after every iteration.
    #[arg(long)]
    pub snapshots: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    /// Split of the nominal centralized optimum.
    Optimal,
    /// Greedy initial allocation.
    Initial,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub source: ScenarioSource,
    /// `a:b:steps`, inclusive.
    #[arg(long, default_value = "0:1:5")]
    pub tau_sweep: String,
    #[command(flatten)]
    pub robust: RobustArgs,
    #[arg(long, value_enum, default_value_t = SplitChoice::Optimal)]
    pub split: SplitChoice,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_VAR_BUDGET)]
    pub var_budget: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// Parses `a:b:steps` into `steps` evenly spaced values from `a` to `b`.
pub fn parse_sweep(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::InvalidInput(format!("sweep '{text}' is not a:b:steps"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let steps: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if steps == 0 || a < 0.0 || b < a {
        return Err(bad());
    }
    if steps == 1 {
        return Ok(vec![a]);
    }
    Ok((0..steps).map(|k| a + (b - a) * k as f64 / (steps - 1) as f64).collect())
}

fn parse_q_norm(text: &str) -> Result<QNorm> {
    match text {
        "1" => Ok(QNorm::One),
        "2" => Ok(QNorm::Two),
        "inf" => Ok(QNorm::Inf),
        other => Err(Error::InvalidInput(format!("q-norm must be 1, 2 or inf, got {other}"))),
    }
}

impl ScenarioSource {
    fn gen_params(&self) -> Result<Option<GenParams>> {
        if self.scenario.is_some() {
            return Ok(None);
        }
        let mut params = match &self.gen_config {
            Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
            None => GenParams::default(),
        };
        if let Some(preset) = &self.preset {
            let p = GenParams::preset(preset)?;
            params.n = p.n;
            params.m = p.m;
        }
        if let Some(n) = self.n {
            params.n = n;
        }
        if let Some(m) = self.m {
            params.m = m;
        }
        Ok(Some(params))
    }

    fn resolve(&self, seed: u64) -> Result<Scenario> {
        match (&self.scenario, self.gen_params()?) {
            (Some(path), _) => Scenario::from_json(&fs::read_to_string(path)?),
            (None, Some(params)) => generate_random_scenario(&params, seed),
            (None, None) => unreachable!("generator parameters exist whenever no file is given"),
        }
    }

    fn is_generated(&self) -> bool {
        self.scenario.is_none()
    }
}

impl GraphSource {
    fn resolve(&self, n: usize, seed: u64) -> Result<DynGraph> {
        if let Some(path) = &self.graph {
            return DynGraph::from_json(&fs::read_to_string(path)?);
        }
        if let Some(path) = &self.walker {
            let cfg: WalkerConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
            if cfg.n_sats != n {
                return Err(Error::Dimension(format!("walker has {} satellites, scenario {n}", cfg.n_sats)));
            }
            let d_max = self.d_max.ok_or_else(|| Error::InvalidInput("--walker needs --d-max".into()))?;
            let times: Vec<f64> = (0..self.graph_steps).map(|k| k as f64 * self.sample_dt).collect();
            return from_orbits(&cfg, d_max, &times);
        }
        random_graph_sequence(n, self.graph_steps, self.density, self.period, seed)
    }
}

impl RobustArgs {
    fn config(&self, seed: u64) -> Result<RobustConfig> {
        let samples = match &self.samples {
            Some(path) => Some(serde_json::from_str(&fs::read_to_string(path)?)?),
            None => None,
        };
        Ok(RobustConfig {
            samples,
            synthetic: Some(SyntheticSamples {
                n_samples: self.n_samples,
                rel_sd: self.rel_sd,
                seed,
            }),
            tau: self.tau,
            alpha_sig: self.alpha,
            q_norm: parse_q_norm(&self.q_norm)?,
        })
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let s = args.source.resolve(args.seed)?;
    let g = args.graph.resolve(s.n, args.seed)?;
    fs::create_dir_all(&args.out)?;
    let (sp, gp) = (args.out.join("scenario.json"), args.out.join("graph.json"));
    write(&sp, &s.to_json())?;
    write(&gp, &g.to_json())?;
    println!("seed {} -> {} ({} satellites, {} targets), {}", args.seed, sp.display(), s.n, s.m, gp.display());
    Ok(())
}

fn quartiles(values: &[f64]) -> Option<serde_json::Value> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return None;
    }
    let mut data = Data::new(finite);
    Some(json!({
        "median": data.median(),
        "p25": data.quantile(0.25),
        "p75": data.quantile(0.75),
    }))
}

struct RepOutcome {
    rep: usize,
    seed: u64,
    j: Vec<f64>,
    v_star: Option<f64>,
    alpha: Option<f64>,
    error: Option<String>,
    infeasible: bool,
}

fn cmd_run(args: &RunArgs) -> Result<bool> {
    if args.mode == Mode::RobustBounds {
        let b = BoundsArgs {
            source: args.source.clone(),
            tau_sweep: format!("{}:{}:1", args.robust.tau, args.robust.tau),
            robust: args.robust.clone(),
            split: SplitChoice::Optimal,
            reps: args.reps,
            seed: args.seed,
            var_budget: args.var_budget,
            out: args.out.clone(),
        };
        return cmd_bounds(&b);
    }
    fs::create_dir_all(&args.out)?;
    let mut outcomes = Vec::with_capacity(args.reps);
    for rep in 0..args.reps {
        let seed = args.seed + rep as u64;
        let mut outcome = RepOutcome {
            rep,
            seed,
            j: Vec::new(),
            v_star: None,
            alpha: None,
            error: None,
            infeasible: false,
        };
        if let Err(e) = run_rep(args, rep, seed, &mut outcome) {
            if !matches!(e, Error::Infeasible(_) | Error::Budget(_) | Error::NoRoot(_)) {
                return Err(e);
            }
            outcome.infeasible = matches!(e, Error::Infeasible(_));
            outcome.error = Some(e.to_string());
            eprintln!("repetition {rep}: {e}");
        }
        outcomes.push(outcome);
    }

    let iters = outcomes.iter().map(|o| o.j.len()).max().unwrap_or(0);
    let per_iteration: Vec<serde_json::Value> = (0..iters)
        .map(|t| {
            let js: Vec<f64> = outcomes.iter().filter_map(|o| o.j.get(t).copied()).collect();
            let res: Vec<f64> = outcomes
                .iter()
                .filter_map(|o| relative_error(*o.j.get(t)?, o.v_star?).ok())
                .collect();
            json!({"iteration": t, "J": quartiles(&js), "relative_error": quartiles(&res)})
        })
        .collect();
    let final_re: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| relative_error(*o.j.last()?, o.v_star?).ok())
        .collect();
    let final_gap: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| {
            let (a, j, v) = (o.alpha?, *o.j.last()?, o.v_star?);
            (a > 0.0).then(|| (j - v) / a)
        })
        .collect();
    let completed = outcomes.iter().filter(|o| o.error.is_none()).count();
    let summary = json!({
        "mode": format!("{:?}", args.mode).to_lowercase(),
        "iterations": args.iterations,
        "reps": args.reps,
        "completed": completed,
        "runs": outcomes.iter().map(|o| json!({
            "rep": o.rep,
            "seed": o.seed,
            "final_J": o.j.last(),
            "v_star": o.v_star,
            "lagrangian_alpha": o.alpha,
            "error": o.error,
        })).collect::<Vec<_>>(),
        "per_iteration": per_iteration,
        "final_relative_error": quartiles(&final_re),
        "final_normalized_gap": quartiles(&final_gap),
    });
    write(&args.out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    println!("{completed}/{} repetitions completed; summary in {}", args.reps, args.out.join("summary.json").display());
    if outcomes.iter().any(|o| o.infeasible) {
        return Err(Error::Infeasible("at least one repetition had no feasible configuration".into()));
    }
    Ok(completed == args.reps)
}

fn run_rep(args: &RunArgs, rep: usize, seed: u64, outcome: &mut RepOutcome) -> Result<()> {
    let s = args.source.resolve(seed)?;
    let (tighten, run_scenario) = if args.tighten {
        let models = args.robust.config(seed)?.fit(&s)?;
        let nominal = nominal_scenario(&s, &models)?;
        (Some(compute_penalties(&nominal, &models)?), nominal)
    } else {
        (None, s)
    };
    let s = run_scenario;
    let tighten = tighten.as_ref();

    if matches!(args.mode, Mode::Centralized | Mode::Both) {
        match centralized_solution(&s, tighten, args.var_budget) {
            Ok(Some((v, _))) => outcome.v_star = Some(v),
            Ok(None) => return Err(Error::Infeasible("centralized program is infeasible".into())),
            Err(Error::Budget(msg)) => eprintln!("repetition {rep}: centralized reference declined: {msg}"),
            Err(e) => return Err(e),
        }
        if outcome.v_star.is_some() {
            outcome.alpha = lagrangian_scale(&s, args.zeta).ok().map(|l| l.alpha);
        }
    }
    if args.mode == Mode::Centralized {
        return Ok(());
    }

    let g = args.graph.resolve(s.n, seed)?;
    let result = run(&s, &g, args.iterations, tighten, seed, args.snapshots)?;
    let traj = result.trajectory();
    outcome.j = traj.iter().map(|r| r.j_total).collect();
    let mut csv = Vec::new();
    write_trajectory_csv(&mut csv, traj, outcome.v_star, !args.no_timing)?;
    fs::write(args.out.join(format!("run_{rep}.csv")), csv)?;
    if let Some(snaps) = &result.state.snapshots {
        let all: Vec<serde_json::Value> = snaps.iter().map(|a| a.to_json()).collect();
        write(&args.out.join(format!("allocations_{rep}.json")), &serde_json::to_string(&all)?)?;
    }
    Ok(())
}

fn cmd_bounds(args: &BoundsArgs) -> Result<bool> {
    let taus = parse_sweep(&args.tau_sweep)?;
    fs::create_dir_all(&args.out)?;
    let mut w = csv::Writer::from_path(args.out.join("bounds.csv"))?;
    w.write_record(["rep", "seed", "tau", "l_b", "u_b", "relative_error", "penalties_exact", "note"])?;
    let reps = if args.source.is_generated() { args.reps } else { 1 };
    let mut infeasible = 0;
    for rep in 0..reps {
        let seed = args.seed + rep as u64;
        let s = args.source.resolve(seed)?;
        let base: Vec<UncertaintyModel> = args.robust.config(seed)?.fit(&s)?;
        let nominal = nominal_scenario(&s, &base)?;
        let chosen = match args.split {
            SplitChoice::Optimal => centralized_solution(&nominal, None, args.var_budget)?
                .map(|(v, split)| (Some(v), split))
                .ok_or_else(|| Error::Infeasible("nominal centralized program is infeasible".into())),
            SplitChoice::Initial => initial_allocation(&nominal, None, seed, &LocalCostCache::new())
                .map(|a0| (None, a0.columns().to_vec())),
        };
        let (l_b, split) = match chosen {
            Ok(c) => c,
            Err(Error::Infeasible(msg)) => {
                eprintln!("repetition {rep}: {msg}");
                infeasible += 1;
                for &tau in &taus {
                    w.write_record([&rep.to_string(), &seed.to_string(), &tau.to_string(), "", "", "", "", &msg])?;
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut l_b = l_b;
        for &tau in &taus {
            let models: Vec<UncertaintyModel> = base.iter().map(|m| m.with_tau(tau)).collect();
            let row = bounds(&nominal, &models, &split, l_b, args.var_budget)?;
            l_b = row.l_b;
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            w.write_record([
                rep.to_string(),
                seed.to_string(),
                tau.to_string(),
                opt(row.l_b),
                opt(row.u_b),
                opt(row.relative_error),
                row.penalties_exact.to_string(),
                row.note.clone(),
            ])?;
        }
    }
    w.flush()?;
    println!("bounds written to {}", args.out.join("bounds.csv").display());
    if infeasible > 0 {
        return Err(Error::Infeasible(format!("{infeasible} of {reps} repetitions infeasible")));
    }
    Ok(true)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::Internal(_) => EXIT_INTERNAL,
        _ => EXIT_USAGE,
    }
}

/// Caps the global thread pool at `MACOP_THREADS` when set.
pub fn configure_threads() {
    if let Some(n) = std::env::var("MACOP_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Parses `args` (program name first) and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(|_| true),
        Command::Run(a) => cmd_run(a),
        Command::Bounds(a) => cmd_bounds(a),
    };
    match outcome {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_INFEASIBLE,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweeps() {
        assert_eq!(parse_sweep("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_sweep("0.2:0.2:1").unwrap(), vec![0.2]);
        for bad in ["0:1", "1:0:3", "0:1:0", "a:b:c"] {
            assert!(parse_sweep(bad).is_err());
        }
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run_cli(["macop", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run_cli(["macop", "run", "--reps", "x"]), EXIT_USAGE);
        assert_eq!(run_cli(["macop", "generate", "--preset", "S9"]), EXIT_USAGE);
    }

    #[test]
    fn generate_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        for out in [&a, &b] {
            let code = run_cli(["macop", "generate", "--n", "3", "--m", "4", "--seed", "9", "--out", out.to_str().unwrap()]);
            assert_eq!(code, EXIT_OK);
        }
        for f in ["scenario.json", "graph.json"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        }
        let s = Scenario::from_json(&fs::read_to_string(a.join("scenario.json")).unwrap()).unwrap();
        assert_eq!((s.n, s.m), (3, 4));
    }

    #[test]
    fn run_both_modes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let code = run_cli([
            "macop", "run", "--n", "3", "--m", "4", "--density", "0.7", "--iterations", "4", "--mode", "both",
            "--reps", "3", "--no-timing", "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_OK);
        for rep in 0..3 {
            assert!(out.join(format!("run_{rep}.csv")).exists());
        }
        let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["completed"], 3);
        assert!(summary["runs"][0]["v_star"].is_number());
        assert!(summary["final_relative_error"]["median"].is_number());
    }
}
