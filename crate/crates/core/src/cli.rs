//! `ensemble-bridge` command line.
//!
//! Exit codes: 0 success, 1 input error, 2 singular Gramian, 3 divergence.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::bridge::{synthesize_discrete, ContinuousFeedforward, ControllerGains};
use crate::config::{ControllerChoice, RunConfig};
use crate::control::{AnyController, FeedforwardControl, MarkovControl, SampledControl, ZeroControl};
use crate::ensemble::matrix_to_rows;
use crate::error::{BridgeError, Result};
use crate::gramian::{check_avg_controllability, deterministic_steer, ControllabilityReport};
use crate::noise::NoisePath;
use crate::sim::{simulate_ensemble_lean, SimulationRecord};
use crate::study::{convergence_study, path_seed, EndpointStats, PathOutcome};

pub const THREADS_ENV: &str = "ENSEMBLE_BRIDGE_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ensemble-bridge", version, about = "Stochastic bridges for ensembles of linear systems")]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Base seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of Monte Carlo paths; overrides the config.
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Worker threads (falls back to $ENSEMBLE_BRIDGE_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certify averaged controllability and print the report.
    Check,
    /// Synthesize the discrete bridge controller and write gain metadata.
    Synthesize {
        /// Also write every gain block to gains.csv.
        #[arg(long)]
        dump_gains: bool,
    },
    /// Simulate controlled paths; writes trajectories.csv and summary.json.
    Simulate {
        /// One CSV per path under paths/ instead of the long format.
        #[arg(long)]
        per_path: bool,
    },
    /// Run the (a, k) convergence study; writes study.json and study.csv.
    Study,
}

pub fn exit_code(err: &BridgeError) -> i32 {
    match err {
        BridgeError::NotControllable { .. } => EXIT_INFEASIBLE,
        BridgeError::Divergence { .. } => EXIT_DIVERGED,
        _ => EXIT_INPUT,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let threads = match thread_count(cli.threads) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_INPUT;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let BridgeError::NotControllable { report, .. } = &e {
                if let Ok(json) = serde_json::to_string_pretty(report) {
                    println!("{json}");
                }
            }
            exit_code(&e)
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| BridgeError::Config(format!("{THREADS_ENV} must be an integer, got {v:?}"))),
        _ => Ok(None),
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| BridgeError::Config("missing required flag --config".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        if let Some(study) = cfg.study.as_mut() {
            study.base_seed = seed;
        }
    }
    if let Some(n) = cli.paths {
        cfg.n_paths = n;
        if let Some(study) = cfg.study.as_mut() {
            study.n_paths = n;
        }
    }
    match &cli.command {
        Command::Check => cmd_check(&cfg, cli.out.is_some()),
        Command::Synthesize { dump_gains } => cmd_synthesize(&cfg, *dump_gains),
        Command::Simulate { per_path } => cmd_simulate(&cfg, *per_path),
        Command::Study => cmd_study(&cfg),
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn controllability(cfg: &RunConfig) -> Result<ControllabilityReport> {
    check_avg_controllability(&cfg.ensemble, cfg.problem.t_f, cfg.threshold)
}

pub fn cmd_check(cfg: &RunConfig, write: bool) -> Result<i32> {
    let report = controllability(cfg)?;
    let json = to_json(&report)?;
    print!("{json}");
    if write {
        write_file(&cfg.output_dir, "check.json", &json)?;
    }
    Ok(if report.invertible { EXIT_OK } else { EXIT_INFEASIBLE })
}

fn require_controllable(cfg: &RunConfig) -> Result<ControllabilityReport> {
    let report = controllability(cfg)?;
    if !report.invertible {
        return Err(BridgeError::NotControllable { time: 0.0, report });
    }
    Ok(report)
}

#[derive(Serialize)]
struct GainsMetadata<'a> {
    family: Option<&'a str>,
    state_dim: usize,
    input_dim: usize,
    t_f: f64,
    steps_k: usize,
    dt: f64,
    eps: f64,
    penalty_a: f64,
    grid: Vec<f64>,
    gramian: ControllabilityReport,
    open_loop: Vec<Vec<f64>>,
    gain_blocks: usize,
    gain_row_norms: Vec<f64>,
    endpoint_covariance: Vec<Vec<f64>>,
}

fn gains_metadata<'a>(cfg: &'a RunConfig, report: ControllabilityReport, gains: &ControllerGains) -> GainsMetadata<'a> {
    let p = &cfg.problem;
    GainsMetadata {
        family: cfg.family.as_deref(),
        state_dim: cfg.ensemble.state_dim(),
        input_dim: cfg.ensemble.input_dim(),
        t_f: p.t_f,
        steps_k: p.steps_k,
        dt: p.dt(),
        eps: p.eps,
        penalty_a: p.penalty_a,
        grid: p.grid(),
        gramian: report,
        open_loop: gains.open_loop().iter().map(|v| v.iter().copied().collect()).collect(),
        gain_blocks: gains.law.gain_block_count(),
        gain_row_norms: gains.gain_row_norms(),
        endpoint_covariance: matrix_to_rows(&gains.endpoint_covariance()),
    }
}

pub fn cmd_synthesize(cfg: &RunConfig, dump_gains: bool) -> Result<i32> {
    let report = require_controllable(cfg)?;
    let gains = synthesize_discrete(&cfg.ensemble, &cfg.problem)?;
    let meta = to_json(&gains_metadata(cfg, report, &gains))?;
    let path = write_file(&cfg.output_dir, "gains.json", &meta)?;
    eprintln!("wrote {}", path.display());
    if dump_gains {
        let mut csv = String::from("i,j,row,col,value\n");
        for i in 0..gains.steps() {
            for j in 0..i {
                let g = gains.gain(i, j).expect("causal block");
                for r in 0..g.nrows() {
                    for c in 0..g.ncols() {
                        let _ = writeln!(csv, "{i},{j},{r},{c},{}", g[(r, c)]);
                    }
                }
            }
        }
        let path = write_file(&cfg.output_dir, "gains.csv", &csv)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(EXIT_OK)
}

fn csv_header(d: usize, m: usize, with_path: bool) -> String {
    let mut cols: Vec<String> = Vec::new();
    if with_path {
        cols.push("path_id".into());
    }
    cols.push("t".into());
    cols.extend((1..=d).map(|i| format!("x_{i}")));
    cols.extend((1..=m).map(|i| format!("u_{i}")));
    cols.extend((1..=m).map(|i| format!("w_{i}")));
    cols.join(",") + "\n"
}

/// Rows `t, x.., u.., w..` of the averaged process; `u` is NaN at t_k.
fn write_rows(out: &mut String, path_id: Option<usize>, rec: &SimulationRecord) {
    let w = rec.noise.wiener_values();
    let m = rec.noise.dim();
    for (i, t) in rec.grid.iter().enumerate() {
        if let Some(p) = path_id {
            let _ = write!(out, "{p},");
        }
        let _ = write!(out, "{t}");
        // `+ 0.0` folds negative zero.
        for v in rec.averaged_state[i].iter() {
            let _ = write!(out, ",{}", v + 0.0);
        }
        match rec.control.get(i) {
            Some(u) => u.iter().for_each(|v| {
                let _ = write!(out, ",{}", v + 0.0);
            }),
            None => (0..m).for_each(|_| out.push_str(",NaN")),
        }
        for v in w[i].iter() {
            let _ = write!(out, ",{}", v + 0.0);
        }
        out.push('\n');
    }
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    controller: ControllerChoice,
    family: Option<&'a str>,
    n_paths: usize,
    seed: u64,
    steps_k: usize,
    endpoint_error: f64,
    stats: EndpointStats,
}

pub fn cmd_simulate(cfg: &RunConfig, per_path: bool) -> Result<i32> {
    if cfg.n_paths < 1 {
        return Err(BridgeError::Config("n_paths must be at least 1".into()));
    }
    let ens = &cfg.ensemble;
    let prob = &cfg.problem;
    let gains;
    let continuous;
    let controller = match cfg.controller {
        ControllerChoice::None => AnyController::Zero(ZeroControl { dim: ens.input_dim() }),
        ControllerChoice::Markov => AnyController::Markov(MarkovControl),
        ControllerChoice::Deterministic => {
            let steer = deterministic_steer(ens, &prob.x0_vec(), &prob.xf_vec(), prob.t_f)?;
            AnyController::Sampled(SampledControl::from_steering(&steer, &prob.grid())?)
        }
        ControllerChoice::Discrete => {
            require_controllable(cfg)?;
            gains = synthesize_discrete(ens, prob)?;
            AnyController::Feedforward(FeedforwardControl::discrete(&gains))
        }
        ControllerChoice::Continuous => {
            continuous = ContinuousFeedforward::new(ens, prob)?;
            AnyController::Feedforward(FeedforwardControl::continuous(&continuous))
        }
    };

    let m = ens.input_dim();
    let records = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let noise = NoisePath::generate(path_seed(cfg.seed, p), prob.steps_k, prob.dt(), m);
            let mut c = controller.clone();
            simulate_ensemble_lean(ens, prob, &mut c, &noise)
        })
        .collect::<Result<Vec<_>>>()?;

    let d = ens.state_dim();
    if per_path {
        let dir = cfg.output_dir.join("paths");
        for (p, rec) in records.iter().enumerate() {
            let mut csv = csv_header(d, m, false);
            write_rows(&mut csv, None, rec);
            write_file(&dir, &format!("path_{p:05}.csv"), &csv)?;
        }
        eprintln!("wrote {} files under {}", records.len(), dir.display());
    } else {
        let mut csv = csv_header(d, m, true);
        for (p, rec) in records.iter().enumerate() {
            write_rows(&mut csv, Some(p), rec);
        }
        let path = write_file(&cfg.output_dir, "trajectories.csv", &csv)?;
        eprintln!("wrote {}", path.display());
    }

    let outcomes: Vec<PathOutcome> = records.iter().map(PathOutcome::from).collect();
    let stats = EndpointStats::from_outcomes(&outcomes, cfg.seed);
    let summary = SimulationSummary {
        controller: cfg.controller,
        family: cfg.family.as_deref(),
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        steps_k: prob.steps_k,
        endpoint_error: stats.error_max,
        stats,
    };
    let json = to_json(&summary)?;
    let path = write_file(&cfg.output_dir, "summary.json", &json)?;
    eprintln!("wrote {}", path.display());
    Ok(EXIT_OK)
}

pub fn cmd_study(cfg: &RunConfig) -> Result<i32> {
    let study = cfg
        .study
        .as_ref()
        .ok_or_else(|| BridgeError::Config("missing field `study`".into()))?;
    let report = convergence_study(
        &cfg.ensemble,
        &cfg.problem,
        &study.a_list,
        &study.k_list,
        study.n_paths,
        study.base_seed,
    )?;
    let json = to_json(&report)?;
    write_file(&cfg.output_dir, "study.json", &json)?;
    let mut csv = String::from("penalty_a,steps_k,n_paths,mean,std,stderr\n");
    for c in &report.cells {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            c.penalty_a, c.steps_k, c.distance.n, c.distance.mean, c.distance.std, c.distance.stderr
        );
    }
    let path = write_file(&cfg.output_dir, "study.csv", &csv)?;
    eprintln!("wrote {}", path.display());
    Ok(EXIT_OK)
}
