//! Command-line harness for the operator-splitting value iteration lab.
//!
//! Subcommands: `solve` (exact planners), `osvi`, `learn`, `sweep`,
//! `analyze`, and `garnet-gen`. Flags mirror the experiment configuration;
//! a `--config` file overrides flag values field by field. Divergence in a
//! run is reported in the summary, not as a failure exit code.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

use osvi::analysis::gain_operator_norm;
use osvi::envs::GarnetSpec;
use osvi::experiment::{
    analyze_pair, analyze_run, build_env, build_pair, lambda_sweep, run_experiment,
    AlgorithmSpec, EnvSpec, ExperimentConfig, ModelSpec, RhoSpec, SamplingMode,
};
use osvi::learners::Schedule;
use osvi::mdp::Mode;
use osvi::varga::osvi as run_osvi;

#[derive(Parser)]
#[command(name = "osvi", version, about = "Tabular MDP planning and RL lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an exact planner (VI, PI, or MPI) on the true model.
    Solve(SolveArgs),
    /// Run operator-splitting value iteration against an approximate model.
    Osvi(OsviArgs),
    /// Run a sample-based learner (osdyna, dyna, qlearning, td).
    Learn(LearnArgs),
    /// Sweep the model-perturbation parameter and record early iterations.
    Sweep(SweepArgs),
    /// Report effective discount factors and check the propagation bounds.
    Analyze(AnalyzeArgs),
    /// Generate a Garnet MDP and write it as JSON.
    GarnetGen(GarnetGenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvArg {
    Cliffwalk,
    Maze,
    TwoState,
    Garnet,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Pe,
    Control,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Pe => Mode::Pe,
            ModeArg::Control => Mode::Control,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Exact,
    Smooth,
    SelfLoop,
    Mle,
    SmoothedMle,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Constant,
    DelayedDecay,
    RescaledLinear,
}

#[derive(Args)]
struct EnvOpts {
    /// Environment to build.
    #[arg(long, value_enum, default_value = "cliffwalk")]
    env: EnvArg,
    /// Garnet: number of states.
    #[arg(long, default_value_t = 50)]
    garnet_states: usize,
    /// Garnet: number of actions.
    #[arg(long, default_value_t = 4)]
    garnet_actions: usize,
    /// Garnet: branching factor.
    #[arg(long, default_value_t = 3)]
    garnet_branching: usize,
    /// Garnet: number of rewarded states.
    #[arg(long, default_value_t = 5)]
    garnet_rewards: usize,
    /// Garnet: discount factor.
    #[arg(long, default_value_t = 0.99)]
    garnet_discount: f64,
}

impl EnvOpts {
    fn spec(&self) -> EnvSpec {
        match self.env {
            EnvArg::Cliffwalk => EnvSpec::Cliffwalk,
            EnvArg::Maze => EnvSpec::Maze { walls: None },
            EnvArg::TwoState => EnvSpec::TwoState,
            EnvArg::Garnet => EnvSpec::Garnet(GarnetSpec {
                n_states: self.garnet_states,
                n_actions: self.garnet_actions,
                branching: self.garnet_branching,
                reward_states: self.garnet_rewards,
                discount: self.garnet_discount,
                seed: 0,
            }),
        }
    }
}

#[derive(Args)]
struct ModelOpts {
    /// Approximate-model family.
    #[arg(long, value_enum, default_value = "exact")]
    model: ModelArg,
    /// Perturbation strength for smooth / self-loop / smoothed-mle.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
}

impl ModelOpts {
    fn spec(&self) -> ModelSpec {
        match self.model {
            ModelArg::Exact => ModelSpec::Exact,
            ModelArg::Smooth => ModelSpec::Smooth {
                lambda: self.lambda,
            },
            ModelArg::SelfLoop => ModelSpec::SelfLoop {
                lambda: self.lambda,
            },
            ModelArg::Mle => ModelSpec::Mle,
            ModelArg::SmoothedMle => ModelSpec::SmoothedMle {
                lambda: self.lambda,
            },
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    env: EnvOpts,
    /// Planner to run.
    #[arg(long, value_enum, default_value = "vi")]
    algorithm: PlannerArg,
    #[arg(long, value_enum, default_value = "control")]
    mode: ModeArg,
    /// Backups per improvement step (MPI only).
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Early-stop tolerance on consecutive iterates (0 disables).
    #[arg(long, default_value_t = 0.0)]
    tol: f64,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON experiment config; its fields override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlannerArg {
    Vi,
    Pi,
    Mpi,
}

#[derive(Args)]
struct OsviArgs {
    #[command(flatten)]
    env: EnvOpts,
    #[command(flatten)]
    model: ModelOpts,
    #[arg(long, value_enum, default_value = "control")]
    mode: ModeArg,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Inner backups per outer iteration (omit for exact inner solves).
    #[arg(long)]
    inner_backups: Option<usize>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LearnerArg {
    Osdyna,
    Dyna,
    Qlearning,
    Td,
}

#[derive(Args)]
struct LearnArgs {
    #[command(flatten)]
    env: EnvOpts,
    #[command(flatten)]
    model: ModelOpts,
    /// Learner to run.
    #[arg(long, value_enum)]
    algo: LearnerArg,
    #[arg(long, value_enum, default_value = "control")]
    mode: ModeArg,
    #[arg(long, default_value_t = 200_000)]
    steps: u64,
    /// Seeds: comma list and/or inclusive ranges, e.g. "0-19" or "1,2,5".
    #[arg(long, required = true)]
    seeds: String,
    /// Output directory (trajectories.csv + summary.json).
    #[arg(long, required = true)]
    out: PathBuf,
    /// Record metrics every this many steps.
    #[arg(long, default_value_t = 500)]
    record_every: u64,
    /// Learning-rate schedule (omit for the tuned preset).
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
    #[arg(long, default_value_t = 0.02)]
    alpha: f64,
    #[arg(long, default_value_t = 50_000)]
    delay: u64,
    #[arg(long, default_value_t = 0.9995)]
    u: f64,
    /// Inner backups for OS-Dyna (omit for exact replanning).
    #[arg(long)]
    inner_backups: Option<usize>,
    /// Draw states by following sampled transitions instead of uniformly.
    #[arg(long)]
    trajectory_sampling: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    env: EnvOpts,
    /// Perturbation family: smooth or self-loop.
    #[arg(long, value_enum, default_value = "smooth")]
    model: ModelArg,
    #[arg(long, value_enum, default_value = "control")]
    mode: ModeArg,
    /// Comma-separated perturbation strengths.
    #[arg(long, default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    lambdas: String,
    /// Iterations whose errors are recorded.
    #[arg(long, default_value = "1,3,5,7,9")]
    record_iters: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    env: EnvOpts,
    #[command(flatten)]
    model: ModelOpts,
    #[arg(long, value_enum, default_value = "pe")]
    mode: ModeArg,
    /// Weighting distribution: "uniform" or "point:<state>".
    #[arg(long, default_value = "uniform")]
    rho: String,
    /// Also run exact-inner OS-VI for this many iterations and check the
    /// propagation bounds over the realized run.
    #[arg(long)]
    check_iters: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GarnetGenArgs {
    #[arg(long, default_value_t = 50)]
    n_states: usize,
    #[arg(long, default_value_t = 4)]
    n_actions: usize,
    #[arg(long, default_value_t = 3)]
    branching: usize,
    #[arg(long, default_value_t = 5)]
    reward_states: usize,
    #[arg(long, default_value_t = 0.99)]
    discount: f64,
    #[arg(long, required = true)]
    seed: u64,
    /// Output MDP JSON file.
    #[arg(long, required = true)]
    out: PathBuf,
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        if let Some((lo, hi)) = part.split_once('-') {
            let lo: u64 = lo.trim().parse().context("bad seed range start")?;
            let hi: u64 = hi.trim().parse().context("bad seed range end")?;
            if hi < lo {
                bail!("seed range {part} is reversed");
            }
            seeds.extend(lo..=hi);
        } else {
            seeds.push(part.parse().context("bad seed")?);
        }
    }
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(seeds)
}

fn parse_f64_list(spec: &str) -> Result<Vec<f64>> {
    spec.split(',')
        .map(|s| s.trim().parse::<f64>().context("bad number in list"))
        .collect()
}

fn parse_usize_list(spec: &str) -> Result<Vec<usize>> {
    spec.split(',')
        .map(|s| s.trim().parse::<usize>().context("bad integer in list"))
        .collect()
}

fn parse_rho(spec: &str) -> Result<RhoSpec> {
    if spec == "uniform" {
        Ok(RhoSpec::Uniform)
    } else if let Some(state) = spec.strip_prefix("point:") {
        Ok(RhoSpec::PointMass {
            state: state.parse().context("bad point-mass state")?,
        })
    } else {
        bail!("unknown rho spec {spec:?} (use \"uniform\" or \"point:<state>\")");
    }
}

/// Overlays the JSON config file onto the flag-derived config: fields present
/// in the file win.
fn apply_config_file(config: ExperimentConfig, path: &PathBuf) -> Result<ExperimentConfig> {
    let mut base = serde_json::to_value(&config)?;
    let file: serde_json::Value = serde_json::from_reader(
        std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?,
    )?;
    let serde_json::Value::Object(overrides) = file else {
        bail!("config file must hold a JSON object");
    };
    let serde_json::Value::Object(ref mut fields) = base else {
        unreachable!("configs serialize to objects")
    };
    for (k, v) in overrides {
        fields.insert(k, v);
    }
    Ok(serde_json::from_value(base)?)
}

fn report_run(out: &osvi::experiment::ExperimentOutput) {
    for (run_id, seed, diverged) in &out.summary.diverged {
        if *diverged {
            println!("run {run_id} seed {seed}: DIVERGED");
        }
    }
    for (run_id, seed, metric, value) in &out.summary.finals {
        println!("run {run_id} seed {seed}: final {metric} = {value:.6e}");
    }
    if let Some(baseline) = out.summary.model_only_error {
        println!("model-only normalized error = {baseline:.6e}");
    }
    if let Some(report) = &out.summary.gamma_report {
        println!(
            "gamma'_sup = {:.4} (convergent: {}, faster than VI: {}), ||G||_inf = {:.4}",
            report.gamma_prime_sup,
            report.convergent_sup,
            report.faster_than_vi,
            report.g_norm_sup
        );
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Solve(args) => {
            let algorithm = match args.algorithm {
                PlannerArg::Vi => AlgorithmSpec::Vi,
                PlannerArg::Pi => AlgorithmSpec::Pi,
                PlannerArg::Mpi => AlgorithmSpec::Mpi { m: args.m },
            };
            let mut config = ExperimentConfig {
                environment: args.env.spec(),
                algorithm,
                mode: args.mode.into(),
                model: ModelSpec::Exact,
                schedule: None,
                planner_iters: args.iters,
                tol: args.tol,
                inner_backups: None,
                steps: 0,
                seeds: args.seeds.as_deref().map(parse_seeds).transpose()?.unwrap_or(vec![0]),
                record_every: 500,
                rho: RhoSpec::Uniform,
                sampling: SamplingMode::Uniform,
                out: args.out,
            };
            if let Some(path) = &args.config {
                config = apply_config_file(config, path)?;
            }
            let out = run_experiment(&config)?;
            report_run(&out);
            Ok(())
        }
        Command::Osvi(args) => {
            let mut config = ExperimentConfig {
                environment: args.env.spec(),
                algorithm: AlgorithmSpec::Osvi,
                mode: args.mode.into(),
                model: args.model.spec(),
                schedule: None,
                planner_iters: args.iters,
                tol: 0.0,
                inner_backups: args.inner_backups,
                steps: 0,
                seeds: args.seeds.as_deref().map(parse_seeds).transpose()?.unwrap_or(vec![0]),
                record_every: 500,
                rho: RhoSpec::Uniform,
                sampling: SamplingMode::Uniform,
                out: args.out,
            };
            if let Some(path) = &args.config {
                config = apply_config_file(config, path)?;
            }
            let out = run_experiment(&config)?;
            report_run(&out);
            Ok(())
        }
        Command::Learn(args) => {
            let algorithm = match args.algo {
                LearnerArg::Osdyna => AlgorithmSpec::OsDyna,
                LearnerArg::Dyna => AlgorithmSpec::Dyna,
                LearnerArg::Qlearning => AlgorithmSpec::QLearning,
                LearnerArg::Td => AlgorithmSpec::Td,
            };
            let schedule = args.schedule.map(|s| match s {
                ScheduleArg::Constant => Schedule::Constant { alpha: args.alpha },
                ScheduleArg::DelayedDecay => Schedule::DelayedDecay {
                    alpha: args.alpha,
                    delay: args.delay,
                },
                ScheduleArg::RescaledLinear => Schedule::RescaledLinear {
                    alpha: args.alpha,
                    u: args.u,
                },
            });
            let mut config = ExperimentConfig {
                environment: args.env.spec(),
                algorithm,
                mode: args.mode.into(),
                model: args.model.spec(),
                schedule,
                planner_iters: 100,
                tol: 0.0,
                inner_backups: args.inner_backups,
                steps: args.steps,
                seeds: parse_seeds(&args.seeds)?,
                record_every: args.record_every,
                rho: RhoSpec::Uniform,
                sampling: if args.trajectory_sampling {
                    SamplingMode::Trajectory
                } else {
                    SamplingMode::Uniform
                },
                out: Some(args.out),
            };
            if let Some(path) = &args.config {
                config = apply_config_file(config, path)?;
            }
            let out = run_experiment(&config)?;
            report_run(&out);
            Ok(())
        }
        Command::Sweep(args) => {
            let model = match args.model {
                ModelArg::SelfLoop => ModelSpec::SelfLoop { lambda: 0.0 },
                _ => ModelSpec::Smooth { lambda: 0.0 },
            };
            let config = ExperimentConfig {
                environment: args.env.spec(),
                algorithm: AlgorithmSpec::Osvi,
                mode: args.mode.into(),
                model,
                schedule: None,
                planner_iters: 100,
                tol: 0.0,
                inner_backups: None,
                steps: 0,
                seeds: vec![0],
                record_every: 500,
                rho: RhoSpec::Uniform,
                sampling: SamplingMode::Uniform,
                out: args.out,
            };
            let lambdas = parse_f64_list(&args.lambdas)?;
            let record_iters = parse_usize_list(&args.record_iters)?;
            let sweep = lambda_sweep(&config, &lambdas, &record_iters)?;
            for lr in &sweep.per_lambda {
                let flag = if lr.diverged { "DIVERGED" } else { "ok" };
                let errs: Vec<String> = lr
                    .errors
                    .iter()
                    .map(|(k, e)| format!("k={k}: {e:.3e}"))
                    .collect();
                println!("lambda={:.3} [{flag}] {}", lr.lambda, errs.join("  "));
            }
            Ok(())
        }
        Command::Analyze(args) => {
            let env = build_env(&args.env.spec(), 0)?;
            let pair = build_pair(&env.mdp, &args.model.spec())?;
            let rho = parse_rho(&args.rho)?.build(env.mdp.n_states())?;
            let mode = args.mode.into();
            let verdict = match args.check_iters {
                None => {
                    let report = analyze_pair(&pair, &env.eval_policy, Some(&rho), mode)?;
                    println!("{}", serde_json::to_string_pretty(&report)?);
                    println!("||G^pi||_inf = {:.6}", gain_operator_norm(&pair, &env.eval_policy)?);
                    serde_json::to_value(&report)?
                }
                Some(iters) => {
                    let v0 = osvi::ndarray::Array1::zeros(env.mdp.n_states());
                    let run = run_osvi(
                        &pair,
                        mode,
                        Some(&env.eval_policy),
                        &v0,
                        iters,
                        osvi::InnerSolve::Exact,
                    )?;
                    let verdict = analyze_run(&pair, &run, mode, &env.eval_policy, &rho)?;
                    println!("{}", serde_json::to_string_pretty(&verdict)?);
                    println!(
                        "sup-norm bound: holds={} vacuous={}",
                        verdict.bound_sup.holds, verdict.bound_sup.vacuous
                    );
                    serde_json::to_value(&verdict)?
                }
            };
            if let Some(path) = args.out {
                std::fs::write(&path, serde_json::to_vec_pretty(&verdict)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(())
        }
        Command::GarnetGen(args) => {
            let spec = GarnetSpec {
                n_states: args.n_states,
                n_actions: args.n_actions,
                branching: args.branching,
                reward_states: args.reward_states,
                discount: args.discount,
                seed: args.seed,
            };
            let mdp = osvi::envs::build_garnet(&spec)?;
            mdp.to_json_file(&args.out)?;
            println!(
                "wrote {} ({} states, {} actions, seed {})",
                args.out.display(),
                mdp.n_states(),
                mdp.n_actions(),
                args.seed
            );
            Ok(())
        }
    }
}
