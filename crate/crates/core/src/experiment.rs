//! Experiment configuration, runners, and result emission.
//!
//! A run produces per-iteration (planners) or per-step (learners) metric
//! records, a CSV of those records, and a JSON summary carrying the config
//! echo, effective-discount report, and divergence flags.

use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::analysis::{
    check_theorem_bounds, effective_discount, BoundCheck, BoundNorm, EffectiveDiscountReport,
};
use crate::envs::{
    build_cliffwalk, build_garnet, build_maze, build_two_state, sample_transition, GarnetSpec,
    CLIFFWALK_START, MAZE_START,
};
use crate::error::{Error, Result};
use crate::learners::{presets, Dyna, ModelUpdater, OsDyna, QLearning, Sample, Schedule, TdLearning};
use crate::linalg;
use crate::mdp::{Mode, Policy, TabularMdp};
use crate::model::{selfloop_model, smooth_model, ModelPair};
use crate::solvers::{
    modified_policy_iteration, policy_iteration, solve_control_exact, solve_pe_direct,
    value_iteration,
};
use crate::trajectory::{aggregate, write_csv, RunTrajectory};
use crate::varga::{osvi, InnerSolve, OsviRun};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum EnvSpec {
    Cliffwalk,
    Maze {
        #[serde(default)]
        walls: Option<Vec<((usize, usize), (usize, usize))>>,
    },
    TwoState,
    Garnet(GarnetSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum AlgorithmSpec {
    Vi,
    Pi,
    Mpi { m: usize },
    Osvi,
    Dyna,
    OsDyna,
    QLearning,
    Td,
}

impl AlgorithmSpec {
    pub fn is_learner(&self) -> bool {
        matches!(
            self,
            AlgorithmSpec::Dyna | AlgorithmSpec::OsDyna | AlgorithmSpec::QLearning | AlgorithmSpec::Td
        )
    }

    pub fn label(&self) -> String {
        match self {
            AlgorithmSpec::Vi => "vi".into(),
            AlgorithmSpec::Pi => "pi".into(),
            AlgorithmSpec::Mpi { m } => format!("mpi-m{m}"),
            AlgorithmSpec::Osvi => "osvi".into(),
            AlgorithmSpec::Dyna => "dyna".into(),
            AlgorithmSpec::OsDyna => "osdyna".into(),
            AlgorithmSpec::QLearning => "qlearning".into(),
            AlgorithmSpec::Td => "td".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum ModelSpec {
    Exact,
    Smooth { lambda: f64 },
    SelfLoop { lambda: f64 },
    Mle,
    SmoothedMle { lambda: f64 },
}

impl ModelSpec {
    pub fn lambda(&self) -> f64 {
        match *self {
            ModelSpec::Exact | ModelSpec::Mle => 0.0,
            ModelSpec::Smooth { lambda }
            | ModelSpec::SelfLoop { lambda }
            | ModelSpec::SmoothedMle { lambda } => lambda,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum RhoSpec {
    Uniform,
    PointMass { state: usize },
    Explicit { weights: Vec<f64> },
}

impl RhoSpec {
    pub fn build(&self, n_states: usize) -> Result<Array1<f64>> {
        match self {
            RhoSpec::Uniform => Ok(Array1::from_elem(n_states, 1.0 / n_states as f64)),
            RhoSpec::PointMass { state } => {
                if *state >= n_states {
                    return Err(Error::invalid(format!("point mass on state {state}")));
                }
                let mut rho = Array1::zeros(n_states);
                rho[*state] = 1.0;
                Ok(rho)
            }
            RhoSpec::Explicit { weights } => {
                if weights.len() != n_states {
                    return Err(Error::dims("rho length mismatch"));
                }
                Ok(Array1::from_vec(weights.clone()))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// `(x, a)` uniform over state-action pairs (the experiment default).
    Uniform,
    /// Follow sampled next states; actions stay uniform.
    Trajectory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub environment: EnvSpec,
    pub algorithm: AlgorithmSpec,
    pub mode: Mode,
    pub model: ModelSpec,
    /// Learner schedule; `None` picks the shipped preset for the algorithm.
    #[serde(default)]
    pub schedule: Option<Schedule>,
    #[serde(default = "default_planner_iters")]
    pub planner_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Inner backups for iterative OS-VI / OS-Dyna; `None` means exact.
    #[serde(default)]
    pub inner_backups: Option<usize>,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    #[serde(default = "default_rho")]
    pub rho: RhoSpec,
    #[serde(default = "default_sampling")]
    pub sampling: SamplingMode,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_planner_iters() -> usize {
    100
}
fn default_tol() -> f64 {
    0.0
}
fn default_steps() -> u64 {
    200_000
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_record_every() -> u64 {
    500
}
fn default_rho() -> RhoSpec {
    RhoSpec::Uniform
}
fn default_sampling() -> SamplingMode {
    SamplingMode::Uniform
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        match self.algorithm {
            AlgorithmSpec::Td if self.mode != Mode::Pe => {
                return Err(Error::invalid("td is evaluation-only"))
            }
            AlgorithmSpec::QLearning if self.mode != Mode::Control => {
                return Err(Error::invalid("qlearning is control-only"))
            }
            _ => {}
        }
        let lambda = self.model.lambda();
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::invalid("model lambda must lie in [0,1]"));
        }
        if !self.algorithm.is_learner() {
            if matches!(self.model, ModelSpec::Mle | ModelSpec::SmoothedMle { .. }) {
                return Err(Error::invalid(
                    "planners need a closed-form model (exact, smooth, self-loop)",
                ));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if let Some(schedule) = &self.schedule {
            schedule.validate()?;
        }
        Ok(())
    }

    pub fn inner(&self) -> InnerSolve {
        match self.inner_backups {
            None => InnerSolve::Exact,
            Some(l) => InnerSolve::Iterative(l),
        }
    }

    fn default_schedule(&self) -> Schedule {
        match (self.algorithm, self.mode) {
            (AlgorithmSpec::QLearning, _) => presets::q_learning_delayed(),
            (AlgorithmSpec::OsDyna, Mode::Control) => presets::osdyna_control_tuned(),
            (AlgorithmSpec::OsDyna, Mode::Pe) => presets::osdyna_pe_rescaled(),
            (AlgorithmSpec::Td, _) => presets::td_rescaled(),
            _ => Schedule::Constant { alpha: 0.1 },
        }
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule.unwrap_or_else(|| self.default_schedule())
    }
}

/// A built environment: the true MDP, the canonical evaluation policy, and
/// the designated start state.
pub struct BuiltEnv {
    pub mdp: TabularMdp,
    pub eval_policy: Policy,
    pub start: usize,
}

pub fn build_env(env: &EnvSpec, seed: u64) -> Result<BuiltEnv> {
    match env {
        EnvSpec::Cliffwalk => {
            let (mdp, eval_policy) = build_cliffwalk();
            Ok(BuiltEnv {
                mdp,
                eval_policy,
                start: CLIFFWALK_START,
            })
        }
        EnvSpec::Maze { walls } => {
            let (mdp, eval_policy) = build_maze(walls.as_deref())?;
            Ok(BuiltEnv {
                mdp,
                eval_policy,
                start: MAZE_START,
            })
        }
        EnvSpec::TwoState => {
            let two = build_two_state();
            Ok(BuiltEnv {
                mdp: two.mdp,
                eval_policy: two.policy,
                start: 0,
            })
        }
        EnvSpec::Garnet(spec) => {
            // The run seed selects the instance, so a seed list yields an
            // ensemble of Garnet problems.
            let instance = GarnetSpec {
                seed,
                ..spec.clone()
            };
            let mdp = build_garnet(&instance)?;
            let (_, eval_policy) = solve_control_exact(&mdp)?;
            Ok(BuiltEnv {
                mdp,
                eval_policy,
                start: 0,
            })
        }
    }
}

/// Builds the approximate-model pair a planner runs against.
pub fn build_pair(mdp: &TabularMdp, model: &ModelSpec) -> Result<ModelPair> {
    match *model {
        ModelSpec::Exact => Ok(ModelPair::exact(mdp.clone())),
        ModelSpec::Smooth { lambda } => smooth_model(mdp, lambda),
        ModelSpec::SelfLoop { lambda } => selfloop_model(mdp, lambda),
        ModelSpec::Mle | ModelSpec::SmoothedMle { .. } => Err(Error::invalid(
            "MLE models are learner-side; planners need a closed-form model",
        )),
    }
}

fn learner_updater(mdp: &TabularMdp, model: &ModelSpec) -> Result<ModelUpdater> {
    Ok(match *model {
        ModelSpec::Mle => ModelUpdater::Mle,
        ModelSpec::SmoothedMle { lambda } => ModelUpdater::SmoothedMle(lambda),
        ModelSpec::Exact => ModelUpdater::Frozen(mdp.transition().clone()),
        ModelSpec::Smooth { lambda } => {
            ModelUpdater::Frozen(smooth_model(mdp, lambda)?.approx_transition().clone())
        }
        ModelSpec::SelfLoop { lambda } => {
            ModelUpdater::Frozen(selfloop_model(mdp, lambda)?.approx_transition().clone())
        }
    })
}

/// `||v - v_ref||_1 / ||v_ref||_1`.
pub fn normalized_error(v: &Array1<f64>, v_ref: &Array1<f64>) -> Result<f64> {
    if v.len() != v_ref.len() {
        return Err(Error::dims("normalized_error length mismatch"));
    }
    let ref_norm: f64 = v_ref.iter().map(|x| x.abs()).sum();
    if ref_norm <= 0.0 {
        return Err(Error::invalid(
            "normalized error needs a nonzero reference",
        ));
    }
    let diff: f64 = v
        .iter()
        .zip(v_ref.iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(diff / ref_norm)
}

/// JSON summary written beside the CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    /// Normalized error of the purely model-based solution, when a model is
    /// in play (the flat dashed baseline).
    pub model_only_error: Option<f64>,
    /// Effective-discount report for OS-VI runs (evaluation policy).
    pub gamma_report: Option<EffectiveDiscountReport>,
    /// `(run_id, seed, diverged)` per run.
    pub diverged: Vec<(String, u64, bool)>,
    /// Final value of each run's headline metric.
    pub finals: Vec<(String, u64, String, f64)>,
}

pub struct ExperimentOutput {
    pub runs: Vec<RunTrajectory>,
    pub aggregate: RunTrajectory,
    pub summary: Summary,
}

/// Runs the configured experiment for every seed (in parallel) and writes
/// the CSV plus summary when an output directory is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let runs: Vec<RunTrajectory> = config
        .seeds
        .par_iter()
        .map(|&seed| run_single(config, seed))
        .collect::<Result<Vec<_>>>()?;

    let aggregate = aggregate(&runs, &format!("{}-aggregate", config.algorithm.label()));
    let model_only_error = match (config.algorithm, &config.model) {
        (AlgorithmSpec::Osvi, m) if *m != ModelSpec::Exact => {
            let env = build_env(&config.environment, config.seeds[0])?;
            Some(model_only_baseline(
                &env,
                &build_pair(&env.mdp, m)?,
                config.mode,
            )?)
        }
        _ => None,
    };
    let gamma_report = match config.algorithm {
        AlgorithmSpec::Osvi => {
            let env = build_env(&config.environment, config.seeds[0])?;
            let pair = build_pair(&env.mdp, &config.model)?;
            let rho = config.rho.build(env.mdp.n_states())?;
            Some(effective_discount(
                &pair,
                &env.eval_policy,
                Some(&rho),
                config.mode,
            )?)
        }
        _ => None,
    };
    let diverged = runs
        .iter()
        .map(|r| (r.run_id.clone(), r.seed, r.diverged))
        .collect();
    let headline = if config.algorithm.is_learner() && config.mode == Mode::Control {
        "return_start"
    } else if config.mode == Mode::Control && config.algorithm == AlgorithmSpec::Pi {
        "policy_normalized_error"
    } else {
        "normalized_error"
    };
    let finals = runs
        .iter()
        .filter_map(|r| {
            r.last_value(headline)
                .map(|v| (r.run_id.clone(), r.seed, headline.to_string(), v))
        })
        .collect();
    let summary = Summary {
        config: config.clone(),
        model_only_error,
        gamma_report,
        diverged,
        finals,
    };

    if let Some(dir) = &config.out {
        std::fs::create_dir_all(dir)?;
        let mut all = runs.clone();
        all.push(aggregate.clone());
        let file = std::fs::File::create(dir.join("trajectories.csv"))?;
        write_csv(std::io::BufWriter::new(file), &all)?;
        let summary_file = std::fs::File::create(dir.join("summary.json"))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(summary_file), &summary)
            .map_err(|e| Error::Parse(e.to_string()))?;
    }

    Ok(ExperimentOutput {
        runs,
        aggregate,
        summary,
    })
}

/// Normalized error of the solution computed purely from the approximate
/// model: the value of its optimal policy under the true dynamics (Control)
/// or the model's evaluation of the policy (PE).
pub fn model_only_baseline(env: &BuiltEnv, pair: &ModelPair, mode: Mode) -> Result<f64> {
    match mode {
        Mode::Control => {
            let (v_star, _) = solve_control_exact(&env.mdp)?;
            let (_, pi_hat) = solve_control_exact(&pair.approx_mdp())?;
            let v_pi_hat = solve_pe_direct(&env.mdp, &pi_hat)?;
            normalized_error(&v_pi_hat, &v_star)
        }
        Mode::Pe => {
            let v_pi = solve_pe_direct(&env.mdp, &env.eval_policy)?;
            let v_model = solve_pe_direct(&pair.approx_mdp(), &env.eval_policy)?;
            normalized_error(&v_model, &v_pi)
        }
    }
}

fn run_single(config: &ExperimentConfig, seed: u64) -> Result<RunTrajectory> {
    let env = build_env(&config.environment, seed)?;
    let label = config.algorithm.label();
    let n = env.mdp.n_states();
    match config.algorithm {
        AlgorithmSpec::Vi => {
            let v0 = Array1::zeros(n);
            let run = value_iteration(
                &env.mdp,
                config.mode,
                Some(&env.eval_policy),
                &v0,
                config.planner_iters,
                config.tol,
            )?;
            Ok(relabel(run.trajectory, &label, seed))
        }
        AlgorithmSpec::Pi => {
            let pi0 = Policy::Deterministic(vec![0; n]);
            let run = policy_iteration(&env.mdp, &pi0, config.planner_iters)?;
            Ok(relabel(run.trajectory, &label, seed))
        }
        AlgorithmSpec::Mpi { m } => {
            let pi0 = Policy::Deterministic(vec![0; n]);
            let run = modified_policy_iteration(&env.mdp, &pi0, m, config.planner_iters)?;
            Ok(relabel(run.trajectory, &label, seed))
        }
        AlgorithmSpec::Osvi => {
            let pair = build_pair(&env.mdp, &config.model)?;
            let v0 = Array1::zeros(n);
            let run = osvi(
                &pair,
                config.mode,
                Some(&env.eval_policy),
                &v0,
                config.planner_iters,
                config.inner(),
            )?;
            let mut trajectory = relabel(run.trajectory, &label, seed);
            if let Ok(baseline) = model_only_baseline(&env, &pair, config.mode) {
                trajectory.push(0, "model_only_normalized_error", baseline);
            }
            Ok(trajectory)
        }
        AlgorithmSpec::OsDyna
        | AlgorithmSpec::Dyna
        | AlgorithmSpec::QLearning
        | AlgorithmSpec::Td => run_learner(config, seed, &env),
    }
}

fn relabel(mut trajectory: RunTrajectory, label: &str, seed: u64) -> RunTrajectory {
    trajectory.run_id = label.to_string();
    trajectory.seed = seed;
    trajectory
}

enum Learner {
    OsDyna(OsDyna),
    Dyna(Dyna),
    Q(QLearning),
    Td(TdLearning),
}

fn run_learner(config: &ExperimentConfig, seed: u64, env: &BuiltEnv) -> Result<RunTrajectory> {
    let mdp = &env.mdp;
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let gamma = mdp.discount();
    let schedule = config.schedule();
    let updater = learner_updater(mdp, &config.model)?;

    let mut learner = match config.algorithm {
        AlgorithmSpec::OsDyna => Learner::OsDyna(OsDyna::new(
            n,
            na,
            gamma,
            config.mode,
            Some(&env.eval_policy),
            updater,
            config.inner(),
            schedule,
        )?),
        AlgorithmSpec::Dyna => Learner::Dyna(Dyna::new(
            mdp.reward().clone(),
            gamma,
            config.mode,
            Some(&env.eval_policy),
            updater,
        )?),
        AlgorithmSpec::QLearning => Learner::Q(QLearning::new(n, na, gamma, schedule)?),
        AlgorithmSpec::Td => Learner::Td(TdLearning::new(&env.eval_policy, na, gamma, schedule)?),
        _ => unreachable!("planner dispatched earlier"),
    };

    let reference = match config.mode {
        Mode::Pe => solve_pe_direct(mdp, &env.eval_policy)?,
        Mode::Control => solve_control_exact(mdp)?.0,
    };

    let mut trajectory = RunTrajectory::new(config.algorithm.label(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectory_state = env.start;
    for t in 1..=config.steps {
        let x = match config.sampling {
            SamplingMode::Uniform => rng.random_range(0..n),
            SamplingMode::Trajectory => trajectory_state,
        };
        let a = match (&learner, &env.eval_policy) {
            (Learner::Td(_), Policy::Deterministic(actions)) => actions[x],
            (Learner::Td(_), Policy::Stochastic(_)) => {
                return Err(Error::invalid("TD needs a deterministic policy"))
            }
            _ => rng.random_range(0..na),
        };
        let (r, next) = sample_transition(mdp, x, a, &mut rng)?;
        trajectory_state = next;
        let sample = Sample {
            state: x,
            action: a,
            reward: r,
            next_state: next,
        };
        match &mut learner {
            Learner::OsDyna(l) => l.step(&sample)?,
            Learner::Dyna(l) => l.step(&sample)?,
            Learner::Q(l) => l.step(&sample)?,
            Learner::Td(l) => l.step(&sample)?,
        }
        if t % config.record_every == 0 || t == config.steps {
            record_learner_metrics(&mut trajectory, t, &learner, config.mode, env, &reference)?;
        }
    }
    Ok(trajectory)
}

fn record_learner_metrics(
    trajectory: &mut RunTrajectory,
    t: u64,
    learner: &Learner,
    mode: Mode,
    env: &BuiltEnv,
    reference: &Array1<f64>,
) -> Result<()> {
    match mode {
        Mode::Control => {
            let policy = match learner {
                Learner::OsDyna(l) => l.state.policy.clone(),
                Learner::Dyna(l) => l.state.policy.clone(),
                Learner::Q(l) => l.greedy_policy(),
                Learner::Td(_) => unreachable!("TD is evaluation-only"),
            };
            let v_pi = solve_pe_direct(&env.mdp, &policy)?;
            trajectory.push(t, "return_start", v_pi[env.start]);
            trajectory.push(
                t,
                "policy_sup_error",
                linalg::inf_norm_vec(&(&v_pi - reference)),
            );
            if let Ok(err) = normalized_error(&v_pi, reference) {
                trajectory.push(t, "policy_normalized_error", err);
            }
        }
        Mode::Pe => {
            let v = match learner {
                Learner::OsDyna(l) => l.state.state_values().clone(),
                Learner::Dyna(l) => l.state.state_values().clone(),
                Learner::Td(l) => l.state.state_values().clone(),
                Learner::Q(_) => unreachable!("Q-learning is control-only"),
            };
            trajectory.push(t, "sup_error", linalg::inf_norm_vec(&(&v - reference)));
            if let Ok(err) = normalized_error(&v, reference) {
                trajectory.push(t, "normalized_error", err);
            }
        }
    }
    Ok(())
}

/// One lambda's slice of a sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LambdaResult {
    pub lambda: f64,
    /// Normalized error at each recorded iteration.
    pub errors: Vec<(usize, f64)>,
    /// Magnitude divergence (error beyond the cap) or iteration-order
    /// inversion among the recorded errors.
    pub diverged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepOutput {
    pub per_lambda: Vec<LambdaResult>,
}

/// Runs OS-VI once per smoothing level and records the normalized error at
/// the listed iterations. The divergence flag trips on magnitude blow-up or
/// when a later recorded iteration has a larger error than an earlier one.
pub fn lambda_sweep(
    config: &ExperimentConfig,
    lambdas: &[f64],
    record_iters: &[usize],
) -> Result<SweepOutput> {
    if lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::invalid("sweep lambdas must lie in [0,1]"));
    }
    let env = build_env(&config.environment, config.seeds[0])?;
    let max_iter = record_iters.iter().copied().max().unwrap_or(0);
    let per_lambda = lambdas
        .par_iter()
        .map(|&lambda| -> Result<LambdaResult> {
            let model = match config.model {
                ModelSpec::SelfLoop { .. } => ModelSpec::SelfLoop { lambda },
                _ => ModelSpec::Smooth { lambda },
            };
            let pair = build_pair(&env.mdp, &model)?;
            let run = osvi(
                &pair,
                config.mode,
                Some(&env.eval_policy),
                &Array1::zeros(env.mdp.n_states()),
                max_iter,
                config.inner(),
            )?;
            let series = run.trajectory.series("normalized_error");
            let errors: Vec<(usize, f64)> = record_iters
                .iter()
                .filter_map(|&k| {
                    series
                        .iter()
                        .find(|&&(step, _)| step == k as u64)
                        .map(|&(_, e)| (k, e))
                })
                .collect();
            let order_inverted = errors.windows(2).any(|w| w[1].1 > w[0].1);
            Ok(LambdaResult {
                lambda,
                errors,
                diverged: run.diverged || order_inverted,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    if let Some(dir) = &config.out {
        std::fs::create_dir_all(dir)?;
        let mut runs = Vec::new();
        for lr in &per_lambda {
            let mut run = RunTrajectory::new(format!("lambda={}", lr.lambda), config.seeds[0]);
            run.diverged = lr.diverged;
            for &(k, e) in &lr.errors {
                run.push(k as u64, "normalized_error", e);
            }
            runs.push(run);
        }
        let file = std::fs::File::create(dir.join("sweep.csv"))?;
        write_csv(std::io::BufWriter::new(file), &runs)?;
        let summary = std::fs::File::create(dir.join("sweep.json"))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(summary), &per_lambda)
            .map_err(|e| Error::Parse(e.to_string()))?;
    }

    Ok(SweepOutput { per_lambda })
}

/// Report plus bound verdicts for a finished OS-VI run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisVerdict {
    pub report: EffectiveDiscountReport,
    pub bound_sup: BoundCheck,
    pub bound_l4: Option<BoundCheck>,
}

/// Effective-discount report for a pair and policy.
pub fn analyze_pair(
    pair: &ModelPair,
    policy: &Policy,
    rho: Option<&Array1<f64>>,
    mode: Mode,
) -> Result<EffectiveDiscountReport> {
    effective_discount(pair, policy, rho, mode)
}

/// Analyzes a finished exact-inner OS-VI run: computes the effective
/// discount over the realized policy set (Control takes the max over the
/// run's improved policies plus the optimal policy) and checks the
/// propagation bounds with zero error terms.
pub fn analyze_run(
    pair: &ModelPair,
    run: &OsviRun,
    mode: Mode,
    eval_policy: &Policy,
    rho: &Array1<f64>,
) -> Result<AnalysisVerdict> {
    let report = match mode {
        Mode::Pe => effective_discount(pair, eval_policy, Some(rho), mode)?,
        Mode::Control => {
            let (_, pi_star) = solve_control_exact(pair.true_mdp())?;
            let mut policies: Vec<&Policy> = vec![&pi_star];
            policies.extend(run.policies.iter());
            let mut worst: Option<EffectiveDiscountReport> = None;
            for policy in policies {
                let rep = effective_discount(pair, policy, Some(rho), mode)?;
                worst = Some(match worst {
                    None => rep,
                    Some(prev) => {
                        if rep.gamma_prime_sup > prev.gamma_prime_sup {
                            rep
                        } else {
                            prev
                        }
                    }
                });
            }
            worst.expect("at least the optimal policy was analyzed")
        }
    };
    let bound_sup = check_theorem_bounds(run, mode, report.gamma_prime_sup, 0.0, 0.0, &BoundNorm::Sup);
    let bound_l4 = report.gamma_prime_l4.map(|gp| {
        check_theorem_bounds(run, mode, gp, 0.0, 0.0, &BoundNorm::L4(rho.clone()))
    });
    Ok(AnalysisVerdict {
        report,
        bound_sup,
        bound_l4,
    })
}
