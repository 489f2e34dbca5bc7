//! Training schedule, evaluation and seed sweeps.
//!
//! A run has two phases. The first trains in the scaled environment (denser
//! material, weaker gravity, coarse substep); the second continues the same
//! networks in the accurate environment with a fresh replay buffer.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, Environment, MsrEnv, ResetMode};
use crate::error::{Error, Result};
use crate::io::{ExperimentConfig, Trajectory, TrajectorySample};
use crate::td3::{AgentNets, Hyperparams, Mlp, ReplayBuffer, Td3Agent, Transition};
use crate::SimRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub scaled_steps: u64,
    pub refine_steps: u64,
    /// Density multiplier of the scaled phase; gravity is divided by it.
    pub density_scale: f64,
    pub scaled_substep: f64,
    pub refine_substep: f64,
    /// Environment steps between evaluations.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub ema_factor: f64,
    pub seeds: Vec<u64>,
    /// A seed is stable when its final EMA return reaches this fraction of
    /// the best seed's.
    pub stability_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scaled_steps: 100_000,
            refine_steps: 1000,
            density_scale: 10.5,
            scaled_substep: 1e-4,
            refine_substep: 8e-6,
            eval_interval: 1000,
            eval_episodes: 1,
            ema_factor: 0.9,
            seeds: (0..8).collect(),
            stability_fraction: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.density_scale >= 1.0) {
            return Err(Error::Config(format!("density scale must be >= 1, got {}", self.density_scale)));
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return Err(Error::Config("eval interval and episode count must be positive".into()));
        }
        if !(self.ema_factor > 0.0 && self.ema_factor <= 1.0) {
            return Err(Error::Config(format!("EMA factor must lie in (0, 1], got {}", self.ema_factor)));
        }
        if !(self.scaled_substep > 0.0 && self.refine_substep > 0.0) {
            return Err(Error::Config("substeps must be positive".into()));
        }
        Ok(())
    }
}

/// `y_0 = x_0`, `y_t = factor * y_{t-1} + (1 - factor) * x_t`.
pub fn ema_smooth(series: &[f64], factor: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    for (i, &x) in series.iter().enumerate() {
        let y = if i == 0 { x } else { factor * out[i - 1] + (1.0 - factor) * x };
        out.push(y);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub ret: f64,
    pub ema: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    /// Appends an evaluation, extending the EMA.
    pub fn record(&mut self, step: u64, ret: f64, factor: f64) -> Result<()> {
        let ema = match self.points.last() {
            Some(p) if p.step >= step => {
                return Err(Error::Config(format!("curve step {step} does not follow {}", p.step)));
            }
            Some(p) => factor * p.ema + (1.0 - factor) * ret,
            None => ret,
        };
        self.points.push(CurvePoint { step, ret, ema });
        Ok(())
    }

    pub fn final_ema(&self) -> Option<f64> {
        self.points.last().map(|p| p.ema)
    }

    pub fn best_ema(&self) -> Option<f64> {
        self.points.iter().map(|p| p.ema).reduce(f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    /// Net forward displacement of the tracked point per episode.
    pub displacements: Vec<f64>,
}

impl EvalReport {
    pub fn mean_return(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len() as f64
    }

    pub fn mean_displacement(&self) -> f64 {
        self.displacements.iter().sum::<f64>() / self.displacements.len() as f64
    }
}

/// Environment-scale action of a deterministic actor.
fn policy_action(actor: &Mlp, obs: &[f64], limit: f64) -> Result<Vec<f64>> {
    let mut a = actor.forward_one(obs)?;
    a.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0) * limit);
    Ok(a)
}

fn check_actor_fits<E: Environment>(actor: &Mlp, env: &E) -> Result<()> {
    if actor.input_dim() != env.observation_dim() || actor.output_dim() != env.action_dim() {
        return Err(Error::Shape(format!(
            "policy maps {} -> {} but the environment needs {} -> {}",
            actor.input_dim(),
            actor.output_dim(),
            env.observation_dim(),
            env.action_dim()
        )));
    }
    Ok(())
}

/// Deterministic rollouts from the zero-field start, each to truncation.
pub fn evaluate<E: Environment>(actor: &Mlp, env: &mut E, episodes: usize) -> Result<EvalReport> {
    check_actor_fits(actor, env)?;
    // rollout resets draw nothing, the generator only satisfies the signature
    let mut rng = SimRng::seed_from_u64(0);
    let mut returns = Vec::with_capacity(episodes);
    let mut displacements = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(ResetMode::Rollout, &mut rng)?;
        let start = env.progress_coordinate();
        let mut total = 0.0;
        loop {
            let out = env.step(&policy_action(actor, &obs, env.action_limit())?)?;
            total += out.reward;
            obs = out.observation;
            if out.truncated {
                break;
            }
        }
        returns.push(total);
        displacements.push(env.progress_coordinate() - start);
    }
    Ok(EvalReport { returns, displacements })
}

/// Returns of uniformly random increments, from the zero-field start.
pub fn random_policy_returns<E: Environment>(env: &mut E, episodes: usize, rng: &mut SimRng) -> Result<Vec<f64>> {
    let limit = env.action_limit();
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        env.reset(ResetMode::Rollout, rng)?;
        let mut total = 0.0;
        loop {
            let a: Vec<f64> = (0..env.action_dim()).map(|_| rng.random_range(-limit..=limit)).collect();
            let step = env.step(&a)?;
            total += step.reward;
            if step.truncated {
                break;
            }
        }
        out.push(total);
    }
    Ok(out)
}

/// Steps and schedule of one training phase.
#[derive(Clone, Copy, Debug)]
pub struct PhasePlan {
    pub steps: u64,
    /// Uniform-random steps at the start of the phase.
    pub warmup: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub ema_factor: f64,
    /// Global step count before this phase.
    pub offset: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhaseStats {
    /// Transitions in the replay buffer at the end of the phase.
    pub stored: usize,
    pub updates: u64,
}

/// Runs one phase against a fresh replay buffer. Evaluations happen on a
/// clone of `env` every `eval_interval` global steps and at the last step.
pub fn run_phase<E: Environment + Clone>(
    agent: &mut Td3Agent,
    env: &mut E,
    plan: &PhasePlan,
    rng: &mut SimRng,
    curve: &mut LearningCurve,
) -> Result<PhaseStats> {
    check_actor_fits(&agent.nets.actor, env)?;
    let start_iterations = agent.iterations();
    let eval_template = env.clone();
    let limit = env.action_limit();
    let act_dim = env.action_dim();
    let mut buffer = ReplayBuffer::new(agent.hp.buffer_capacity, env.observation_dim(), act_dim)?;
    let mut obs = env.reset(ResetMode::Train, rng)?;
    for t in 0..plan.steps {
        let global = plan.offset + t + 1;
        let action = if t < plan.warmup {
            (0..act_dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
        } else {
            agent.select_action(&obs, agent.hp.exploration_noise, rng)?
        };
        let scaled: Vec<f64> = action.iter().map(|a| a * limit).collect();
        let out = env.step(&scaled).map_err(|e| at_step(e, global))?;
        if !out.truncated {
            buffer.push(Transition {
                observation: obs.0,
                action,
                reward: out.reward,
                next_observation: out.observation.0.clone(),
            })?;
            obs = out.observation;
        } else {
            obs = env.reset(ResetMode::Train, rng)?;
        }
        if t >= plan.warmup && buffer.len() >= agent.hp.batch_size {
            let batch = buffer.sample(agent.hp.batch_size, rng)?;
            agent.train_iteration(&batch, rng).map_err(|e| at_step(e, global))?;
        }
        if global.is_multiple_of(plan.eval_interval) || t + 1 == plan.steps {
            let mut eval_env = eval_template.clone();
            let report =
                evaluate(&agent.nets.actor, &mut eval_env, plan.eval_episodes).map_err(|e| at_step(e, global))?;
            curve.record(global, report.mean_return(), plan.ema_factor)?;
        }
    }
    Ok(PhaseStats { stored: buffer.len(), updates: agent.iterations() - start_iterations })
}

fn at_step(e: Error, step: u64) -> Error {
    match e {
        Error::Instability { step: inner, reason } => {
            Error::Instability { step, reason: format!("{reason} (rod substep {inner})") }
        }
        Error::Divergence(d) => Error::Divergence(format!("{d} at training step {step}")),
        other => other,
    }
}

/// Environment settings of one phase.
pub fn phase_env_config(env: &EnvConfig, train: &TrainConfig, scaled: bool) -> EnvConfig {
    let mut cfg = env.clone();
    if scaled {
        cfg.density_scale = train.density_scale;
        cfg.substep = train.scaled_substep;
    } else {
        cfg.density_scale = 1.0;
        cfg.substep = train.refine_substep;
    }
    cfg
}

pub fn scaled_env(exp: &ExperimentConfig) -> Result<MsrEnv> {
    MsrEnv::new(phase_env_config(&exp.env, &exp.train, true), exp.robot.clone())
}

pub fn accurate_env(exp: &ExperimentConfig) -> Result<MsrEnv> {
    MsrEnv::new(phase_env_config(&exp.env, &exp.train, false), exp.robot.clone())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub initial: AgentNets,
    /// Networks at the end of the scaled phase.
    pub phase1: AgentNets,
    pub agent: Td3Agent,
    pub curve: LearningCurve,
}

/// Generic schedule over two environments. The second phase keeps the
/// networks and optimizer state but starts a fresh buffer without warmup.
pub fn train_in<E: Environment + Clone, F: Environment + Clone>(
    first: &mut E,
    second: Option<&mut F>,
    hp: &Hyperparams,
    train: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    hp.validate()?;
    train.validate()?;
    let mut rng = SimRng::seed_from_u64(seed);
    let mut agent = Td3Agent::new(first.observation_dim(), first.action_dim(), hp.clone(), &mut rng)?;
    let initial = agent.nets.clone();
    let mut curve = LearningCurve::default();
    let plan = PhasePlan {
        steps: train.scaled_steps,
        warmup: hp.warmup_steps,
        eval_interval: train.eval_interval,
        eval_episodes: train.eval_episodes,
        ema_factor: train.ema_factor,
        offset: 0,
    };
    run_phase(&mut agent, first, &plan, &mut rng, &mut curve)?;
    let phase1 = agent.nets.clone();
    if let Some(env) = second {
        if train.refine_steps > 0 {
            let plan = PhasePlan { steps: train.refine_steps, warmup: 0, offset: train.scaled_steps, ..plan };
            run_phase(&mut agent, env, &plan, &mut rng, &mut curve)?;
        }
    }
    Ok(TrainOutcome { initial, phase1, agent, curve })
}

/// Full two-phase run on the robot.
pub fn train(exp: &ExperimentConfig, seed: u64) -> Result<TrainOutcome> {
    exp.validate()?;
    let mut scaled = scaled_env(exp)?;
    if exp.train.refine_steps > 0 {
        let mut accurate = accurate_env(exp)?;
        train_in(&mut scaled, Some(&mut accurate), &exp.agent, &exp.train, seed)
    } else {
        train_in::<_, MsrEnv>(&mut scaled, None, &exp.agent, &exp.train, seed)
    }
}

#[derive(Clone, Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub outcome: std::result::Result<LearningCurve, String>,
    pub stable: bool,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub seeds: Vec<SeedResult>,
    /// Pointwise mean of the EMA curves of seeds that finished.
    pub average: Vec<CurvePoint>,
}

impl SweepReport {
    pub fn stable_count(&self) -> usize {
        self.seeds.iter().filter(|s| s.stable).count()
    }
}

/// Runs every seed (in parallel) and classifies stability. Failed seeds are
/// reported, not fatal.
pub fn seed_sweep<F>(seeds: &[u64], stability_fraction: f64, run: F) -> Result<SweepReport>
where
    F: Fn(u64) -> Result<LearningCurve> + Sync,
{
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() || seeds.is_empty() {
        return Err(Error::Config("sweep seeds must be distinct and non-empty".into()));
    }
    let curves: Vec<_> = seeds.par_iter().map(|&s| (s, run(s).map_err(|e| e.to_string()))).collect();
    let best = curves.iter().filter_map(|(_, c)| c.as_ref().ok().and_then(LearningCurve::final_ema)).reduce(f64::max);
    let results: Vec<SeedResult> = curves
        .into_iter()
        .map(|(seed, outcome)| {
            let stable = match (&outcome, best) {
                (Ok(c), Some(best)) => c.final_ema().is_some_and(|f| f > 0.0 && f >= stability_fraction * best),
                _ => false,
            };
            SeedResult { seed, outcome, stable }
        })
        .collect();
    let finished: Vec<&LearningCurve> = results.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let mut average = Vec::new();
    if let Some(first) = finished.first() {
        let len = finished.iter().map(|c| c.points.len()).min().unwrap_or(0);
        for i in 0..len {
            let ret = finished.iter().map(|c| c.points[i].ret).sum::<f64>() / finished.len() as f64;
            let ema = finished.iter().map(|c| c.points[i].ema).sum::<f64>() / finished.len() as f64;
            average.push(CurvePoint { step: first.points[i].step, ret, ema });
        }
    }
    Ok(SweepReport { seeds: results, average })
}

/// Deterministic zero-field rollout of `steps` control periods, sampled
/// at every period boundary including the start.
pub fn rollout(actor: &Mlp, env: &mut MsrEnv, steps: u64) -> Result<Trajectory> {
    check_actor_fits(actor, env)?;
    let mut rng = SimRng::seed_from_u64(0);
    let mut obs = env.reset(ResetMode::Rollout, &mut rng)?;
    let mut samples = vec![TrajectorySample::capture(env)];
    for _ in 0..steps {
        let out = env.step(&policy_action(actor, &obs, env.action_limit())?)?;
        obs = out.observation;
        samples.push(TrajectorySample::capture(env));
    }
    Ok(Trajectory {
        period: env.config().control_period(),
        max_field_mt: env.config().max_field_mt,
        middle_node: env.middle_node(),
        config_hash: String::new(),
        samples,
    })
}
