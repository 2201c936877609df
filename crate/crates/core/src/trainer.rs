//! The joint training loop: interact, store, sample, refit the Koopman maps,
//! then one gradient step each on the lifting, the critic and the actor.

use std::fmt;
use std::io::{BufRead, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::actor::{Actor, LinearPolicy, Policy};
use crate::config::TrainConfig;
use crate::critic::Critic;
use crate::envs::{clip, lqr_oracle, Environment, LqrSolution};
use crate::error::{Error, Result};
use crate::koopman::KoopmanModel;
use crate::neural::{MlpSpec, OutputActivation};
use crate::numerics::norm;
use crate::replay::{ReplayBuffer, Transition};

/// Independent random streams derived from the single config seed.
pub mod streams {
    pub const LIFT_INIT: u64 = 1;
    pub const CRITIC_INIT: u64 = 2;
    pub const ACTOR_INIT: u64 = 3;
    pub const REPLAY: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const RESETS: u64 = 6;
}

/// ChaCha8 generator for stream `id` of `seed`.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Trained (or freshly initialised) components.
#[derive(Clone, Debug)]
pub struct Agent {
    pub config: TrainConfig,
    pub model: KoopmanModel,
    pub critic: Critic,
    pub actor: Actor,
}

impl Agent {
    /// Initial networks for `config`, with zeroed Koopman maps.
    pub fn init(config: &TrainConfig, env: &dyn Environment) -> Result<Self> {
        let spec = env.spec();
        let (n, m) = (spec.state_dim, spec.action_dim);
        let seed = config.seed;
        let lift_spec = MlpSpec::with_hidden(n, &config.lift_hidden, config.lift_net_dim(n), OutputActivation::Identity)?;
        let theta = lift_spec.init_params(stream(seed, streams::LIFT_INIT).next_u64());
        let model = KoopmanModel::new(lift_spec, theta, config.lift_augment, m)?;
        let critic = Critic::init(n, &config.critic_hidden, config.gamma, stream(seed, streams::CRITIC_INIT).next_u64())?;
        let actor = Actor::init(
            n,
            &config.actor_hidden,
            spec.action_low.clone(),
            spec.action_high.clone(),
            stream(seed, streams::ACTOR_INIT).next_u64(),
        )?;
        Ok(Agent {
            config: config.clone(),
            model,
            critic,
            actor,
        })
    }
}

/// Losses and pre-clipping gradient norms of one update iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub l1: f64,
    pub l3: f64,
    pub l2: f64,
    pub gnorm_f: f64,
    pub gnorm_j: f64,
    pub gnorm_mu: f64,
}

/// One row of the training log, written after every environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub episode: usize,
    pub step: usize,
    /// Update iterations completed so far.
    pub iter: usize,
    pub cost: f64,
    pub update: Option<UpdateStats>,
    pub min_gnorm_f_sq: Option<f64>,
    pub min_gnorm_mu_sq: Option<f64>,
    pub samples_consumed: u64,
}

impl StepRecord {
    /// The record as one CSV line (no newline), columns as in [`CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        let u = self.update;
        format!(
            "{},{},{},{:?},{:?},{},{},{},{},{},{},{},{},{}",
            self.episode,
            self.step,
            self.iter,
            self.cost,
            -self.cost,
            opt(u.map(|u| u.l1)),
            opt(u.map(|u| u.l3)),
            opt(u.map(|u| u.l2)),
            opt(u.map(|u| u.gnorm_f)),
            opt(u.map(|u| u.gnorm_j)),
            opt(u.map(|u| u.gnorm_mu)),
            opt(self.min_gnorm_f_sq),
            opt(self.min_gnorm_mu_sq),
            self.samples_consumed
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

pub const CSV_HEADER: &str = "episode,step,iter,cost,neg_cost,L1,L3,L2,gnorm_f,gnorm_J,gnorm_mu,min_gnorm_f_sq,min_gnorm_mu_sq,samples_consumed";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl TrainLog {
    /// Update-iteration rows only.
    pub fn updates(&self) -> impl Iterator<Item = (&StepRecord, &UpdateStats)> {
        self.records.iter().filter_map(|r| r.update.as_ref().map(|u| (r, u)))
    }

    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iter)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<TrainLog> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != CSV_HEADER {
            return Err(Error::Parse {
                row: 1,
                msg: format!("unexpected header {header:?}"),
            });
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 14 {
                return Err(Error::Parse {
                    row,
                    msg: format!("{} columns, expected 14", f.len()),
                });
            }
            let bad = |col: usize| Error::Parse {
                row,
                msg: format!("bad value {:?} in column {}", f[col], col + 1),
            };
            let int = |col: usize| f[col].parse::<u64>().map_err(|_| bad(col));
            let num = |col: usize| f[col].parse::<f64>().map_err(|_| bad(col));
            let maybe = |col: usize| -> Result<Option<f64>> {
                if f[col].is_empty() {
                    Ok(None)
                } else {
                    num(col).map(Some)
                }
            };
            let update = match (maybe(5)?, maybe(6)?, maybe(7)?, maybe(8)?, maybe(9)?, maybe(10)?) {
                (Some(l1), Some(l3), Some(l2), Some(gnorm_f), Some(gnorm_j), Some(gnorm_mu)) => Some(UpdateStats {
                    l1,
                    l3,
                    l2,
                    gnorm_f,
                    gnorm_j,
                    gnorm_mu,
                }),
                (None, None, None, None, None, None) => None,
                _ => {
                    return Err(Error::Parse {
                        row,
                        msg: "partially filled update columns".into(),
                    })
                }
            };
            records.push(StepRecord {
                episode: int(0)? as usize,
                step: int(1)? as usize,
                iter: int(2)? as usize,
                cost: num(3)?,
                update,
                min_gnorm_f_sq: maybe(11)?,
                min_gnorm_mu_sq: maybe(12)?,
                samples_consumed: int(13)?,
            });
        }
        Ok(TrainLog { records })
    }
}

pub struct TrainOutcome {
    pub agent: Agent,
    pub log: TrainLog,
    pub buffer: ReplayBuffer,
}

/// `μ(x) + N(0, σ²)` per component, clipped to the action box.
pub fn explore(actor: &Actor, x: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut u = actor.act(x)?;
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for v in u.iter_mut() {
            *v += normal.sample(rng);
        }
    } else if sigma < 0.0 || sigma.is_nan() {
        return Err(Error::invalid(format!("noise scale {sigma} must be >= 0")));
    }
    Ok(clip(&u, &actor.action_low, &actor.action_high))
}

/// Rescales `g` in place so its norm is at most `limit`; returns the original norm.
fn clip_norm(g: &mut [f64], limit: f64) -> f64 {
    let n = norm(g);
    if n > limit {
        let s = limit / n;
        g.iter_mut().for_each(|v| *v *= s);
    }
    n
}

fn finite_or(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericalDivergence(what.into()))
    }
}

/// Runs training with the environment named in `config`.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let env = config.make_env()?;
    train_in(config, env.as_ref(), |_| {})
}

/// Runs training on a given environment, calling `on_step` after every
/// environment step.
pub fn train_in(config: &TrainConfig, env: &dyn Environment, mut on_step: impl FnMut(&StepRecord)) -> Result<TrainOutcome> {
    let mut agent = Agent::init(config, env)?;
    let horizon = config.horizon_for(env);
    let n_batch = config.batch;
    let mut buffer = ReplayBuffer::with_rng(config.buffer_capacity, stream(config.seed, streams::REPLAY));
    let mut noise_rng = stream(config.seed, streams::NOISE);
    let mut reset_rng = stream(config.seed, streams::RESETS);

    let mut log = TrainLog::default();
    let mut iter = 0usize;
    let mut min_f: Option<f64> = None;
    let mut min_mu: Option<f64> = None;

    for episode in 0..config.episodes {
        let sigma = config.noise_sigma0 * config.noise_decay.powi(episode as i32);
        let mut x = env.reset(reset_rng.next_u64());
        for step in 0..horizon {
            let u = explore(&agent.actor, &x, sigma, &mut noise_rng)?;
            let (x_next, cost) = env.step(&x, &u)?;
            buffer.push(Transition {
                x: x.clone(),
                u,
                cost,
                x_next: x_next.clone(),
            })?;

            let update = if buffer.len() >= n_batch {
                let stats = update_step(&mut agent, &mut buffer, env, config, iter)?;
                iter += 1;
                let f2 = stats.gnorm_f * stats.gnorm_f;
                let mu2 = stats.gnorm_mu * stats.gnorm_mu;
                min_f = Some(min_f.map_or(f2, |m| m.min(f2)));
                min_mu = Some(min_mu.map_or(mu2, |m| m.min(mu2)));
                Some(stats)
            } else {
                None
            };

            let record = StepRecord {
                episode,
                step,
                iter,
                cost,
                update,
                min_gnorm_f_sq: min_f,
                min_gnorm_mu_sq: min_mu,
                samples_consumed: 3 * iter as u64 * n_batch as u64,
            };
            on_step(&record);
            log.records.push(record);
            x = x_next;
        }
    }
    Ok(TrainOutcome { agent, log, buffer })
}

/// One update iteration `i`.
fn update_step(
    agent: &mut Agent,
    buffer: &mut ReplayBuffer,
    env: &dyn Environment,
    config: &TrainConfig,
    i: usize,
) -> Result<UpdateStats> {
    let steps = config.step_sizes(i);
    let batch = buffer.sample_batch(config.batch)?;

    // K is fitted under θ^f_i and held fixed for the rest of the iteration.
    agent.model.refit(&batch, config.rank_tol)?;
    let k = agent.model.frozen_k();

    let (l1, mut g_f) = agent.model.loss_and_grad_l1(&k, &batch)?;
    let (l3, mut g_j) = agent.critic.td_loss_and_grad(&batch)?;
    let l1 = finite_or("L1", l1)?;
    let l3 = finite_or("L3", l3)?;
    let gnorm_f = finite_or("L1", clip_norm(&mut g_f, config.grad_clip))?;
    let gnorm_j = finite_or("L3", clip_norm(&mut g_j, config.grad_clip))?;
    agent.model.step_lift(&g_f, steps.lift)?;
    agent.critic.step(&g_j, steps.critic)?;

    // Policy gradient at (θ^f_{i+1}, θ^J_{i+1}, θ^μ_i).
    let (l2, mut g_mu) = agent
        .actor
        .loss_and_grad_l2(&agent.critic, &agent.model, &batch, env)?;
    let l2 = finite_or("L2", l2)?;
    let gnorm_mu = finite_or("L2", clip_norm(&mut g_mu, config.grad_clip))?;
    agent.actor.update_policy(&g_mu, steps.actor)?;

    for (what, p) in [
        ("L1", agent.model.theta.as_slice()),
        ("L3", agent.critic.theta.as_slice()),
        ("L2", agent.actor.theta.as_slice()),
    ] {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalDivergence(what.into()));
        }
    }
    Ok(UpdateStats {
        l1,
        l3,
        l2,
        gnorm_f,
        gnorm_j,
        gnorm_mu,
    })
}

/// Noise-free evaluation summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub episodes: usize,
    pub horizon: usize,
    /// Mean stage cost over all steps of all episodes.
    pub mean_step_cost: f64,
    /// Mean over episodes of `Σ_t γ^t c_t`.
    pub mean_discounted_cost: f64,
    /// Mean step cost of each episode.
    pub episode_step_costs: Vec<f64>,
    /// Accumulative average of `episode_step_costs`.
    pub running_average: Vec<f64>,
    pub initial_states: Vec<Vec<f64>>,
}

/// Rolls out `policy` without exploration noise. Initial states are drawn
/// from `seed`, so two policies evaluated with the same seed start from the
/// same states.
pub fn evaluate(
    policy: &dyn Policy,
    env: &dyn Environment,
    episodes: usize,
    horizon: usize,
    gamma: f64,
    seed: u64,
) -> Result<EvalReport> {
    if episodes == 0 || horizon == 0 {
        return Err(Error::invalid("evaluation needs at least one episode and one step"));
    }
    let mut rng = stream(seed, streams::RESETS);
    let mut episode_step_costs = Vec::with_capacity(episodes);
    let mut running_average = Vec::with_capacity(episodes);
    let mut initial_states = Vec::with_capacity(episodes);
    let mut discounted_total = 0.0;
    for _ in 0..episodes {
        let mut x = env.reset(rng.next_u64());
        initial_states.push(x.clone());
        let (mut total, mut disc, mut weight) = (0.0, 0.0, 1.0);
        for _ in 0..horizon {
            let u = policy.act(&x)?;
            let (next, c) = env.step(&x, &u)?;
            total += c;
            disc += weight * c;
            weight *= gamma;
            x = next;
        }
        discounted_total += disc;
        episode_step_costs.push(total / horizon as f64);
        let k = episode_step_costs.len() as f64;
        running_average.push(episode_step_costs.iter().sum::<f64>() / k);
    }
    Ok(EvalReport {
        episodes,
        horizon,
        mean_step_cost: *running_average.last().unwrap(),
        mean_discounted_cost: discounted_total / episodes as f64,
        episode_step_costs,
        running_average,
        initial_states,
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "episodes              {}", self.episodes)?;
        writeln!(f, "horizon               {}", self.horizon)?;
        writeln!(f, "mean step cost        {:.6}", self.mean_step_cost)?;
        writeln!(f, "mean discounted cost  {:.6}", self.mean_discounted_cost)?;
        writeln!(f, "episodes={}", self.episodes)?;
        writeln!(f, "mean_step_cost={:?}", self.mean_step_cost)?;
        write!(f, "mean_discounted_cost={:?}", self.mean_discounted_cost)
    }
}

/// Optimal discounted LQR controller for linear-quadratic tasks, wrapped as
/// a clipped policy. `None` for nonlinear environments.
pub fn lqr_baseline(env: &dyn Environment, gamma: f64) -> Result<Option<(LqrSolution, LinearPolicy)>> {
    let Some((a, b, q, r)) = env.linear_quadratic() else {
        return Ok(None);
    };
    let sol = lqr_oracle(&a, &b, &q, &r, gamma, 100_000)?;
    let spec = env.spec();
    let policy = LinearPolicy {
        gain: sol.gain.clone(),
        action_low: spec.action_low.clone(),
        action_high: spec.action_high.clone(),
    };
    Ok(Some((sol, policy)))
}

/// Growth check of `T · min_{i≤T} ‖∇L‖²` over the second half of training.
#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    /// `T · min_{i≤T} ‖∇L‖²` for `T = 1..=iterations`.
    pub scaled: Vec<f64>,
    pub second_half_max: f64,
    pub second_half_median: f64,
    /// `second_half_max ≤ 2 · second_half_median`
    pub bounded: bool,
}

impl Envelope {
    fn new(min_sq: &[f64]) -> Envelope {
        let scaled: Vec<f64> = min_sq.iter().enumerate().map(|(i, m)| (i + 1) as f64 * m).collect();
        let mut half: Vec<f64> = scaled[scaled.len() / 2..].to_vec();
        half.sort_by(f64::total_cmp);
        let max = *half.last().unwrap();
        let mid = half.len() / 2;
        let median = if half.len() % 2 == 1 {
            half[mid]
        } else {
            0.5 * (half[mid - 1] + half[mid])
        };
        Envelope {
            scaled,
            second_half_max: max,
            second_half_median: median,
            bounded: max.is_finite() && max <= 2.0 * median,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub batch: usize,
    /// `3 T N`
    pub samples: u64,
    pub lift: Envelope,
    pub policy: Envelope,
}

pub const MIN_REPORT_ITERATIONS: usize = 100;

/// Builds the `T · min ‖∇L‖²` sequences for the lifting and policy losses.
pub fn convergence_report(log: &TrainLog) -> Result<ConvergenceReport> {
    let rows: Vec<&StepRecord> = log.updates().map(|(r, _)| r).collect();
    if rows.len() < MIN_REPORT_ITERATIONS {
        return Err(Error::InsufficientHistory {
            have: rows.len(),
            need: MIN_REPORT_ITERATIONS,
        });
    }
    let missing = || Error::invalid("update row without running minima");
    let min_f = rows
        .iter()
        .map(|r| r.min_gnorm_f_sq.ok_or_else(missing))
        .collect::<Result<Vec<_>>>()?;
    let min_mu = rows
        .iter()
        .map(|r| r.min_gnorm_mu_sq.ok_or_else(missing))
        .collect::<Result<Vec<_>>>()?;
    let last = rows.last().unwrap();
    let t = last.iter;
    let batch = if t == 0 { 0 } else { (last.samples_consumed / (3 * t as u64)) as usize };
    Ok(ConvergenceReport {
        iterations: t,
        batch,
        samples: last.samples_consumed,
        lift: Envelope::new(&min_f),
        policy: Envelope::new(&min_mu),
    })
}

impl fmt::Display for ConvergenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = |b: bool| if b { "bounded" } else { "growing" };
        writeln!(f, "update iterations T   {}", self.iterations)?;
        writeln!(f, "batch size N          {}", self.batch)?;
        writeln!(f, "samples 3TN           {}", self.samples)?;
        writeln!(f, "{:<22}{:>14}{:>14}{:>10}", "series", "max(2nd half)", "median", "envelope")?;
        for (name, e) in [("T*min|dL1|^2", &self.lift), ("T*min|dL2|^2", &self.policy)] {
            writeln!(
                f,
                "{:<22}{:>14.6e}{:>14.6e}{:>10}",
                name,
                e.second_half_max,
                e.second_half_median,
                verdict(e.bounded)
            )?;
        }
        writeln!(f, "iterations={}", self.iterations)?;
        writeln!(f, "samples={}", self.samples)?;
        writeln!(f, "lift_bounded={}", self.lift.bounded)?;
        write!(f, "policy_bounded={}", self.policy.bounded)
    }
}
