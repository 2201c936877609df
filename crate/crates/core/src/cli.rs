//! Command-line front end: `train`, `eval`, `gradcheck`, `sysid`, `report`.
//!
//! Exit codes: 0 success, 1 check failure, 2 configuration error,
//! 3 numerical divergence.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::{load_agent, save_agent, MANIFEST};
use crate::config::{parse_config, parse_config_str, TrainConfig};
use crate::diagnostics::{audit_rank, run_gradcheck, RankAudit};
use crate::error::{Error, Result};
use crate::koopman::{max_one_step_error, KoopmanModel};
use crate::neural::{MlpSpec, OutputActivation};
use crate::numerics::norm;
use crate::replay::{batch_from, read_dump, write_dump, Transition};
use crate::trainer::{
    convergence_report, evaluate, lqr_baseline, stream, streams, train_in, TrainLog, CSV_HEADER,
};

pub const TRAIN_LOG: &str = "train_log.csv";
pub const BUFFER_DUMP: &str = "buffer.csv";
pub const ROLLOUT_STEPS: usize = 20;

#[derive(Debug, Parser)]
#[command(name = "koopman-pg", version, about = "Policy gradient through a learned Koopman surrogate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train lifting, critic and actor; writes the log, checkpoints and manifest to --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// key=value override, applied after the file (repeatable)
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Noise-free rollouts of a trained actor.
    Eval {
        #[arg(long)]
        checkpoint_dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        /// Seed for the evaluation initial states
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Where to write the manifest (default: the checkpoint directory)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the three analytic gradients.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Perturb the analytic gradients (negative control)
        #[arg(long, hide = true)]
        corrupt: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the lifting and A, B, C to a transition dump and score a held-out split.
    Sysid {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convergence envelope and sample accounting of a training log.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `std::env::args` and runs; returns the process exit code.
pub fn main_from_args() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    run(cli)
}

pub fn run(cli: Cli) -> i32 {
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Writes `manifest.txt` into `out`, or prints it when no directory is given.
fn write_manifest(out: Option<&Path>, command: &str, body: &str) -> Result<()> {
    let text = format!("# command={command}\n{body}");
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(MANIFEST), text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Train { config, overrides, out } => {
            let cfg = parse_config(&config, &overrides)?;
            cmd_train(&cfg, &out)?;
            Ok(0)
        }
        Command::Eval {
            checkpoint_dir,
            episodes,
            seed,
            out,
        } => {
            let agent = load_agent(&checkpoint_dir)?;
            let env = agent.config.make_env()?;
            let horizon = agent.config.horizon_for(env.as_ref());
            let mut manifest = agent.config.to_kv();
            manifest.push_str(&format!("eval_episodes={episodes}\neval_seed={seed}\n"));
            match &out {
                Some(dir) => write_manifest(Some(dir), "eval", &manifest)?,
                None => {
                    let text = format!("# command=eval\n{manifest}");
                    fs::write(checkpoint_dir.join("eval_manifest.txt"), text)?;
                }
            }
            let report = evaluate(&agent.actor, env.as_ref(), episodes, horizon, agent.config.gamma, seed)?;
            println!("{report}");
            if let Some((_, lqr)) = lqr_baseline(env.as_ref(), agent.config.gamma)? {
                let base = evaluate(&lqr, env.as_ref(), episodes, horizon, agent.config.gamma, seed)?;
                println!("lqr_mean_discounted_cost={:?}", base.mean_discounted_cost);
                println!(
                    "ratio_to_lqr={:?}",
                    report.mean_discounted_cost / base.mean_discounted_cost
                );
            }
            Ok(0)
        }
        Command::Gradcheck {
            config,
            trials,
            corrupt,
            out,
        } => {
            let cfg = match &config {
                Some(p) => parse_config(p, &[])?,
                None => parse_config_str("", &[])?,
            };
            let mut manifest = cfg.to_kv();
            manifest.push_str(&format!("trials={trials}\ncorrupt={corrupt}\n"));
            write_manifest(out.as_deref(), "gradcheck", &manifest)?;
            let report = run_gradcheck(trials.max(1), cfg.seed, corrupt)?;
            println!("{report}");
            Ok(if report.passed() { 0 } else { 1 })
        }
        Command::Sysid {
            data,
            config,
            overrides,
            out,
        } => {
            let cfg = parse_config(&config, &overrides)?;
            let mut manifest = cfg.to_kv();
            manifest.push_str(&format!("data={}\n", data.display()));
            write_manifest(out.as_deref(), "sysid", &manifest)?;
            let ts = read_dump(BufReader::new(File::open(&data)?))?;
            let (model, report) = run_sysid(&cfg, &ts)?;
            println!("{report}");
            if let Some(dir) = &out {
                let mut w = BufWriter::new(File::create(dir.join("sysid.ckpt"))?);
                model.write_checkpoint(&mut w)?;
                w.flush()?;
            }
            Ok(0)
        }
        Command::Report { log, out } => {
            write_manifest(out.as_deref(), "report", &format!("log={}\n", log.display()))?;
            let log = TrainLog::read_csv(BufReader::new(File::open(&log)?))?;
            let report = convergence_report(&log)?;
            println!("{report}");
            Ok(0)
        }
    }
}

/// Runs training for `cfg`, streaming the log to `out/train_log.csv` and
/// writing checkpoints and the manifest next to it.
pub fn cmd_train(cfg: &TrainConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    write_manifest(Some(out), "train", &cfg.to_kv())?;
    let env = cfg.make_env()?;
    let mut w = BufWriter::new(File::create(out.join(TRAIN_LOG))?);
    writeln!(w, "{CSV_HEADER}")?;
    let mut io_err = None;
    let result = train_in(cfg, env.as_ref(), |rec| {
        if io_err.is_none() {
            if let Err(e) = writeln!(w, "{}", rec.csv_row()) {
                io_err = Some(e);
            }
        }
    });
    w.flush()?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let outcome = result?;
    save_agent(out, &outcome.agent)?;
    // the agent checkpoint rewrote the manifest without the command line
    write_manifest(Some(out), "train", &cfg.to_kv())?;
    if cfg.dump_buffer {
        let mut w = BufWriter::new(File::create(out.join(BUFFER_DUMP))?);
        write_dump(&mut w, outcome.buffer.iter())?;
        w.flush()?;
    }
    let iters = outcome.log.iterations();
    let samples = outcome.log.records.last().map_or(0, |r| r.samples_consumed);
    println!("iterations={iters}");
    println!("samples_consumed={samples}");
    if let Some((_, u)) = outcome.log.updates().last() {
        println!("final_L1={:?}\nfinal_L3={:?}\nfinal_L2={:?}", u.l1, u.l3, u.l2);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SysidReport {
    pub train_rows: usize,
    pub holdout_rows: usize,
    pub final_l1: f64,
    /// Largest Euclidean one-step error on the held-out split.
    pub holdout_one_step: f64,
    /// Largest error at each rollout step over held-out windows.
    pub rollout_errors: Vec<f64>,
    pub rollout_windows: usize,
    pub audit: RankAudit,
}

impl fmt::Display for SysidReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "train rows            {}", self.train_rows)?;
        writeln!(f, "held-out rows         {}", self.holdout_rows)?;
        writeln!(f, "final L1              {:.3e}", self.final_l1)?;
        writeln!(f, "one-step error        {:.3e}", self.holdout_one_step)?;
        writeln!(f, "rollout windows       {}", self.rollout_windows)?;
        for (k, e) in self.rollout_errors.iter().enumerate() {
            writeln!(f, "  step {:>2}            {:.3e}", k + 1, e)?;
        }
        writeln!(f, "{}", self.audit)?;
        writeln!(f, "final_l1={:e}", self.final_l1)?;
        writeln!(f, "holdout_one_step_error={:e}", self.holdout_one_step)?;
        let worst = self.rollout_errors.iter().copied().fold(0.0, f64::max);
        write!(f, "rollout_max_error={worst:e}")
    }
}

fn continuous(ts: &[Transition]) -> bool {
    ts.windows(2).all(|w| w[0].x_next == w[1].x)
}

/// Trains only the lifting (with the per-batch `A`, `B`, `C` refit) on the
/// first part of `ts`, then scores one-step and rollout predictions on the
/// contiguous held-out tail.
pub fn run_sysid(cfg: &TrainConfig, ts: &[Transition]) -> Result<(KoopmanModel, SysidReport)> {
    let total = ts.len();
    if total < cfg.batch {
        return Err(Error::BatchTooSmall {
            samples: total,
            required: cfg.batch,
        });
    }
    let holdout = ((total as f64 * cfg.holdout).round() as usize).clamp(1, total - 1);
    let n_train = total - holdout;
    if n_train < cfg.batch {
        return Err(Error::BatchTooSmall {
            samples: n_train,
            required: cfg.batch,
        });
    }
    let (n, m) = (ts[0].x.len(), ts[0].u.len());
    let spec = MlpSpec::with_hidden(n, &cfg.lift_hidden, cfg.lift_net_dim(n), OutputActivation::Identity)?;
    let theta = spec.init_params(rand::RngCore::next_u64(&mut stream(cfg.seed, streams::LIFT_INIT)));
    let mut model = KoopmanModel::new(spec, theta, cfg.lift_augment, m)?;
    let r = model.lifted_dim();
    if cfg.batch < r + m {
        return Err(Error::BatchTooSmall {
            samples: cfg.batch,
            required: r + m,
        });
    }

    let train: Vec<&Transition> = ts[..n_train].iter().collect();
    let test: Vec<&Transition> = ts[n_train..].iter().collect();
    let mut rng = stream(cfg.seed, streams::REPLAY);
    for i in 0..cfg.sysid_iters {
        let picks = rand::seq::index::sample(&mut rng, n_train, cfg.batch);
        let chosen: Vec<&Transition> = picks.iter().map(|j| train[j]).collect();
        let batch = batch_from(&chosen)?;
        model.refit(&batch, cfg.rank_tol)?;
        let (loss, mut g) = model.loss_and_grad_l1(&model.frozen_k(), &batch)?;
        if !loss.is_finite() {
            return Err(Error::NumericalDivergence("L1".into()));
        }
        let gn = norm(&g);
        if gn > cfg.grad_clip {
            g.iter_mut().for_each(|v| *v *= cfg.grad_clip / gn);
        }
        model.step_lift(&g, cfg.step_sizes(i).lift)?;
    }

    let train_batch = batch_from(&train)?;
    model.refit(&train_batch, cfg.rank_tol)?;
    let final_l1 = model.loss_l1(&model.frozen_k(), &train_batch)?;
    let audit = audit_rank(&train_batch, &model, cfg.rank_tol)?;
    let test_batch = batch_from(&test)?;
    let holdout_one_step = max_one_step_error(&model, &test_batch)?;

    let mut rollout_errors = vec![0.0; 0];
    let mut windows = 0;
    let tail = &ts[n_train..];
    let mut start = 0;
    while start + ROLLOUT_STEPS <= tail.len() {
        let window = &tail[start..start + ROLLOUT_STEPS];
        start += ROLLOUT_STEPS;
        if !continuous(window) {
            continue;
        }
        let inputs: Vec<Vec<f64>> = window.iter().map(|t| t.u.clone()).collect();
        let preds = model.rollout(&window[0].x, &inputs)?;
        if rollout_errors.is_empty() {
            rollout_errors = vec![0.0; ROLLOUT_STEPS];
        }
        for (k, (p, t)) in preds.iter().zip(window).enumerate() {
            let e: Vec<f64> = p.iter().zip(&t.x_next).map(|(a, b)| a - b).collect();
            rollout_errors[k] = f64::max(rollout_errors[k], norm(&e));
        }
        windows += 1;
    }

    Ok((
        model,
        SysidReport {
            train_rows: n_train,
            holdout_rows: holdout,
            final_l1,
            holdout_one_step,
            rollout_errors,
            rollout_windows: windows,
            audit,
        },
    ))
}
