//! Checkpoint directories: the resolved config plus one file per component.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::actor::Actor;
use crate::config::parse_config_str;
use crate::critic::Critic;
use crate::error::{Error, Result};
use crate::koopman::KoopmanModel;
use crate::neural;
use crate::trainer::Agent;

pub const MANIFEST: &str = "manifest.txt";
pub const LIFT_FILE: &str = "lift.ckpt";
pub const CRITIC_FILE: &str = "critic.mlp";
pub const ACTOR_FILE: &str = "actor.mlp";

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn split(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(|f| f.parse().ok()).collect()
}

pub fn write_critic(w: &mut impl Write, critic: &Critic) -> Result<()> {
    neural::write_checkpoint(w, &critic.spec, &critic.theta)?;
    writeln!(w, "critic gamma={:?}", critic.gamma)?;
    Ok(())
}

pub fn read_critic(r: &mut impl BufRead) -> Result<Critic> {
    let (spec, theta) = neural::read_checkpoint(r)?;
    let mut line = String::new();
    r.read_line(&mut line)?;
    let gamma = line
        .trim_end()
        .strip_prefix("critic gamma=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::invalid(format!("bad critic trailer {:?}", line.trim_end())))?;
    Critic::new(spec, theta, gamma)
}

pub fn write_actor(w: &mut impl Write, actor: &Actor) -> Result<()> {
    neural::write_checkpoint(w, &actor.spec, &actor.theta)?;
    writeln!(w, "actor low={} high={}", join(&actor.action_low), join(&actor.action_high))?;
    Ok(())
}

pub fn read_actor(r: &mut impl BufRead) -> Result<Actor> {
    let (spec, theta) = neural::read_checkpoint(r)?;
    let mut line = String::new();
    r.read_line(&mut line)?;
    let bad = || Error::invalid(format!("bad actor trailer {:?}", line.trim_end()));
    let rest = line.trim_end().strip_prefix("actor ").ok_or_else(bad)?;
    let (low, high) = rest.split_once(' ').ok_or_else(bad)?;
    let low = low.strip_prefix("low=").and_then(split).ok_or_else(bad)?;
    let high = high.strip_prefix("high=").and_then(split).ok_or_else(bad)?;
    Actor::new(spec, theta, low, high)
}

/// Writes `manifest.txt`, `lift.ckpt`, `critic.mlp` and `actor.mlp` into `dir`.
pub fn save_agent(dir: &Path, agent: &Agent) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(MANIFEST), agent.config.to_kv())?;
    let mut w = BufWriter::new(File::create(dir.join(LIFT_FILE))?);
    agent.model.write_checkpoint(&mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(dir.join(CRITIC_FILE))?);
    write_critic(&mut w, &agent.critic)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(dir.join(ACTOR_FILE))?);
    write_actor(&mut w, &agent.actor)?;
    w.flush()?;
    Ok(())
}

pub fn load_agent(dir: &Path) -> Result<Agent> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let config = parse_config_str(&text, &[])?;
    let model = KoopmanModel::read_checkpoint(&mut BufReader::new(File::open(dir.join(LIFT_FILE))?))?;
    let critic = read_critic(&mut BufReader::new(File::open(dir.join(CRITIC_FILE))?))?;
    let actor = read_actor(&mut BufReader::new(File::open(dir.join(ACTOR_FILE))?))?;
    if model.state_dim() != actor.state_dim() || critic.state_dim() != actor.state_dim() {
        return Err(Error::invalid("checkpoint components disagree on the state dimension"));
    }
    Ok(Agent {
        config,
        model,
        critic,
        actor,
    })
}
