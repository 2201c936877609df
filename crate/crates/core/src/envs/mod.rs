//! Built-in continuous-control tasks.
//!
//! Each environment is a stateless transition function with a seeded reset
//! and a smooth nonnegative stage cost whose input gradient is analytic.

mod cartpole;
mod double_integrator;
mod lqr;
mod pendulum;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use cartpole::CartPole;
pub use double_integrator::DoubleIntegrator;
pub use lqr::{lqr_oracle, LqrSolution};
pub use pendulum::{Pendulum, PendulumMode};

use crate::error::{check_len, Error, Result};
use crate::numerics::Matrix;

/// Stage cost `c(x, u) ≥ 0` and its input gradient.
pub trait CostOracle {
    fn cost(&self, x: &[f64], u: &[f64]) -> f64;
    fn cost_grad_u(&self, x: &[f64], u: &[f64]) -> Vec<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub dt: f64,
    pub horizon: usize,
}

pub trait Environment: CostOracle {
    fn spec(&self) -> &EnvSpec;

    /// Initial state drawn from the environment's reset distribution.
    fn reset_with(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;

    /// One integration step with an already-clipped input.
    fn integrate(&self, x: &[f64], u: &[f64]) -> Vec<f64>;

    /// `(A, B, Q, R)` when the task is exactly linear-quadratic.
    fn linear_quadratic(&self) -> Option<(Matrix, Matrix, Matrix, Matrix)> {
        None
    }

    fn reset(&self, seed: u64) -> Vec<f64> {
        self.reset_with(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Clips `u` to the action bounds, integrates, and returns the successor
    /// and the stage cost at `(x, clipped u)`.
    fn step(&self, x: &[f64], u: &[f64]) -> Result<(Vec<f64>, f64)> {
        let spec = self.spec();
        check_len("env state", x.len(), spec.state_dim)?;
        check_len("env action", u.len(), spec.action_dim)?;
        let u = clip(u, &spec.action_low, &spec.action_high);
        let next = self.integrate(x, &u);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::EnvDiverged(next));
        }
        let cost = self.cost(x, &u);
        Ok((next, cost))
    }
}

pub fn clip(u: &[f64], low: &[f64], high: &[f64]) -> Vec<f64> {
    u.iter()
        .zip(low.iter().zip(high))
        .map(|(&v, (&lo, &hi))| v.clamp(lo, hi))
        .collect()
}

/// Names accepted by [`make_env`].
pub const ENV_NAMES: &[&str] = &["double_integrator", "pendulum", "pendulum_swingup", "cartpole"];

/// Physical constants each environment accepts as overrides.
pub fn override_keys(name: &str) -> Option<&'static [&'static str]> {
    match name {
        "double_integrator" => Some(DoubleIntegrator::KEYS),
        "pendulum" | "pendulum_swingup" => Some(Pendulum::KEYS),
        "cartpole" => Some(CartPole::KEYS),
        _ => None,
    }
}

/// Builds an environment by name, applying constant overrides such as `dt`.
pub fn make_env(name: &str, overrides: &BTreeMap<String, f64>) -> Result<Box<dyn Environment + Send + Sync>> {
    let keys = override_keys(name).ok_or_else(|| {
        Error::invalid(format!("unknown environment {name:?}; expected one of {ENV_NAMES:?}"))
    })?;
    if let Some(bad) = overrides.keys().find(|k| !keys.contains(&k.as_str())) {
        return Err(Error::invalid(format!(
            "environment {name} has no constant {bad:?}; known: {keys:?}"
        )));
    }
    let get = |k: &str, default: f64| overrides.get(k).copied().unwrap_or(default);
    let env: Box<dyn Environment + Send + Sync> = match name {
        "double_integrator" => Box::new(DoubleIntegrator::new(get("dt", 0.1), get("max_action", 20.0))?),
        "pendulum" | "pendulum_swingup" => {
            let mode = if name == "pendulum" {
                PendulumMode::Stabilize
            } else {
                PendulumMode::SwingUp
            };
            Box::new(Pendulum::new(
                mode,
                get("g", 10.0),
                get("mass", 1.0),
                get("length", 1.0),
                get("dt", 0.05),
                get("max_torque", 5.0),
            )?)
        }
        "cartpole" => Box::new(CartPole::new(
            get("gravity", 9.8),
            get("cart_mass", 1.0),
            get("pole_mass", 0.1),
            get("half_length", 0.5),
            get("dt", 0.02),
            get("max_force", 10.0),
        )?),
        _ => unreachable!(),
    };
    Ok(env)
}

pub(crate) fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}
