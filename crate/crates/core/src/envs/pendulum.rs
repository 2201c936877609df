use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{positive, CostOracle, EnvSpec, Environment};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PendulumMode {
    /// Resets near upright: θ ∈ [−0.5, 0.5], θ̇ ∈ [−0.2, 0.2].
    Stabilize,
    /// Resets hanging down at θ = π, at rest.
    SwingUp,
}

/// Torque-driven pendulum with θ = 0 upright.
///
/// `θ̈ = (3g / 2l) sin θ + (3 / m l²) u`, integrated velocity-first.
/// Cost: `wrap(θ)² + 0.1 θ̇² + 0.001 u²`.
#[derive(Clone, Debug)]
pub struct Pendulum {
    spec: EnvSpec,
    mode: PendulumMode,
    g: f64,
    mass: f64,
    length: f64,
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

impl Pendulum {
    pub const KEYS: &'static [&'static str] = &["g", "mass", "length", "dt", "max_torque"];

    pub fn new(mode: PendulumMode, g: f64, mass: f64, length: f64, dt: f64, max_torque: f64) -> Result<Self> {
        let max_torque = positive("max_torque", max_torque)?;
        Ok(Pendulum {
            spec: EnvSpec {
                name: match mode {
                    PendulumMode::Stabilize => "pendulum",
                    PendulumMode::SwingUp => "pendulum_swingup",
                },
                state_dim: 2,
                action_dim: 1,
                action_low: vec![-max_torque],
                action_high: vec![max_torque],
                dt: positive("dt", dt)?,
                horizon: 100,
            },
            mode,
            g: positive("g", g)?,
            mass: positive("mass", mass)?,
            length: positive("length", length)?,
        })
    }

    pub fn mode(&self) -> PendulumMode {
        self.mode
    }
}

impl CostOracle for Pendulum {
    fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let th = wrap_angle(x[0]);
        th * th + 0.1 * x[1] * x[1] + 0.001 * u[0] * u[0]
    }

    fn cost_grad_u(&self, _x: &[f64], u: &[f64]) -> Vec<f64> {
        vec![0.002 * u[0]]
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset_with(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self.mode {
            PendulumMode::Stabilize => vec![rng.gen_range(-0.5..=0.5), rng.gen_range(-0.2..=0.2)],
            PendulumMode::SwingUp => vec![PI, 0.0],
        }
    }

    fn integrate(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let (g, m, l, dt) = (self.g, self.mass, self.length, self.spec.dt);
        let acc = 3.0 * g / (2.0 * l) * x[0].sin() + 3.0 / (m * l * l) * u[0];
        let omega = x[1] + dt * acc;
        vec![x[0] + dt * omega, omega]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pendulum() -> Pendulum {
        Pendulum::new(PendulumMode::Stabilize, 10.0, 1.0, 1.0, 0.05, 5.0).unwrap()
    }

    #[test]
    fn upright_is_fixed_point() {
        let (next, cost) = pendulum().step(&[0.0, 0.0], &[0.0]).unwrap();
        assert_eq!(next, vec![0.0, 0.0]);
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn downward_is_fixed_point() {
        let p = pendulum();
        let mut x = vec![PI, 0.0];
        for _ in 0..100 {
            x = p.integrate(&x, &[0.0]);
        }
        // sin(π) is not exactly zero in floating point; drift stays tiny
        assert!((x[0] - PI).abs() < 1e-10 && x[1].abs() < 1e-10);
    }

    #[test]
    fn horizontal_step() {
        let (next, _) = pendulum().step(&[PI / 2.0, 0.0], &[0.0]).unwrap();
        assert!((next[1] - 0.75).abs() < 1e-14);
        assert!((next[0] - (PI / 2.0 + 0.0375)).abs() < 1e-14);
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert!((wrap_angle(2.0 * PI + 0.1) - 0.1).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-3.0 * PI / 2.0) - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn reset_ranges() {
        let p = pendulum();
        for seed in 0..200 {
            let x = p.reset(seed);
            assert!(x[0].abs() <= 0.5 && x[1].abs() <= 0.2);
        }
        let s = Pendulum::new(PendulumMode::SwingUp, 10.0, 1.0, 1.0, 0.05, 5.0).unwrap();
        assert_eq!(s.reset(3), vec![PI, 0.0]);
    }
}
