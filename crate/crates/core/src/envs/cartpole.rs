use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{positive, CostOracle, EnvSpec, Environment};
use crate::error::Result;

/// Pole on a cart driven by a continuous horizontal force.
///
/// State `(x, ẋ, θ, θ̇)` with θ = 0 upright. Classic frictionless equations,
/// semi-implicit Euler. Cost: `x² + 10θ² + 0.1ẋ² + 0.1θ̇² + 0.001u²`.
#[derive(Clone, Debug)]
pub struct CartPole {
    spec: EnvSpec,
    gravity: f64,
    cart_mass: f64,
    pole_mass: f64,
    half_length: f64,
}

impl CartPole {
    pub const KEYS: &'static [&'static str] =
        &["gravity", "cart_mass", "pole_mass", "half_length", "dt", "max_force"];

    pub fn new(gravity: f64, cart_mass: f64, pole_mass: f64, half_length: f64, dt: f64, max_force: f64) -> Result<Self> {
        let max_force = positive("max_force", max_force)?;
        Ok(CartPole {
            spec: EnvSpec {
                name: "cartpole",
                state_dim: 4,
                action_dim: 1,
                action_low: vec![-max_force],
                action_high: vec![max_force],
                dt: positive("dt", dt)?,
                horizon: 200,
            },
            gravity: positive("gravity", gravity)?,
            cart_mass: positive("cart_mass", cart_mass)?,
            pole_mass: positive("pole_mass", pole_mass)?,
            half_length: positive("half_length", half_length)?,
        })
    }

    /// `(ẍ, θ̈)` at state `x` under force `f`.
    fn accelerations(&self, x: &[f64], f: f64) -> (f64, f64) {
        let (th, th_dot) = (x[2], x[3]);
        let total = self.cart_mass + self.pole_mass;
        let pml = self.pole_mass * self.half_length;
        let (s, c) = th.sin_cos();
        let temp = (f + pml * th_dot * th_dot * s) / total;
        let th_acc = (self.gravity * s - c * temp)
            / (self.half_length * (4.0 / 3.0 - self.pole_mass * c * c / total));
        let x_acc = temp - pml * th_acc * c / total;
        (x_acc, th_acc)
    }
}

impl CostOracle for CartPole {
    fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        x[0] * x[0] + 10.0 * x[2] * x[2] + 0.1 * x[1] * x[1] + 0.1 * x[3] * x[3] + 0.001 * u[0] * u[0]
    }

    fn cost_grad_u(&self, _x: &[f64], u: &[f64]) -> Vec<f64> {
        vec![0.002 * u[0]]
    }
}

impl Environment for CartPole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset_with(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..4).map(|_| rng.gen_range(-0.05..=0.05)).collect()
    }

    fn integrate(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let dt = self.spec.dt;
        let (x_acc, th_acc) = self.accelerations(x, u[0]);
        let v = x[1] + dt * x_acc;
        let w = x[3] + dt * th_acc;
        vec![x[0] + dt * v, v, x[2] + dt * w, w]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cartpole() -> CartPole {
        CartPole::new(9.8, 1.0, 0.1, 0.5, 0.02, 10.0).unwrap()
    }

    #[test]
    fn upright_rest_is_equilibrium() {
        let (next, cost) = cartpole().step(&[0.0; 4], &[0.0]).unwrap();
        assert_eq!(next, vec![0.0; 4]);
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn force_accelerates_cart_and_tips_pole_back() {
        let (next, _) = cartpole().step(&[0.0; 4], &[10.0]).unwrap();
        assert!(next[1] > 0.0);
        assert!(next[3] < 0.0);
        // force is clipped
        let (clipped, _) = cartpole().step(&[0.0; 4], &[100.0]).unwrap();
        assert_eq!(next, clipped);
    }

    #[test]
    fn tilted_pole_falls() {
        let (next, _) = cartpole().step(&[0.0, 0.0, 0.1, 0.0], &[0.0]).unwrap();
        assert!(next[3] > 0.0);
    }
}
