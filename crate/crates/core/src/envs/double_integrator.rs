use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{positive, CostOracle, EnvSpec, Environment};
use crate::error::Result;
use crate::numerics::Matrix;

/// `p' = p + dt·v`, `v' = v + dt·u`, with cost `p² + 0.1 v² + 0.01 u²`.
///
/// Resets draw `(p, v)` uniformly from `[-1, 1]²`.
#[derive(Clone, Debug)]
pub struct DoubleIntegrator {
    spec: EnvSpec,
}

const Q: [f64; 2] = [1.0, 0.1];
const R: f64 = 0.01;

impl DoubleIntegrator {
    pub const KEYS: &'static [&'static str] = &["dt", "max_action"];

    pub fn new(dt: f64, max_action: f64) -> Result<Self> {
        let dt = positive("dt", dt)?;
        let max_action = positive("max_action", max_action)?;
        Ok(DoubleIntegrator {
            spec: EnvSpec {
                name: "double_integrator",
                state_dim: 2,
                action_dim: 1,
                action_low: vec![-max_action],
                action_high: vec![max_action],
                dt,
                horizon: 100,
            },
        })
    }

    /// `(A, B, Q, R)` of the exact discrete system and its quadratic cost.
    pub fn linear_model(&self) -> (Matrix, Matrix, Matrix, Matrix) {
        let dt = self.spec.dt;
        (
            Matrix::from_rows(&[[1.0, dt], [0.0, 1.0]]),
            Matrix::from_rows(&[[0.0], [dt]]),
            Matrix::from_diag(&Q),
            Matrix::from_rows(&[[R]]),
        )
    }
}

impl CostOracle for DoubleIntegrator {
    fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        Q[0] * x[0] * x[0] + Q[1] * x[1] * x[1] + R * u[0] * u[0]
    }

    fn cost_grad_u(&self, _x: &[f64], u: &[f64]) -> Vec<f64> {
        vec![2.0 * R * u[0]]
    }
}

impl Environment for DoubleIntegrator {
    fn linear_quadratic(&self) -> Option<(Matrix, Matrix, Matrix, Matrix)> {
        Some(self.linear_model())
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset_with(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)]
    }

    fn integrate(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let dt = self.spec.dt;
        vec![x[0] + dt * x[1], x[1] + dt * u[0]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drift_step() {
        let env = DoubleIntegrator::new(0.1, 20.0).unwrap();
        let (next, cost) = env.step(&[0.0, 1.0], &[0.0]).unwrap();
        assert_eq!(next, vec![0.1, 1.0]);
        assert!((cost - 0.1).abs() < 1e-15);
    }

    #[test]
    fn reset_range() {
        let env = DoubleIntegrator::new(0.1, 20.0).unwrap();
        for seed in 0..200 {
            let x = env.reset(seed);
            assert!(x.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn linear_model_matches_integrator() {
        let env = DoubleIntegrator::new(0.1, 20.0).unwrap();
        let (a, b, _, _) = env.linear_model();
        let x = [0.3, -0.7];
        let u = [1.5];
        let mut expect = a.mul_vec(&x);
        expect[0] += b[(0, 0)] * u[0];
        expect[1] += b[(1, 0)] * u[0];
        assert_eq!(env.integrate(&x, &u), expect);
    }
}
