//! Value function `Ĵ(x)` trained on the squared temporal-difference error.
//!
//! The update differentiates the TD error through both `Ĵ(x_k)` and
//! `γ Ĵ(x_{k+1})` (residual gradient), not the semi-gradient TD(0) rule.

use crate::error::{check_len, Error, Result};
use crate::koopman::DataBatch;
use crate::neural::{MlpParams, MlpSpec, OutputActivation};
use crate::numerics::axpy;

#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub spec: MlpSpec,
    pub theta: MlpParams,
    pub gamma: f64,
}

impl Critic {
    pub fn new(spec: MlpSpec, theta: MlpParams, gamma: f64) -> Result<Self> {
        if spec.output_width() != 1 {
            return Err(Error::invalid("critic must have a single output"));
        }
        if spec.output_activation() != OutputActivation::Identity {
            return Err(Error::invalid("critic output head must be the identity"));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::invalid(format!("gamma {gamma} outside (0, 1]")));
        }
        check_len("critic parameters", theta.len(), spec.param_count())?;
        Ok(Critic { spec, theta, gamma })
    }

    /// Randomly initialised critic with tanh hidden layers.
    pub fn init(state_dim: usize, hidden: &[usize], gamma: f64, seed: u64) -> Result<Self> {
        let spec = MlpSpec::with_hidden(state_dim, hidden, 1, OutputActivation::Identity)?;
        let theta = spec.init_params(seed);
        Critic::new(spec, theta, gamma)
    }

    pub fn state_dim(&self) -> usize {
        self.spec.input_width()
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.spec.forward(&self.theta, x)?[0])
    }

    /// `∂Ĵ/∂x`
    pub fn value_grad_x(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = vec![0.0; self.theta.len()];
        self.spec.vjp_accumulate(&self.theta, x, &[1.0], 0.0, &mut scratch)
    }

    fn check_batch(&self, batch: &DataBatch) -> Result<()> {
        check_len("batch state rows", batch.state_dim(), self.state_dim())?;
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        Ok(())
    }

    fn td_error(&self, batch: &DataBatch, k: usize) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let x = batch.states.column(k);
        let x_next = batch.next_states.column(k);
        let delta = batch.costs[k] + self.gamma * self.value(&x_next)? - self.value(&x)?;
        Ok((x, x_next, delta))
    }

    /// `(1/N) Σ (c_k + γ Ĵ(x_{k+1}) − Ĵ(x_k))²`
    pub fn td_loss(&self, batch: &DataBatch) -> Result<f64> {
        self.check_batch(batch)?;
        let mut total = 0.0;
        for k in 0..batch.len() {
            let (_, _, d) = self.td_error(batch, k)?;
            total += d * d;
        }
        Ok(total / batch.len() as f64)
    }

    pub fn grad_td(&self, batch: &DataBatch) -> Result<Vec<f64>> {
        Ok(self.td_loss_and_grad(batch)?.1)
    }

    /// Loss and `(2/N) Σ δ_k (γ ∂Ĵ(x_{k+1})/∂θ − ∂Ĵ(x_k)/∂θ)`.
    pub fn td_loss_and_grad(&self, batch: &DataBatch) -> Result<(f64, Vec<f64>)> {
        self.check_batch(batch)?;
        let scale = 2.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.theta.len()];
        let mut total = 0.0;
        for k in 0..batch.len() {
            let (x, x_next, d) = self.td_error(batch, k)?;
            total += d * d;
            self.spec
                .vjp_accumulate(&self.theta, &x_next, &[d * self.gamma], scale, &mut grad)?;
            self.spec.vjp_accumulate(&self.theta, &x, &[d], -scale, &mut grad)?;
        }
        Ok((total / batch.len() as f64, grad))
    }

    pub fn step(&mut self, grad: &[f64], step: f64) -> Result<()> {
        check_len("critic gradient", grad.len(), self.theta.len())?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericalDivergence("L3 (TD) gradient".into()));
        }
        axpy(-step, grad, self.theta.as_mut_slice());
        Ok(())
    }
}
