//! Deterministic policy `u = μ(x)` and its update through the surrogate.
//!
//! The surrogate loss evaluates, for each replayed state, the stage cost of
//! the current policy's action plus the discounted critic value of the
//! one-step Koopman prediction. Its gradient chains through the constant
//! input sensitivity `∂x̂/∂u = C B`.

use crate::critic::Critic;
use crate::envs::{clip, CostOracle};
use crate::error::{check_len, Error, Result};
use crate::koopman::{DataBatch, KoopmanModel};
use crate::neural::{MlpParams, MlpSpec, OutputActivation};
use crate::numerics::{axpy, Matrix};

/// Half-width of the uniform initialisation of the actor's output weights.
pub const HEAD_INIT: f64 = 3e-3;

/// Anything that maps a state to an action.
pub trait Policy {
    fn act(&self, x: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Actor {
    pub spec: MlpSpec,
    pub theta: MlpParams,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    /// Midpoint of the action box, added to the network output.
    center: Vec<f64>,
}

impl Actor {
    /// Builds an actor around an existing network. The output is shifted by
    /// the box midpoint; with a `scaled_tanh` head its bound must equal the
    /// half-range of the box.
    pub fn new(spec: MlpSpec, theta: MlpParams, action_low: Vec<f64>, action_high: Vec<f64>) -> Result<Self> {
        let m = spec.output_width();
        check_len("action_low", action_low.len(), m)?;
        check_len("action_high", action_high.len(), m)?;
        check_len("actor parameters", theta.len(), spec.param_count())?;
        if action_low.iter().zip(&action_high).any(|(l, h)| !(l < h)) {
            return Err(Error::invalid("action_low must be below action_high"));
        }
        if let OutputActivation::ScaledTanh { bound } = spec.output_activation() {
            for (l, h) in action_low.iter().zip(&action_high) {
                if ((h - l) / 2.0 - bound).abs() > 1e-12 * bound.max(1.0) {
                    return Err(Error::invalid(format!(
                        "head bound {bound} differs from action half-range {}",
                        (h - l) / 2.0
                    )));
                }
            }
        }
        let center = action_low.iter().zip(&action_high).map(|(l, h)| (l + h) / 2.0).collect();
        Ok(Actor {
            spec,
            theta,
            action_low,
            action_high,
            center,
        })
    }

    /// Random actor with tanh hidden layers and a bounded head. The box must
    /// have the same half-range in every component.
    pub fn init(state_dim: usize, hidden: &[usize], action_low: Vec<f64>, action_high: Vec<f64>, seed: u64) -> Result<Self> {
        let bound = action_high
            .first()
            .zip(action_low.first())
            .map(|(h, l)| (h - l) / 2.0)
            .ok_or_else(|| Error::invalid("empty action box"))?;
        let head = OutputActivation::ScaledTanh { bound };
        let spec = MlpSpec::with_hidden(state_dim, hidden, action_low.len(), head)?;
        let mut theta = spec.init_params(seed);
        // Near-zero initial actions, so early exploration stays close to the
        // passive dynamics instead of saturating the actuator.
        let fan_in = *spec.widths().iter().rev().nth(1).unwrap() as f64;
        let shrink = HEAD_INIT * fan_in.sqrt();
        for w in &mut theta.as_mut_slice()[spec.output_weights()] {
            *w *= shrink;
        }
        Actor::new(spec, theta, action_low, action_high)
    }

    pub fn state_dim(&self) -> usize {
        self.spec.input_width()
    }

    pub fn action_dim(&self) -> usize {
        self.spec.output_width()
    }

    fn shift(&self, mut y: Vec<f64>) -> Vec<f64> {
        for (v, c) in y.iter_mut().zip(&self.center) {
            *v += c;
        }
        y
    }

    pub fn act(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.shift(self.spec.forward(&self.theta, x)?))
    }

    fn check(&self, critic: &Critic, model: &KoopmanModel, batch: &DataBatch) -> Result<()> {
        let n = self.state_dim();
        check_len("critic state dim", critic.state_dim(), n)?;
        check_len("model state dim", model.state_dim(), n)?;
        check_len("model input dim", model.input_dim(), self.action_dim())?;
        check_len("batch state rows", batch.state_dim(), n)?;
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        Ok(())
    }

    /// `(1/N) Σ [c(x_k, μ(x_k)) + γ Ĵ(x̂_{k+1})]` with `x̂_{k+1}` predicted
    /// one step from the observed `x_k` under the current policy's action.
    pub fn loss_l2(&self, critic: &Critic, model: &KoopmanModel, batch: &DataBatch, cost: &dyn CostOracle) -> Result<f64> {
        self.check(critic, model, batch)?;
        let mut total = 0.0;
        for k in 0..batch.len() {
            let x = batch.states.column(k);
            let u = self.act(&x)?;
            let x_hat = model.predict(&x, &u)?;
            total += cost.cost(&x, &u) + critic.gamma * critic.value(&x_hat)?;
        }
        Ok(total / batch.len() as f64)
    }

    pub fn grad_l2(&self, critic: &Critic, model: &KoopmanModel, batch: &DataBatch, cost: &dyn CostOracle) -> Result<Vec<f64>> {
        Ok(self.loss_and_grad_l2(critic, model, batch, cost)?.1)
    }

    /// Loss and `(1/N) Σ [∂c/∂u + γ (∂Ĵ/∂x̂) C B] ∂u_k/∂θ`.
    pub fn loss_and_grad_l2(
        &self,
        critic: &Critic,
        model: &KoopmanModel,
        batch: &DataBatch,
        cost: &dyn CostOracle,
    ) -> Result<(f64, Vec<f64>)> {
        self.check(critic, model, batch)?;
        let cb = model.input_sensitivity();
        let scale = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.theta.len()];
        let mut total = 0.0;
        for k in 0..batch.len() {
            let x = batch.states.column(k);
            let mut failure = None;
            self.spec
                .forward_vjp_with(&self.theta, &x, scale, &mut grad, |y| {
                    match self.cotangent(critic, model, &cb, cost, &x, y) {
                        Ok((c, loss)) => {
                            total += loss;
                            c
                        }
                        Err(e) => {
                            failure = Some(e);
                            vec![0.0; y.len()]
                        }
                    }
                })?;
            if let Some(e) = failure {
                return Err(e);
            }
        }
        Ok((total * scale, grad))
    }

    /// `∂ℓ/∂u` for one sample, with the sample's loss.
    fn cotangent(
        &self,
        critic: &Critic,
        model: &KoopmanModel,
        cb: &Matrix,
        cost: &dyn CostOracle,
        x: &[f64],
        net_out: &[f64],
    ) -> Result<(Vec<f64>, f64)> {
        let u = self.shift(net_out.to_vec());
        let x_hat = model.predict(x, &u)?;
        let loss = cost.cost(x, &u) + critic.gamma * critic.value(&x_hat)?;
        let mut cot = cost.cost_grad_u(x, &u);
        let dj = critic.value_grad_x(&x_hat)?;
        axpy(critic.gamma, &cb.tr_mul_vec(&dj), &mut cot);
        Ok((cot, loss))
    }

    /// `θ ← θ − step · grad`
    pub fn update_policy(&mut self, grad: &[f64], step: f64) -> Result<()> {
        check_len("policy gradient", grad.len(), self.theta.len())?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericalDivergence("L2 (policy) gradient".into()));
        }
        axpy(-step, grad, self.theta.as_mut_slice());
        Ok(())
    }
}

impl Policy for Actor {
    fn act(&self, x: &[f64]) -> Result<Vec<f64>> {
        Actor::act(self, x)
    }
}

/// Linear state feedback `u = −K x`, clipped to a box.
#[derive(Clone, Debug)]
pub struct LinearPolicy {
    pub gain: Matrix,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

impl Policy for LinearPolicy {
    fn act(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("linear policy state", x.len(), self.gain.cols())?;
        let u: Vec<f64> = self.gain.mul_vec(x).into_iter().map(|v| -v).collect();
        Ok(clip(&u, &self.action_low, &self.action_high))
    }
}
