//! Verification utilities: central finite differences, rank audits of the
//! least-squares fit, and a known-linear-system data generator.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::actor::Actor;
use crate::critic::Critic;
use crate::envs::CostOracle;
use crate::error::{Error, Result};
use crate::koopman::{rank_and_margin, DataBatch, KoopmanModel};
use crate::neural::{MlpParams, MlpSpec, OutputActivation};
use crate::numerics::{norm, Matrix};

pub const DEFAULT_FD_STEP: f64 = 1e-6;
pub const GRADCHECK_THRESHOLD: f64 = 1e-4;

/// Central differences `(f(θ + h e_j) − f(θ − h e_j)) / 2h`.
pub fn finite_diff_grad(mut loss: impl FnMut(&[f64]) -> f64, theta: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Oracle(format!("step {h} must be positive")));
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        probe[j] = theta[j] + h;
        let up = loss(&probe);
        probe[j] = theta[j] - h;
        let down = loss(&probe);
        probe[j] = theta[j];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::Oracle(format!("non-finite loss around coordinate {j}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-12)`
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdCheckResult {
    pub loss_name: String,
    pub max_rel_error: f64,
    /// Coordinate with the largest absolute discrepancy in the worst trial.
    pub worst_coordinate: usize,
    pub n_trials: usize,
}

impl FdCheckResult {
    fn new(name: &str) -> Self {
        FdCheckResult {
            loss_name: name.into(),
            max_rel_error: 0.0,
            worst_coordinate: 0,
            n_trials: 0,
        }
    }

    fn record(&mut self, analytic: &[f64], fd: &[f64]) {
        let err = relative_error(analytic, fd);
        self.n_trials += 1;
        if err >= self.max_rel_error {
            self.max_rel_error = err;
            self.worst_coordinate = analytic
                .iter()
                .zip(fd)
                .enumerate()
                .max_by(|(_, (a, b)), (_, (c, d))| (*a - *b).abs().total_cmp(&(*c - *d).abs()))
                .map_or(0, |(j, _)| j);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub results: Vec<FdCheckResult>,
    pub threshold: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results
            .iter()
            .all(|r| r.max_rel_error.is_finite() && r.max_rel_error < self.threshold)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10}{:>8}{:>16}{:>8}{:>8}", "loss", "trials", "max rel error", "coord", "status")?;
        for r in &self.results {
            let status = if r.max_rel_error < self.threshold { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{:<10}{:>8}{:>16.3e}{:>8}{:>8}",
                r.loss_name, r.n_trials, r.max_rel_error, r.worst_coordinate, status
            )?;
        }
        for r in &self.results {
            writeln!(f, "{}_max_rel_error={:e}", r.loss_name, r.max_rel_error)?;
        }
        write!(f, "threshold={:e}\npassed={}", self.threshold, self.passed())
    }
}

/// `xᵀQx + uᵀRu + x₀ wᵀu` with diagonal `Q`, `R`.
struct QuadraticCost {
    q: Vec<f64>,
    r: Vec<f64>,
    w: Vec<f64>,
}

impl CostOracle for QuadraticCost {
    fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let sx: f64 = x.iter().zip(&self.q).map(|(v, q)| q * v * v).sum();
        let su: f64 = u.iter().zip(&self.r).map(|(v, r)| r * v * v).sum();
        let cross: f64 = u.iter().zip(&self.w).map(|(v, w)| w * v).sum();
        sx + su + x[0] * cross
    }

    fn cost_grad_u(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.r).zip(&self.w).map(|((v, r), w)| 2.0 * r * v + x[0] * w).collect()
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

struct Instance {
    model: KoopmanModel,
    critic: Critic,
    actor: Actor,
    batch: DataBatch,
    cost: QuadraticCost,
}

/// Random small problem with `n ≤ 4`, `m ≤ 2`, `r ≤ 8`, `N ≤ 32`.
fn random_instance(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let n = rng.gen_range(1..=4);
    let m = rng.gen_range(1..=2);
    let augment = n <= 4 && rng.gen_bool(0.3);
    let r_net = if augment { rng.gen_range(1..=8 - n) } else { rng.gen_range(1..=8) };
    let r = r_net + if augment { n } else { 0 };
    let big_n = rng.gen_range((r + m).max(2)..=32);

    let states = gaussian_matrix(rng, n, big_n, 1.0);
    let inputs = gaussian_matrix(rng, m, big_n, 1.0);
    let mix = gaussian_matrix(rng, n, n, 0.7);
    let feed = gaussian_matrix(rng, n, m, 0.3);
    let mut next_states = Matrix::zeros(n, big_n);
    for j in 0..big_n {
        let lin = mix.mul_vec(&states.column(j));
        let push = feed.mul_vec(&inputs.column(j));
        let col: Vec<f64> = lin.iter().zip(&push).map(|(a, b)| a.tanh() + b).collect();
        next_states.set_column(j, &col)?;
    }
    let cost = QuadraticCost {
        q: (0..n).map(|_| rng.gen_range(0.1..2.0)).collect(),
        r: (0..m).map(|_| rng.gen_range(0.01..1.0)).collect(),
        w: (0..m).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    };
    let costs = (0..big_n)
        .map(|j| cost.cost(&states.column(j), &inputs.column(j)))
        .collect();
    let batch = DataBatch::new(states, next_states, inputs, costs)?;

    let width = |rng: &mut ChaCha8Rng| vec![rng.gen_range(2..=6)];
    let lift_spec = MlpSpec::with_hidden(n, &width(rng), r_net, OutputActivation::Identity)?;
    let theta = lift_spec.init_params(rng.gen());
    let mut model = KoopmanModel::new(lift_spec, theta, augment, m)?;
    model.refit(&batch, 1e-10)?;

    let gamma = rng.gen_range(0.5..0.999);
    let critic = Critic::init(n, &width(rng), gamma, rng.gen())?;

    let bound = rng.gen_range(0.5..3.0);
    let center: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let low = center.iter().map(|c| c - bound).collect();
    let high = center.iter().map(|c| c + bound).collect();
    let actor = Actor::init(n, &width(rng), low, high, rng.gen())?;
    Ok(Instance {
        model,
        critic,
        actor,
        batch,
        cost,
    })
}

/// Compares the analytic gradients of the lifting, TD and policy losses with
/// central differences over `trials` random instances. With `corrupt`, the
/// analytic gradients are perturbed by 1% so the check must fail.
pub fn run_gradcheck(trials: usize, seed: u64, corrupt: bool) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut l1 = FdCheckResult::new("L1");
    let mut td = FdCheckResult::new("L3");
    let mut l2 = FdCheckResult::new("L2");
    let skew = if corrupt { 1.01 } else { 1.0 };
    let h = DEFAULT_FD_STEP;
    for _ in 0..trials {
        let inst = random_instance(&mut rng)?;
        let scaled = |g: Vec<f64>| g.into_iter().map(|v| v * skew).collect::<Vec<_>>();

        let k = inst.model.frozen_k();
        let analytic = scaled(inst.model.grad_l1(&k, &inst.batch)?);
        let mut probe = inst.model.clone();
        let fd = finite_diff_grad(
            |t| {
                probe.theta = MlpParams(t.to_vec());
                probe.loss_l1(&k, &inst.batch).unwrap_or(f64::NAN)
            },
            inst.model.theta.as_slice(),
            h,
        )?;
        l1.record(&analytic, &fd);

        let analytic = scaled(inst.critic.grad_td(&inst.batch)?);
        let mut probe = inst.critic.clone();
        let fd = finite_diff_grad(
            |t| {
                probe.theta = MlpParams(t.to_vec());
                probe.td_loss(&inst.batch).unwrap_or(f64::NAN)
            },
            inst.critic.theta.as_slice(),
            h,
        )?;
        td.record(&analytic, &fd);

        let analytic = scaled(inst.actor.grad_l2(&inst.critic, &inst.model, &inst.batch, &inst.cost)?);
        let mut probe = inst.actor.clone();
        let fd = finite_diff_grad(
            |t| {
                probe.theta = MlpParams(t.to_vec());
                probe
                    .loss_l2(&inst.critic, &inst.model, &inst.batch, &inst.cost)
                    .unwrap_or(f64::NAN)
            },
            inst.actor.theta.as_slice(),
            h,
        )?;
        l2.record(&analytic, &fd);
    }
    Ok(GradcheckReport {
        results: vec![l1, td, l2],
        threshold: GRADCHECK_THRESHOLD,
    })
}

/// Row-rank audit of `G` and `[G; U]` for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct RankAudit {
    pub samples: usize,
    /// `r + m`
    pub required: usize,
    pub batch_too_small: bool,
    pub rank_g: Option<usize>,
    pub rank_gu: Option<usize>,
    /// Smallest over largest singular value.
    pub margin_g: Option<f64>,
    pub margin_gu: Option<f64>,
    pub lifted_dim: usize,
    pub input_dim: usize,
}

impl RankAudit {
    /// Both matrices have full row rank.
    pub fn full_row_rank(&self) -> bool {
        self.rank_g == Some(self.lifted_dim) && self.rank_gu == Some(self.lifted_dim + self.input_dim)
    }
}

/// Reports the ranks and margins of the lifted data without failing; a
/// batch with fewer than `r + m` columns is flagged before any SVD.
pub fn audit_rank(batch: &DataBatch, model: &KoopmanModel, tol: f64) -> Result<RankAudit> {
    let (r, m) = (model.lifted_dim(), model.input_dim());
    let mut audit = RankAudit {
        samples: batch.len(),
        required: r + m,
        batch_too_small: batch.len() < r + m,
        rank_g: None,
        rank_gu: None,
        margin_g: None,
        margin_gu: None,
        lifted_dim: r,
        input_dim: m,
    };
    if audit.batch_too_small {
        return Ok(audit);
    }
    let g = model.lift_batch(&batch.states)?;
    let (rg, mg) = rank_and_margin(&g, tol)?;
    let (rgu, mgu) = rank_and_margin(&g.vstack(&batch.inputs), tol)?;
    audit.rank_g = Some(rg);
    audit.margin_g = Some(mg);
    audit.rank_gu = Some(rgu);
    audit.margin_gu = Some(mgu);
    Ok(audit)
}

impl fmt::Display for RankAudit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<usize>| v.map_or("-".to_string(), |v| v.to_string());
        let showf = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3e}"));
        writeln!(f, "samples N             {}", self.samples)?;
        writeln!(f, "required r+m          {}", self.required)?;
        if self.batch_too_small {
            writeln!(f, "BatchTooSmall: {} < {}", self.samples, self.required)?;
        }
        writeln!(f, "rank G                {} / {}  margin {}", show(self.rank_g), self.lifted_dim, showf(self.margin_g))?;
        writeln!(
            f,
            "rank [G;U]            {} / {}  margin {}",
            show(self.rank_gu),
            self.required,
            showf(self.margin_gu)
        )?;
        writeln!(f, "batch_too_small={}", self.batch_too_small)?;
        writeln!(f, "rank_g={}", show(self.rank_g))?;
        writeln!(f, "rank_gu={}", show(self.rank_gu))?;
        write!(f, "full_row_rank={}", self.full_row_rank())
    }
}

/// Simulates `x_{k+1} = A₀ x_k + B₀ u_k` from a standard normal `x_0` with
/// Gaussian inputs of standard deviation `input_scale`. Costs are `‖x‖² + ‖u‖²`.
pub fn gen_linear_data(a0: &Matrix, b0: &Matrix, steps: usize, input_scale: f64, seed: u64) -> Result<DataBatch> {
    let n = a0.rows();
    if a0.cols() != n || b0.rows() != n || b0.cols() == 0 {
        return Err(Error::invalid("A0 must be n×n and B0 n×m"));
    }
    if steps == 0 || !(input_scale >= 0.0) {
        return Err(Error::invalid("need steps > 0 and input_scale >= 0"));
    }
    let m = b0.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut states = Matrix::zeros(n, steps);
    let mut next = Matrix::zeros(n, steps);
    let mut inputs = Matrix::zeros(m, steps);
    let mut costs = Vec::with_capacity(steps);
    for k in 0..steps {
        let u: Vec<f64> = (0..m).map(|_| input_scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut xn = a0.mul_vec(&x);
        for (v, bu) in xn.iter_mut().zip(b0.mul_vec(&u)) {
            *v += bu;
        }
        if xn.iter().any(|v| !v.is_finite() || v.abs() > 1e150) {
            return Err(Error::DivergedRollout { step: k });
        }
        states.set_column(k, &x)?;
        inputs.set_column(k, &u)?;
        next.set_column(k, &xn)?;
        costs.push(norm(&x).powi(2) + norm(&u).powi(2));
        x = xn;
    }
    DataBatch::new(states, next, inputs, costs)
}
