//! Deep Koopman surrogate `{g, A, B, C}`: a lifting network `g` whose
//! outputs evolve linearly, `z' = A z + B u`, and a linear read-out `x = C z`.
//!
//! `A`, `B` and `C` are closed-form least-squares fits on a batch for the
//! current lifting parameters. The lifting parameters are trained by
//! gradient descent on the reduced loss with the fitted block matrix
//! `K = [[A, B], [C, 0]]` held fixed.

use std::io::{BufRead, Write};

use crate::error::{check_len, Error, Result};
use crate::neural::{self, MlpParams, MlpSpec};
use crate::numerics::{self, axpy, norm, pinv, Matrix};

/// Ridge damping used when `[G; U]` is close to the rank cutoff.
pub const RIDGE_LAMBDA: f64 = 1e-8;

/// Stacked observations of `N` transitions, one per column.
#[derive(Clone, Debug, PartialEq)]
pub struct DataBatch {
    /// `n × N` states `x_k`.
    pub states: Matrix,
    /// `n × N` successors `x_{k+1}`.
    pub next_states: Matrix,
    /// `m × N` inputs `u_k`.
    pub inputs: Matrix,
    /// Stage costs `c_k`.
    pub costs: Vec<f64>,
}

impl DataBatch {
    pub fn new(states: Matrix, next_states: Matrix, inputs: Matrix, costs: Vec<f64>) -> Result<Self> {
        let n = states.cols();
        if next_states.cols() != n || inputs.cols() != n || costs.len() != n {
            return Err(Error::invalid(format!(
                "batch columns disagree: X {}, Xbar {}, U {}, costs {}",
                n,
                next_states.cols(),
                inputs.cols(),
                costs.len()
            )));
        }
        if next_states.rows() != states.rows() {
            return Err(Error::invalid("X and Xbar have different state dimensions"));
        }
        if !(states.is_finite() && next_states.is_finite() && inputs.is_finite())
            || costs.iter().any(|c| !c.is_finite())
        {
            return Err(Error::invalid("batch contains non-finite values"));
        }
        Ok(DataBatch {
            states,
            next_states,
            inputs,
            costs,
        })
    }

    pub fn len(&self) -> usize {
        self.states.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.rows()
    }

    /// Columns `[lo, hi)` as a new batch.
    pub fn slice(&self, lo: usize, hi: usize) -> DataBatch {
        DataBatch {
            states: self.states.block(0, lo, self.states.rows(), hi - lo),
            next_states: self.next_states.block(0, lo, self.next_states.rows(), hi - lo),
            inputs: self.inputs.block(0, lo, self.inputs.rows(), hi - lo),
            costs: self.costs[lo..hi].to_vec(),
        }
    }
}

/// Least-squares linear maps of the surrogate.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMaps {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    /// Set when `[G; U]` sat near the cutoff and the damped solve was used.
    pub damped: bool,
}

/// `[A, B] = Ḡ [G; U]†` and `C = X G†`.
///
/// Requires `N ≥ r + m` and full row rank of `G` and `[G; U]`. When the
/// smallest retained singular value of `[G; U]` is within 10× of the
/// cutoff, the fit switches to a ridge solve with damping [`RIDGE_LAMBDA`].
pub fn fit_linear_maps(g: &Matrix, g_next: &Matrix, u: &Matrix, x: &Matrix, tol: f64) -> Result<LinearMaps> {
    let (r, samples) = g.shape();
    let m = u.rows();
    if g_next.shape() != (r, samples) || u.cols() != samples || x.cols() != samples {
        return Err(Error::invalid(format!(
            "fit: G {:?}, Gbar {:?}, U {:?}, X {:?} disagree",
            g.shape(),
            g_next.shape(),
            u.shape(),
            x.shape()
        )));
    }
    if samples < r + m {
        return Err(Error::BatchTooSmall {
            samples,
            required: r + m,
        });
    }

    let gu = g.vstack(u);
    let (rank_gu, margin_gu) = rank_and_margin(&gu, tol)?;
    if rank_gu < r + m {
        return Err(Error::RankDeficient {
            which: "[G; U]",
            rank: rank_gu,
            expected: r + m,
        });
    }
    let (rank_g, margin_g) = rank_and_margin(g, tol)?;
    if rank_g < r {
        return Err(Error::RankDeficient {
            which: "G",
            rank: rank_g,
            expected: r,
        });
    }

    let near = |margin: f64| margin <= 10.0 * tol;
    let damped = near(margin_gu) || near(margin_g);
    let (ab, c) = if damped {
        (ridge_right_solve(g_next, &gu)?, ridge_right_solve(x, g)?)
    } else {
        (g_next.matmul(&pinv(&gu, tol)?), x.matmul(&pinv(g, tol)?))
    };
    Ok(LinearMaps {
        a: ab.block(0, 0, r, r),
        b: ab.block(0, r, r, m),
        c,
        damped,
    })
}

/// Same fit, but any rank failure falls back to the ridge solve instead of
/// erroring. `BatchTooSmall` still propagates.
pub fn fit_linear_maps_or_ridge(g: &Matrix, g_next: &Matrix, u: &Matrix, x: &Matrix, tol: f64) -> Result<LinearMaps> {
    match fit_linear_maps(g, g_next, u, x, tol) {
        Err(Error::RankDeficient { .. }) => {
            let gu = g.vstack(u);
            let ab = ridge_right_solve(g_next, &gu)?;
            let (r, m) = (g.rows(), u.rows());
            Ok(LinearMaps {
                a: ab.block(0, 0, r, r),
                b: ab.block(0, r, r, m),
                c: ridge_right_solve(x, g)?,
                damped: true,
            })
        }
        other => other,
    }
}

/// Rank and the ratio of the smallest singular value to the largest.
pub fn rank_and_margin(m: &Matrix, tol: f64) -> Result<(usize, f64)> {
    let s = numerics::singular_values(m)?;
    let smax = s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok((0, 0.0));
    }
    let rank = s.iter().filter(|&&v| v > tol * smax).count();
    let smin = if s.len() == m.rows() { *s.last().unwrap() } else { 0.0 };
    Ok((rank, smin / smax))
}

/// `Y Zᵀ (Z Zᵀ + λI)⁻¹`
fn ridge_right_solve(y: &Matrix, z: &Matrix) -> Result<Matrix> {
    let zt = z.transpose();
    let mut gram = z.matmul(&zt);
    for i in 0..gram.rows() {
        gram[(i, i)] += RIDGE_LAMBDA;
    }
    // λ may vanish next to ‖Z‖²; the pseudoinverse keeps a collapsed lifting finite
    Ok(y.matmul(&zt).matmul(&numerics::pinv(&gram, numerics::DEFAULT_RANK_TOL)?))
}

/// The surrogate `{g, A, B, C}`.
#[derive(Clone, Debug, PartialEq)]
pub struct KoopmanModel {
    pub lift_spec: MlpSpec,
    pub theta: MlpParams,
    /// Append the raw state to the network output.
    pub augment_state: bool,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl KoopmanModel {
    /// Model with `A`, `B`, `C` zeroed; call [`KoopmanModel::refit`] before predicting.
    pub fn new(lift_spec: MlpSpec, theta: MlpParams, augment_state: bool, input_dim: usize) -> Result<Self> {
        check_len("lifting parameters", theta.len(), lift_spec.param_count())?;
        let n = lift_spec.input_width();
        let r = lift_spec.output_width() + if augment_state { n } else { 0 };
        Ok(KoopmanModel {
            lift_spec,
            theta,
            augment_state,
            a: Matrix::zeros(r, r),
            b: Matrix::zeros(r, input_dim),
            c: Matrix::zeros(n, r),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.lift_spec.input_width()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    /// Lifted dimension `r`.
    pub fn lifted_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn set_maps(&mut self, maps: LinearMaps) -> Result<()> {
        let (r, m, n) = (self.lifted_dim(), self.input_dim(), self.state_dim());
        if maps.a.shape() != (r, r) || maps.b.shape() != (r, m) || maps.c.shape() != (n, r) {
            return Err(Error::invalid("linear maps do not match model dimensions"));
        }
        if !(maps.a.is_finite() && maps.b.is_finite() && maps.c.is_finite()) {
            return Err(Error::NumericalDivergence("Koopman fit".into()));
        }
        self.a = maps.a;
        self.b = maps.b;
        self.c = maps.c;
        Ok(())
    }

    /// `[[A, B], [C, 0]]`, of size `(r+n) × (r+m)`.
    pub fn frozen_k(&self) -> Matrix {
        let (r, m, n) = (self.lifted_dim(), self.input_dim(), self.state_dim());
        let top = self.a.hstack(&self.b);
        let bottom = self.c.hstack(&Matrix::zeros(n, m));
        debug_assert_eq!(top.cols(), r + m);
        top.vstack(&bottom)
    }

    /// `g(x)`, with `x` appended when the state is augmented.
    pub fn lift(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.lift_spec.forward(&self.theta, x)?;
        if self.augment_state {
            z.extend_from_slice(x);
        }
        Ok(z)
    }

    pub fn lift_batch(&self, states: &Matrix) -> Result<Matrix> {
        check_len("lift_batch state rows", states.rows(), self.state_dim())?;
        let mut out = Matrix::zeros(self.lifted_dim(), states.cols());
        for j in 0..states.cols() {
            out.set_column(j, &self.lift(&states.column(j))?)?;
        }
        Ok(out)
    }

    /// Refits `A`, `B`, `C` on `batch` under the current lifting parameters.
    pub fn refit(&mut self, batch: &DataBatch, tol: f64) -> Result<LinearMaps> {
        let g = self.lift_batch(&batch.states)?;
        let g_next = self.lift_batch(&batch.next_states)?;
        let maps = fit_linear_maps_or_ridge(&g, &g_next, &batch.inputs, &batch.states, tol)?;
        self.set_maps(maps.clone())?;
        Ok(maps)
    }

    /// `C (A g(x) + B u)`
    pub fn predict(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("predict input", u.len(), self.input_dim())?;
        let mut z = self.a.mul_vec(&self.lift(x)?);
        for (zi, bu) in z.iter_mut().zip(self.b.mul_vec(u)) {
            *zi += bu;
        }
        Ok(self.c.mul_vec(&z))
    }

    /// `C B`, the sensitivity of the prediction to the input.
    pub fn input_sensitivity(&self) -> Matrix {
        self.c.matmul(&self.b)
    }

    /// Iterates [`KoopmanModel::predict`] from `x0` through `inputs`.
    pub fn rollout(&self, x0: &[f64], inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(inputs.len());
        let mut x = x0.to_vec();
        for (step, u) in inputs.iter().enumerate() {
            x = self.predict(&x, u)?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::DivergedRollout { step });
            }
            out.push(x.clone());
        }
        Ok(out)
    }

    fn check_k(&self, k: &Matrix, batch: &DataBatch) -> Result<()> {
        let (r, m, n) = (self.lifted_dim(), self.input_dim(), self.state_dim());
        if k.shape() != (r + n, r + m) {
            return Err(Error::invalid(format!(
                "K is {:?}, expected {:?}",
                k.shape(),
                (r + n, r + m)
            )));
        }
        check_len("batch state rows", batch.state_dim(), n)?;
        check_len("batch input rows", batch.input_dim(), m)
    }

    /// Residual column `[ḡ; x] − K [g; u]` together with the two lifts.
    fn residual(&self, k: &Matrix, batch: &DataBatch, j: usize) -> Result<Residual> {
        let x = batch.states.column(j);
        let x_next = batch.next_states.column(j);
        let g = self.lift(&x)?;
        let g_next = self.lift(&x_next)?;
        let mut stacked_in = g;
        stacked_in.extend(batch.inputs.column(j));
        let mut target = g_next;
        target.extend_from_slice(&x);
        let pred = k.mul_vec(&stacked_in);
        let delta = target.iter().zip(&pred).map(|(t, p)| t - p).collect();
        Ok(Residual { x, x_next, delta })
    }

    /// Reduced loss `(1/N) ‖[Ḡ; X] − K [G; U]‖²_F` with `G`, `Ḡ` lifted
    /// under the current parameters and `K` held fixed.
    pub fn loss_l1(&self, k: &Matrix, batch: &DataBatch) -> Result<f64> {
        self.check_k(k, batch)?;
        let n = batch.len();
        if n == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let mut total = 0.0;
        for j in 0..n {
            let d = self.residual(k, batch, j)?.delta;
            total += d.iter().map(|v| v * v).sum::<f64>();
        }
        Ok(total / n as f64)
    }

    /// Gradient of [`KoopmanModel::loss_l1`] in the lifting parameters.
    pub fn grad_l1(&self, k: &Matrix, batch: &DataBatch) -> Result<Vec<f64>> {
        Ok(self.loss_and_grad_l1(k, batch)?.1)
    }

    pub fn loss_and_grad_l1(&self, k: &Matrix, batch: &DataBatch) -> Result<(f64, Vec<f64>)> {
        self.check_k(k, batch)?;
        let n = batch.len();
        if n == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let r = self.lifted_dim();
        let r_net = self.lift_spec.output_width();
        let scale = 2.0 / n as f64;
        // [∂δ/∂g_k] = −K[:, :r]; the successor enters through the top block only.
        let k_lift = k.block(0, 0, k.rows(), r);
        let mut grad = vec![0.0; self.theta.len()];
        let mut loss = 0.0;
        for j in 0..n {
            let res = self.residual(k, batch, j)?;
            loss += res.delta.iter().map(|v| v * v).sum::<f64>();
            let top = &res.delta[..r_net];
            self.lift_spec
                .vjp_accumulate(&self.theta, &res.x_next, top, scale, &mut grad)?;
            let back = k_lift.tr_mul_vec(&res.delta);
            self.lift_spec
                .vjp_accumulate(&self.theta, &res.x, &back[..r_net], -scale, &mut grad)?;
        }
        Ok((loss / n as f64, grad))
    }

    /// Takes one plain gradient step on the lifting parameters.
    pub fn step_lift(&mut self, grad: &[f64], step: f64) -> Result<()> {
        check_len("lifting gradient", grad.len(), self.theta.len())?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericalDivergence("L1 (lifting) gradient".into()));
        }
        axpy(-step, grad, self.theta.as_mut_slice());
        Ok(())
    }

    /// Writes the network checkpoint followed by `A`, `B`, `C` and the
    /// augmentation flag.
    pub fn write_checkpoint(&self, w: &mut impl Write) -> Result<()> {
        neural::write_checkpoint(w, &self.lift_spec, &self.theta)?;
        writeln!(w, "koopman augment_state={}", self.augment_state)?;
        write_matrix(w, &self.a)?;
        write_matrix(w, &self.b)?;
        write_matrix(w, &self.c)
    }

    pub fn read_checkpoint(r: &mut impl BufRead) -> Result<Self> {
        let (spec, theta) = neural::read_checkpoint(r)?;
        let mut line = String::new();
        r.read_line(&mut line)?;
        let augment = match line.trim_end() {
            "koopman augment_state=true" => true,
            "koopman augment_state=false" => false,
            other => return Err(Error::invalid(format!("bad Koopman header {other:?}"))),
        };
        let a = read_matrix(r)?;
        let b = read_matrix(r)?;
        let c = read_matrix(r)?;
        let mut model = KoopmanModel::new(spec, theta, augment, b.cols())?;
        model.set_maps(LinearMaps {
            a,
            b,
            c,
            damped: false,
        })?;
        Ok(model)
    }
}

struct Residual {
    x: Vec<f64>,
    x_next: Vec<f64>,
    delta: Vec<f64>,
}

/// `‖Ḡ − A G − B U‖²_F`
pub fn dynamics_residual(a: &Matrix, b: &Matrix, g: &Matrix, g_next: &Matrix, u: &Matrix) -> f64 {
    g_next.sub(&a.matmul(g)).sub(&b.matmul(u)).frobenius_norm().powi(2)
}

/// `‖X − C G‖²_F`
pub fn readout_residual(c: &Matrix, g: &Matrix, x: &Matrix) -> f64 {
    x.sub(&c.matmul(g)).frobenius_norm().powi(2)
}

/// Matrix block: `matrix rows=R cols=C` header line, then little-endian `f64`.
pub fn write_matrix(w: &mut impl Write, m: &Matrix) -> Result<()> {
    writeln!(w, "matrix rows={} cols={}", m.rows(), m.cols())?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_matrix(r: &mut impl BufRead) -> Result<Matrix> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let bad = || Error::invalid(format!("bad matrix header {:?}", line.trim_end()));
    let rest = line.trim_end().strip_prefix("matrix ").ok_or_else(bad)?;
    let mut dims = rest.split(' ').map(|f| f.split_once('='));
    let rows = match dims.next() {
        Some(Some(("rows", v))) => v.parse::<usize>().map_err(|_| bad())?,
        _ => return Err(bad()),
    };
    let cols = match dims.next() {
        Some(Some(("cols", v))) => v.parse::<usize>().map_err(|_| bad())?,
        _ => return Err(bad()),
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut buf = [0u8; 8];
    for _ in 0..rows * cols {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Matrix::from_vec(rows, cols, data)
}

/// Largest Euclidean one-step prediction error over the batch.
pub fn max_one_step_error(model: &KoopmanModel, batch: &DataBatch) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for j in 0..batch.len() {
        let pred = model.predict(&batch.states.column(j), &batch.inputs.column(j))?;
        let truth = batch.next_states.column(j);
        let e: Vec<f64> = pred.iter().zip(&truth).map(|(p, t)| p - t).collect();
        worst = worst.max(norm(&e));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::OutputActivation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_model(n: usize, m: usize) -> KoopmanModel {
        let spec = MlpSpec::tanh(vec![n, n], OutputActivation::Identity).unwrap();
        let mut theta = spec.zero_params();
        for i in 0..n {
            theta.0[i * n + i] = 1.0;
        }
        KoopmanModel::new(spec, theta, false, m).unwrap()
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_lift_returns_states() {
        let model = identity_model(2, 1);
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5], [3.0, 0.0, 4.0]]);
        assert_eq!(model.lift_batch(&x).unwrap(), x);
        let one = Matrix::from_rows(&[[0.25], [-0.5]]);
        assert_eq!(model.lift_batch(&one).unwrap().column(0), model.lift(&[0.25, -0.5]).unwrap());
        assert!(model.lift_batch(&Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn lift_batch_matches_columnwise_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = MlpSpec::tanh(vec![3, 10, 6], OutputActivation::Identity).unwrap();
        let model = KoopmanModel::new(spec.clone(), spec.init_params(3), false, 1).unwrap();
        let x = random_matrix(3, 9, &mut rng);
        let g = model.lift_batch(&x).unwrap();
        for j in 0..9 {
            assert_eq!(g.column(j), spec.forward(&model.theta, &x.column(j)).unwrap());
        }
    }

    #[test]
    fn scalar_fit_recovers_a_and_b() {
        let g = Matrix::from_rows(&[[1.0, 1.0]]);
        let u = Matrix::from_rows(&[[1.0, 2.0]]);
        let g_next = g.scale(0.5).add(&u.scale(0.2));
        let maps = fit_linear_maps(&g, &g_next, &u, &g, 1e-10).unwrap();
        assert!((maps.a[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((maps.b[(0, 0)] - 0.2).abs() < 1e-14);
        assert!((maps.c[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn identity_dynamics_recovered_with_zero_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_matrix(3, 12, &mut rng);
        let u = random_matrix(2, 12, &mut rng);
        let maps = fit_linear_maps(&g, &g, &u, &g, 1e-10).unwrap();
        assert!(maps.a.sub(&Matrix::identity(3)).max_abs() < 1e-12);
        assert!(maps.b.max_abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        let g = Matrix::from_rows(&[[1.0]]);
        let u = Matrix::from_rows(&[[1.0]]);
        assert!(matches!(
            fit_linear_maps(&g, &g, &u, &g, 1e-10),
            Err(Error::BatchTooSmall { samples: 1, required: 2 })
        ));
        // constant lifted states: [G; U] loses rank
        let g = Matrix::from_rows(&[[1.0, 1.0, 1.0]]);
        let u = Matrix::from_rows(&[[2.0, 2.0, 2.0]]);
        assert!(matches!(
            fit_linear_maps(&g, &g, &u, &g, 1e-10),
            Err(Error::RankDeficient { which: "[G; U]", .. })
        ));
        let maps = fit_linear_maps_or_ridge(&g, &g, &u, &g, 1e-10).unwrap();
        assert!(maps.damped && maps.a.is_finite());
    }

    #[test]
    fn near_deficient_batch_uses_ridge() {
        let g = Matrix::from_rows(&[[1.0, 1.0, 1.0, 1.0]]);
        let u = Matrix::from_rows(&[[1.0, 1.0 + 1e-9, 1.0 - 1e-9, 1.0]]);
        let maps = fit_linear_maps(&g, &g, &u, &g, 1e-10).unwrap();
        assert!(maps.damped);
        let maps = fit_linear_maps(&g, &g, &Matrix::from_rows(&[[0.0, 1.0, 2.0, 3.0]]), &g, 1e-10).unwrap();
        assert!(!maps.damped);
    }

    #[test]
    fn frozen_predictor_is_identity() {
        let mut model = identity_model(2, 1);
        model
            .set_maps(LinearMaps {
                a: Matrix::identity(2),
                b: Matrix::zeros(2, 1),
                c: Matrix::identity(2),
                damped: false,
            })
            .unwrap();
        assert_eq!(model.predict(&[0.3, -1.2], &[5.0]).unwrap(), vec![0.3, -1.2]);
        assert!(model.predict(&[0.3, -1.2], &[5.0, 1.0]).is_err());
        assert!(model.rollout(&[1.0, 1.0], &[]).unwrap().is_empty());
        let one = model.rollout(&[1.0, 2.0], &[vec![0.0]]).unwrap();
        assert_eq!(one, vec![model.predict(&[1.0, 2.0], &[0.0]).unwrap()]);
    }

    #[test]
    fn prediction_is_affine_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = MlpSpec::tanh(vec![2, 8, 5], OutputActivation::Identity).unwrap();
        let mut model = KoopmanModel::new(spec.clone(), spec.init_params(1), false, 2).unwrap();
        model
            .set_maps(LinearMaps {
                a: random_matrix(5, 5, &mut rng),
                b: random_matrix(5, 2, &mut rng),
                c: random_matrix(2, 5, &mut rng),
                damped: false,
            })
            .unwrap();
        let cb = model.input_sensitivity();
        for _ in 0..10 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let u1 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let u2 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let d: Vec<f64> = model
                .predict(&x, &u1)
                .unwrap()
                .iter()
                .zip(model.predict(&x, &u2).unwrap())
                .map(|(a, b)| a - b)
                .collect();
            let expect = cb.mul_vec(&[u1[0] - u2[0], u1[1] - u2[1]]);
            for (a, b) in d.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rollout_reports_divergence_step() {
        let mut model = identity_model(1, 1);
        model
            .set_maps(LinearMaps {
                a: Matrix::from_rows(&[[1e200]]),
                b: Matrix::zeros(1, 1),
                c: Matrix::identity(1),
                damped: false,
            })
            .unwrap();
        let inputs = vec![vec![0.0]; 5];
        assert!(matches!(
            model.rollout(&[1.0], &inputs),
            Err(Error::DivergedRollout { step: 1 })
        ));
    }

    #[test]
    fn loss_with_zero_k_is_sum_of_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = MlpSpec::tanh(vec![2, 6, 4], OutputActivation::Identity).unwrap();
        let model = KoopmanModel::new(spec.clone(), spec.init_params(2), false, 1).unwrap();
        let x = random_matrix(2, 7, &mut rng);
        let xn = random_matrix(2, 7, &mut rng);
        let batch = DataBatch::new(x.clone(), xn.clone(), random_matrix(1, 7, &mut rng), vec![0.0; 7]).unwrap();
        let k = Matrix::zeros(6, 5);
        let g_next = model.lift_batch(&xn).unwrap();
        let expect = (g_next.frobenius_norm().powi(2) + x.frobenius_norm().powi(2)) / 7.0;
        assert!((model.loss_l1(&k, &batch).unwrap() - expect).abs() < 1e-12);
        assert!(model.loss_l1(&Matrix::zeros(5, 5), &batch).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = MlpSpec::tanh(vec![2, 5, 3], OutputActivation::Identity).unwrap();
        let mut model = KoopmanModel::new(spec.clone(), spec.init_params(4), true, 1).unwrap();
        model
            .set_maps(LinearMaps {
                a: random_matrix(5, 5, &mut rng),
                b: random_matrix(5, 1, &mut rng),
                c: random_matrix(2, 5, &mut rng),
                damped: false,
            })
            .unwrap();
        let mut buf = Vec::new();
        model.write_checkpoint(&mut buf).unwrap();
        let back = KoopmanModel::read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, model);
    }
}
