//! Randomised invariants of the gradients, the least-squares fits and the
//! policy head.

use koopman_pg::diagnostics::{finite_diff_grad, relative_error, DEFAULT_FD_STEP};
use koopman_pg::envs::CostOracle;
use koopman_pg::koopman::{dynamics_residual, fit_linear_maps, readout_residual};
use koopman_pg::neural::{MlpParams, MlpSpec, OutputActivation};
use koopman_pg::numerics::{pinv, DEFAULT_RANK_TOL};
use koopman_pg::{Actor, Critic, DataBatch, KoopmanModel, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Quadratic {
    r: f64,
}

impl CostOracle for Quadratic {
    fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>() + self.r * u.iter().map(|v| v * v).sum::<f64>()
    }
    fn cost_grad_u(&self, _x: &[f64], u: &[f64]) -> Vec<f64> {
        u.iter().map(|v| 2.0 * self.r * v).collect()
    }
}

fn gauss(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn batch(rng: &mut ChaCha8Rng, n: usize, m: usize, big_n: usize) -> DataBatch {
    let x = gauss(rng, n, big_n);
    let u = gauss(rng, m, big_n);
    let mut next = Matrix::zeros(n, big_n);
    for j in 0..big_n {
        let col: Vec<f64> = x
            .column(j)
            .iter()
            .enumerate()
            .map(|(i, v)| (0.9 * v).sin() + 0.2 * u.column(j)[i % m])
            .collect();
        next.set_column(j, &col).unwrap();
    }
    let costs = (0..big_n).map(|_| rng.gen_range(0.0..2.0)).collect();
    DataBatch::new(x, next, u, costs).unwrap()
}

fn with_theta<T: Clone>(base: &T, theta: &[f64], slot: impl Fn(&mut T) -> &mut MlpParams) -> T {
    let mut t = base.clone();
    *slot(&mut t) = MlpParams(theta.to_vec());
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn vjp_matches_finite_differences(
        seed in any::<u64>(),
        input in 1usize..5,
        hidden in prop::collection::vec(1usize..9, 0..3),
        output in 1usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = MlpSpec::with_hidden(input, &hidden, output, OutputActivation::ScaledTanh { bound: 2.0 }).unwrap();
        let params = spec.init_params(seed);
        let x: Vec<f64> = (0..input).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let cot: Vec<f64> = (0..output).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (gp, gx) = spec.vjp(&params, &x, &cot).unwrap();
        let dot = |y: Vec<f64>| y.iter().zip(&cot).map(|(a, b)| a * b).sum::<f64>();
        let fd_p = finite_diff_grad(|t| dot(spec.forward(&MlpParams(t.to_vec()), &x).unwrap()), params.as_slice(), DEFAULT_FD_STEP).unwrap();
        let fd_x = finite_diff_grad(|z| dot(spec.forward(&params, z).unwrap()), &x, DEFAULT_FD_STEP).unwrap();
        prop_assert!(relative_error(&gp, &fd_p) < 1e-5);
        prop_assert!(relative_error(&gx, &fd_x) < 1e-5);
    }

    #[test]
    fn lifting_td_and_policy_gradients_match_finite_differences(
        seed in any::<u64>(),
        n in 1usize..5,
        m in 1usize..3,
        augment in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r_net = if augment { rng.gen_range(1..=8 - n) } else { rng.gen_range(1..=8) };
        let r = r_net + if augment { n } else { 0 };
        // Overdetermined, so the fit does not interpolate and L1 stays away from 0.
        let big_n = rng.gen_range(2 * (r + m)..=32);
        let data = batch(&mut rng, n, m, big_n);

        let lift = MlpSpec::with_hidden(n, &[5], r_net, OutputActivation::Identity).unwrap();
        let theta = lift.init_params(rng.gen());
        let mut model = KoopmanModel::new(lift, theta, augment, m).unwrap();
        model.refit(&data, 1e-10).unwrap();
        let k = model.frozen_k();
        let g = model.grad_l1(&k, &data).unwrap();
        let fd = finite_diff_grad(
            |t| with_theta(&model, t, |mm| &mut mm.theta).loss_l1(&k, &data).unwrap(),
            model.theta.as_slice(),
            DEFAULT_FD_STEP,
        ).unwrap();
        prop_assert!(relative_error(&g, &fd) < 1e-4, "L1 {}", relative_error(&g, &fd));

        let critic = Critic::init(n, &[6], rng.gen_range(0.5..1.0), rng.gen()).unwrap();
        let g = critic.grad_td(&data).unwrap();
        let fd = finite_diff_grad(
            |t| with_theta(&critic, t, |c| &mut c.theta).td_loss(&data).unwrap(),
            critic.theta.as_slice(),
            DEFAULT_FD_STEP,
        ).unwrap();
        prop_assert!(relative_error(&g, &fd) < 1e-4, "TD {}", relative_error(&g, &fd));

        let actor = Actor::init(n, &[4], vec![-2.0; m], vec![2.0; m], rng.gen()).unwrap();
        // Spread the head out so the policy is not close to zero.
        let actor = {
            let mut a = actor;
            for w in a.theta.as_mut_slice() {
                *w *= 40.0_f64.min(1.0 / w.abs().max(1e-3));
            }
            a
        };
        let cost = Quadratic { r: 0.3 };
        let g = actor.grad_l2(&critic, &model, &data, &cost).unwrap();
        let fd = finite_diff_grad(
            |t| with_theta(&actor, t, |a| &mut a.theta).loss_l2(&critic, &model, &data, &cost).unwrap(),
            actor.theta.as_slice(),
            DEFAULT_FD_STEP,
        ).unwrap();
        prop_assert!(relative_error(&g, &fd) < 1e-4, "L2 {}", relative_error(&g, &fd));
    }

    #[test]
    fn fitted_maps_are_least_squares_optimal(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m, r) = (rng.gen_range(1..4), rng.gen_range(1..3), rng.gen_range(2..7));
        let big_n = rng.gen_range(r + m + 1..=32);
        let g = gauss(&mut rng, r, big_n);
        let g_next = gauss(&mut rng, r, big_n);
        let u = gauss(&mut rng, m, big_n);
        let x = gauss(&mut rng, n, big_n);
        let maps = fit_linear_maps(&g, &g_next, &u, &x, DEFAULT_RANK_TOL).unwrap();
        let base_dyn = dynamics_residual(&maps.a, &maps.b, &g, &g_next, &u);
        let base_out = readout_residual(&maps.c, &g, &x);
        for _ in 0..100 {
            let scale = 10f64.powi(rng.gen_range(-6..0));
            let da = gauss(&mut rng, r, r);
            let db = gauss(&mut rng, r, m);
            let dc = gauss(&mut rng, n, r);
            let a = maps.a.add(&da.scale(scale));
            let b = maps.b.add(&db.scale(scale));
            let c = maps.c.add(&dc.scale(scale));
            prop_assert!(dynamics_residual(&a, &b, &g, &g_next, &u) >= base_dyn - 1e-12);
            prop_assert!(readout_residual(&c, &g, &x) >= base_out - 1e-12);
        }
    }

    #[test]
    fn pinv_satisfies_penrose_conditions(seed in any::<u64>(), rows in 1usize..7, cols in 1usize..7, rank in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rank.min(rows).min(cols);
        let a = gauss(&mut rng, rows, k).matmul(&gauss(&mut rng, k, cols));
        let p = pinv(&a, DEFAULT_RANK_TOL).unwrap();
        let tol = 1e-9 * (1.0 + a.frobenius_norm() * p.frobenius_norm()).powi(2);
        prop_assert!(a.matmul(&p).matmul(&a).sub(&a).frobenius_norm() < tol);
        prop_assert!(p.matmul(&a).matmul(&p).sub(&p).frobenius_norm() < tol);
        let ap = a.matmul(&p);
        let pa = p.matmul(&a);
        prop_assert!(ap.sub(&ap.transpose()).frobenius_norm() < tol);
        prop_assert!(pa.sub(&pa.transpose()).frobenius_norm() < tol);
    }

    #[test]
    fn actions_stay_in_the_box(seed in any::<u64>(), lo in -5.0f64..0.0, width in 0.1f64..10.0, scale in 0.0f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actor = Actor::init(3, &[8], vec![lo, lo], vec![lo + width, lo + width], seed).unwrap();
        for w in actor.theta.as_mut_slice() {
            *w *= scale;
        }
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1e3..1e3)).collect();
            for u in actor.act(&x).unwrap() {
                prop_assert!(u >= lo && u <= lo + width, "{u} outside [{lo}, {}]", lo + width);
            }
        }
    }
}

#[test]
fn exactly_linear_lifted_data_has_zero_l1() {
    // Identity lifting (no hidden layer, identity weights) on a linear system.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, m, big_n) = (2, 1, 20);
    let a0 = Matrix::from_rows(&[[0.9, 0.2], [-0.1, 0.8]]);
    let b0 = Matrix::from_rows(&[[0.0], [0.5]]);
    let x = gauss(&mut rng, n, big_n);
    let u = gauss(&mut rng, m, big_n);
    let next = a0.matmul(&x).add(&b0.matmul(&u));
    let data = DataBatch::new(x, next, u, vec![0.0; big_n]).unwrap();
    let spec = MlpSpec::with_hidden(n, &[], n, OutputActivation::Identity).unwrap();
    let theta = MlpParams(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let mut model = KoopmanModel::new(spec, theta, false, m).unwrap();
    model.refit(&data, 1e-10).unwrap();
    let l1 = model.loss_l1(&model.frozen_k(), &data).unwrap();
    assert!(l1 < 1e-10, "{l1}");
}
