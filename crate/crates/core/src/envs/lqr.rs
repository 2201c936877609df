use crate::error::{Error, Result};
use crate::numerics::{inverse, Matrix};

/// Optimal discounted LQR gain (`u = −K x`) and cost-to-go matrix `P`.
#[derive(Clone, Debug, PartialEq)]
pub struct LqrSolution {
    pub gain: Matrix,
    pub value: Matrix,
    pub iterations: usize,
}

/// Iterates the discounted Riccati recursion
/// `P ← Q + γA'PA − γ²A'PB (R + γB'PB)⁻¹ B'PA` from `P = Q`
/// until `‖ΔP‖_F < 1e-12`, then `K = γ (R + γB'PB)⁻¹ B'PA`.
pub fn lqr_oracle(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, gamma: f64, iters: usize) -> Result<LqrSolution> {
    let n = a.rows();
    let m = b.cols();
    if a.cols() != n || b.rows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::invalid("LQR matrices have inconsistent shapes"));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid(format!("discount must lie in (0, 1], got {gamma}")));
    }
    let at = a.transpose();
    let bt = b.transpose();
    let gain_of = |p: &Matrix| -> Result<(Matrix, Matrix)> {
        let s = r.add(&bt.matmul(p).matmul(b).scale(gamma));
        let bpa = bt.matmul(p).matmul(a);
        let k = inverse(&s)?.matmul(&bpa).scale(gamma);
        Ok((k, bpa))
    };

    let mut p = q.clone();
    for it in 1..=iters {
        let (k, bpa) = gain_of(&p)?;
        // γ²A'PB S⁻¹ B'PA = γ (B'PA)' K
        let next = q
            .add(&at.matmul(&p).matmul(a).scale(gamma))
            .sub(&bpa.transpose().matmul(&k).scale(gamma));
        if !next.is_finite() {
            return Err(Error::OracleDiverged(it));
        }
        let delta = next.sub(&p).frobenius_norm();
        p = next;
        if delta < 1e-12 {
            let (gain, _) = gain_of(&p)?;
            return Ok(LqrSolution {
                gain,
                value: p,
                iterations: it,
            });
        }
    }
    Err(Error::OracleDiverged(iters))
}
