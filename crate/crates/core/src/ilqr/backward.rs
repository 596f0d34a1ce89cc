use nalgebra::{DMatrix, DVector};

use super::{LinearizedStep, ValueExpansion};
use crate::cost::CostExpansion;
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug)]
pub struct BackwardPass {
    /// Feedforward terms `k_t`.
    pub k: Vec<DVector<f64>>,
    /// Feedback gains `K_t`.
    pub gains: Vec<DMatrix<f64>>,
    /// Value expansions for `t = 0..=T`.
    pub values: Vec<ValueExpansion>,
    /// Unregularised control Hessians `H_t`.
    pub hessians: Vec<DMatrix<f64>>,
    /// `−Σ_t g_tᵀk_t`.
    pub expected_improvement: f64,
}

/// Risk-sensitive Riccati recursion.
///
/// `costs` holds one stage expansion per step plus the terminal expansion.
/// With `W = CΣ_{t+1}Cᵀ` and the next-step value `(S, s)`, the σ-terms enter
/// through `M = S + σSᵀWS` and `m = s + σSᵀWs`:
///
/// ```text
/// H = R + BᵀMB      g = r + Bᵀm      G = Pᵀ + BᵀMA
/// k = −(H + λI)⁻¹g  K = −(H + λI)⁻¹G
/// s_t = q + Aᵀm + KᵀHk + Kᵀg + Gᵀk
/// S_t = Q + AᵀMA + KᵀHK + GᵀK + KᵀG
/// ```
///
/// Fails with [`Error::NotPositiveDefinite`] when `H + λI` cannot be
/// factorised; callers raise λ and retry.
pub fn backward_pass(
    steps: &[LinearizedStep],
    costs: &[CostExpansion],
    sigma: f64,
    lambda: f64,
) -> Result<BackwardPass> {
    let horizon = steps.len();
    check_dim("cost expansions", horizon + 1, costs.len())?;
    let terminal = &costs[horizon];
    let nx = terminal.q_x.len();
    let mut s_mat = terminal.q_xx.clone();
    let mut s_vec = terminal.q_x.clone();
    let mut s0 = terminal.q0;

    let mut k_seq = Vec::with_capacity(horizon);
    let mut gain_seq = Vec::with_capacity(horizon);
    let mut hessians = Vec::with_capacity(horizon);
    let mut values = Vec::with_capacity(horizon + 1);
    values.push(ValueExpansion { s_mat: s_mat.clone(), s_vec: s_vec.clone(), s0 });
    let mut expected_improvement = 0.0;

    for t in (0..horizon).rev() {
        let step = &steps[t];
        let cost = &costs[t];
        check_dim("A rows", nx, step.a.nrows())?;
        check_dim("B rows", nx, step.b.nrows())?;
        let nu = step.b.ncols();

        let w = &step.c * &step.sigma_next * step.c.transpose();
        let sw = s_mat.transpose() * &w;
        let m_mat = &s_mat + (&sw * &s_mat) * sigma;
        let m_vec = &s_vec + (&sw * &s_vec) * sigma;

        let bt = step.b.transpose();
        let h = &cost.r_uu + &bt * &m_mat * &step.b;
        let g = &cost.r_u + &bt * &m_vec;
        let big_g = cost.p_xu.transpose() + &bt * &m_mat * &step.a;

        let mut h_reg = &h + DMatrix::identity(nu, nu) * lambda;
        h_reg = (&h_reg + h_reg.transpose()) * 0.5;
        let chol = h_reg.cholesky().ok_or(Error::NotPositiveDefinite { step: t })?;
        let k = -chol.solve(&g);
        let gain = -chol.solve(&big_g);
        if k.iter().chain(gain.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite { step: t });
        }

        let at = step.a.transpose();
        let gain_t = gain.transpose();
        let q_x = &cost.q_x + &at * &m_vec;
        let q_xx = &cost.q_xx + &at * &m_mat * &step.a;

        let new_s_vec = q_x + &gain_t * (&h * &k) + &gain_t * &g + big_g.transpose() * &k;
        let gtk = big_g.transpose() * &gain;
        let new_s_mat = q_xx + &gain_t * &h * &gain + &gtk + gtk.transpose();
        let new_s_mat = (&new_s_mat + new_s_mat.transpose()) * 0.5;
        debug_assert!(new_s_mat == new_s_mat.transpose());

        let hk = &h * &k;
        s0 = cost.q0
            + s0
            + 0.5 * (&s_mat * &w).trace()
            + 0.5 * sigma * s_vec.dot(&(&w * &s_vec))
            + k.dot(&g)
            + 0.5 * k.dot(&hk);
        expected_improvement -= g.dot(&k);

        s_mat = new_s_mat;
        s_vec = new_s_vec;
        values.push(ValueExpansion { s_mat: s_mat.clone(), s_vec: s_vec.clone(), s0 });
        k_seq.push(k);
        gain_seq.push(gain);
        hessians.push(h);
    }
    k_seq.reverse();
    gain_seq.reverse();
    hessians.reverse();
    values.reverse();
    Ok(BackwardPass { k: k_seq, gains: gain_seq, values, hessians, expected_improvement })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_step(v: f64) -> LinearizedStep {
        let one = DMatrix::from_element(1, 1, 1.0);
        LinearizedStep { a: one.clone(), b: one.clone(), c: one, sigma_next: DMatrix::from_element(1, 1, v) }
    }

    fn scalar_cost(terminal: bool) -> CostExpansion {
        CostExpansion {
            q0: 0.0,
            q_x: DVector::from_element(1, 1.0),
            q_xx: DMatrix::from_element(1, 1, 1.0),
            r_u: DVector::from_element(1, if terminal { 0.0 } else { 1.0 }),
            r_uu: DMatrix::from_element(1, 1, if terminal { 0.0 } else { 1.0 }),
            p_xu: DMatrix::zeros(1, 1),
        }
    }

    #[test]
    fn scalar_probe_hessian() {
        let costs = [scalar_cost(false), scalar_cost(true)];
        let h = |sigma| backward_pass(&[scalar_step(1.0)], &costs, sigma, 0.0).unwrap().hessians[0][(0, 0)];
        assert_eq!(h(0.0), 2.0);
        assert_eq!(h(-0.5), 1.5);
        assert!(h(-0.05) < h(0.0) && h(0.0) < h(0.05));
    }

    #[test]
    fn feedforward_grows_as_sigma_decreases() {
        let costs = [scalar_cost(false), scalar_cost(true)];
        let k = |sigma: f64| backward_pass(&[scalar_step(1.0)], &costs, sigma, 0.0).unwrap().k[0][0].abs();
        assert!(k(-0.5) > k(0.0));
    }

    #[test]
    fn zero_covariance_ignores_sigma() {
        let costs = [scalar_cost(false), scalar_cost(false), scalar_cost(true)];
        let steps = [scalar_step(0.0), scalar_step(0.0)];
        let base = backward_pass(&steps, &costs, 0.0, 0.0).unwrap();
        for sigma in [-0.5, 0.05] {
            let other = backward_pass(&steps, &costs, sigma, 0.0).unwrap();
            assert_eq!(base.k, other.k);
            assert_eq!(base.gains, other.gains);
            assert_eq!(base.values, other.values);
        }
    }

    #[test]
    fn non_pd_hessian_is_reported() {
        let costs = [scalar_cost(false), scalar_cost(true)];
        // H = 2 + σ·1 is negative for σ = −3
        let err = backward_pass(&[scalar_step(1.0)], &costs, -3.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { step: 0 }));
        assert!(backward_pass(&[scalar_step(1.0)], &costs, -3.0, 10.0).is_ok());
    }

    #[test]
    fn misaligned_inputs_rejected() {
        assert!(backward_pass(&[scalar_step(1.0)], &[scalar_cost(true)], 0.0, 0.0).is_err());
    }
}
