//! Quadratic joint-space reaching cost.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arm::{Action, State};
use crate::error::{check_dim, Error, Result};

/// `½q_pos‖θ−θ*‖² + ½q_vel‖θ̇‖² + ½r_ctrl‖τ‖²` per stage; the terminal stage
/// scales the state part by `terminal_scale` and has no control term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachingCost {
    pub target_theta: DVector<f64>,
    pub q_pos: f64,
    pub q_vel: f64,
    pub r_ctrl: f64,
    pub terminal_scale: f64,
}

/// Second-order expansion of the cost about `(x, u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostExpansion {
    pub q0: f64,
    pub q_x: DVector<f64>,
    pub q_xx: DMatrix<f64>,
    pub r_u: DVector<f64>,
    pub r_uu: DMatrix<f64>,
    /// Cross term, `n_x × n_u`.
    pub p_xu: DMatrix<f64>,
}

impl CostExpansion {
    /// Evaluate the quadratic model at a deviation `(δx, δu)`.
    pub fn evaluate(&self, dx: &DVector<f64>, du: &DVector<f64>) -> f64 {
        self.q0
            + self.q_x.dot(dx)
            + self.r_u.dot(du)
            + 0.5 * dx.dot(&(&self.q_xx * dx))
            + dx.dot(&(&self.p_xu * du))
            + 0.5 * du.dot(&(&self.r_uu * du))
    }
}

impl ReachingCost {
    /// Joint-space target with the default weights.
    pub fn new(target_theta: DVector<f64>) -> Self {
        Self { target_theta, q_pos: 5.0, q_vel: 0.1, r_ctrl: 1e-7, terminal_scale: 10.0 }
    }

    pub fn n_joints(&self) -> usize {
        self.target_theta.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("q_pos", self.q_pos),
            ("q_vel", self.q_vel),
            ("terminal_scale", self.terminal_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.r_ctrl.is_finite() && self.r_ctrl > 0.0) {
            return Err(Error::InvalidInput(format!("r_ctrl must be > 0, got {}", self.r_ctrl)));
        }
        if self.target_theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("target_theta must be finite".into()));
        }
        Ok(())
    }

    fn check(&self, x: &DVector<f64>, u: Option<&DVector<f64>>) -> Result<()> {
        let n = self.n_joints();
        check_dim("state", 2 * n, x.len())?;
        if let Some(u) = u {
            check_dim("control", n, u.len())?;
        }
        Ok(())
    }

    fn state_part(&self, x: &DVector<f64>) -> f64 {
        let n = self.n_joints();
        let pos: f64 = (0..n).map(|i| (x[i] - self.target_theta[i]).powi(2)).sum();
        let vel: f64 = (0..n).map(|i| x[n + i].powi(2)).sum();
        0.5 * self.q_pos * pos + 0.5 * self.q_vel * vel
    }

    pub fn stage_cost(&self, s: &State, a: &Action) -> Result<f64> {
        self.stage_cost_vec(&s.to_vector(), &a.tau)
    }

    pub fn terminal_cost(&self, s: &State) -> Result<f64> {
        self.terminal_cost_vec(&s.to_vector())
    }

    pub fn stage_cost_vec(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        self.check(x, Some(u))?;
        Ok(self.state_part(x) + 0.5 * self.r_ctrl * u.norm_squared())
    }

    pub fn terminal_cost_vec(&self, x: &DVector<f64>) -> Result<f64> {
        self.check(x, None)?;
        Ok(self.terminal_scale * self.state_part(x))
    }

    /// Exact expansion (the cost is already quadratic). `u = None` gives the
    /// terminal expansion with zero control terms.
    pub fn expand_vec(&self, x: &DVector<f64>, u: Option<&DVector<f64>>) -> Result<CostExpansion> {
        self.check(x, u)?;
        let n = self.n_joints();
        let scale = if u.is_none() { self.terminal_scale } else { 1.0 };
        let mut q_x = DVector::zeros(2 * n);
        let mut q_xx = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            q_x[i] = scale * self.q_pos * (x[i] - self.target_theta[i]);
            q_x[n + i] = scale * self.q_vel * x[n + i];
            q_xx[(i, i)] = scale * self.q_pos;
            q_xx[(n + i, n + i)] = scale * self.q_vel;
        }
        let (q0, r_u, r_uu) = match u {
            Some(u) => (
                self.stage_cost_vec(x, u)?,
                u * self.r_ctrl,
                DMatrix::identity(n, n) * self.r_ctrl,
            ),
            None => (self.terminal_cost_vec(x)?, DVector::zeros(n), DMatrix::zeros(n, n)),
        };
        Ok(CostExpansion { q0, q_x, q_xx, r_u, r_uu, p_xu: DMatrix::zeros(2 * n, n) })
    }

    pub fn expand(&self, s: &State, a: &Action, is_terminal: bool) -> Result<CostExpansion> {
        let x = s.to_vector();
        if is_terminal {
            self.expand_vec(&x, None)
        } else {
            self.expand_vec(&x, Some(&a.tau))
        }
    }

    /// `Σ_t stage(x_t, u_t) + terminal(x_T)`.
    pub fn total_cost(&self, states: &[DVector<f64>], controls: &[DVector<f64>]) -> Result<f64> {
        check_dim("trajectory states", controls.len() + 1, states.len())?;
        let mut total = 0.0;
        for (x, u) in states.iter().zip(controls) {
            total += self.stage_cost_vec(x, u)?;
        }
        Ok(total + self.terminal_cost_vec(states.last().expect("non-empty"))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cost() -> ReachingCost {
        ReachingCost::new(DVector::from_vec(vec![0.4, -0.7]))
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn zero_at_target() {
        let c = cost();
        let s = State::at_rest(&[0.4, -0.7]);
        assert_eq!(c.stage_cost(&s, &Action::zeros(2)).unwrap(), 0.0);
        let e = c.expand(&s, &Action::zeros(2), false).unwrap();
        assert!(e.q_x.iter().all(|v| *v == 0.0) && e.r_u.iter().all(|v| *v == 0.0));
        assert_eq!(e.q_xx[(0, 0)], 5.0);
        assert_eq!(e.q_xx[(2, 2)], 0.1);
        let t = c.expand(&s, &Action::zeros(2), true).unwrap();
        assert_eq!(t.q_xx[(0, 0)], 50.0);
        assert_eq!(t.r_uu, DMatrix::zeros(2, 2));
    }

    #[test]
    fn position_weight_example() {
        let c = ReachingCost::new(DVector::zeros(2));
        let s = State::at_rest(&[1.0, 0.0]);
        assert_eq!(c.stage_cost(&s, &Action::zeros(2)).unwrap(), 2.5);
    }

    #[test]
    fn control_term_is_quadratic() {
        let c = ReachingCost::new(DVector::zeros(2));
        let s = State::zeros(2);
        let a = c.stage_cost(&s, &Action::from_slice(&[0.3, 0.1])).unwrap();
        let b = c.stage_cost(&s, &Action::from_slice(&[0.6, 0.2])).unwrap();
        assert!((b - 4.0 * a).abs() < 1e-20);
    }

    #[test]
    fn expansion_is_exact() {
        let c = cost();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = rand_vec(&mut rng, 4);
            let u = rand_vec(&mut rng, 2);
            let dx = rand_vec(&mut rng, 4);
            let du = rand_vec(&mut rng, 2);
            let e = c.expand_vec(&x, Some(&u)).unwrap();
            let direct = c.stage_cost_vec(&(&x + &dx), &(&u + &du)).unwrap();
            assert!((direct - e.evaluate(&dx, &du)).abs() < 1e-12);
            let et = c.expand_vec(&x, None).unwrap();
            let direct = c.terminal_cost_vec(&(&x + &dx)).unwrap();
            assert!((direct - et.evaluate(&dx, &DVector::zeros(2))).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let c = cost();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..20 {
            let x = rand_vec(&mut rng, 4);
            let u = rand_vec(&mut rng, 2);
            let e = c.expand_vec(&x, Some(&u)).unwrap();
            for i in 0..4 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (c.stage_cost_vec(&xp, &u).unwrap() - c.stage_cost_vec(&xm, &u).unwrap())
                    / (2.0 * h);
                assert!((fd - e.q_x[i]).abs() <= 1e-6 * e.q_x[i].abs().max(1e-3));
            }
            // r_ctrl is tiny, so check the control gradient on a rescaled cost
            let mut c2 = c.clone();
            c2.r_ctrl = 0.7;
            let e2 = c2.expand_vec(&x, Some(&u)).unwrap();
            for i in 0..2 {
                let mut up = u.clone();
                let mut um = u.clone();
                up[i] += h;
                um[i] -= h;
                let fd = (c2.stage_cost_vec(&x, &up).unwrap() - c2.stage_cost_vec(&x, &um).unwrap())
                    / (2.0 * h);
                assert!((fd - e2.r_u[i]).abs() <= 1e-6 * e2.r_u[i].abs().max(1e-3));
            }
        }
    }

    #[test]
    fn total_cost_sums_stages() {
        let c = cost();
        let x0 = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let x1 = DVector::from_vec(vec![0.0, -0.1, 0.5, 0.0]);
        let u0 = DVector::from_vec(vec![0.5, -0.5]);
        let expected =
            c.stage_cost_vec(&x0, &u0).unwrap() + c.terminal_cost_vec(&x1).unwrap();
        assert_eq!(c.total_cost(&[x0.clone(), x1], &[u0]).unwrap(), expected);
        assert!(c.total_cost(&[x0], &[DVector::zeros(2)]).is_err());
    }

    #[test]
    fn validation() {
        let mut c = cost();
        c.r_ctrl = 0.0;
        assert!(c.validate().is_err());
        let mut c = cost();
        c.q_pos = -1.0;
        assert!(c.validate().is_err());
    }
}
