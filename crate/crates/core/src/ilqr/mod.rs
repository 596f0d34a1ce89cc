//! Risk-sensitive ("curious") iLQR.
//!
//! The backward pass runs the σ-parameterised Riccati recursion in which the
//! next-state covariance `Σ_{t+1}` enters through `σ Sᵀ CΣCᵀ S` terms. With
//! `σ < 0` the optimiser is risk-seeking and is drawn towards regions where
//! the learned model is uncertain; `σ = 0` is plain iLQR.

mod backward;
mod solver;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use backward::{backward_pass, BackwardPass};
pub use solver::{
    forward_pass, linearize_trajectory, random_controls, solve, ForwardResult, IterationTrace, StopReason,
};

use crate::arm::State;
use crate::cost::ReachingCost;
use crate::error::{Error, Result};
use crate::gp::{integration_jacobian, GpModel};

/// Local model `δx⁺ = Aδx + Bδu + Cω`, `ω ~ N(0, Σ_{t+1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedStep {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub sigma_next: DMatrix<f64>,
}

/// `Ψ(δx) = ½δxᵀSδx + δxᵀs + s0`
#[derive(Clone, Debug, PartialEq)]
pub struct ValueExpansion {
    pub s_mat: DMatrix<f64>,
    pub s_vec: DVector<f64>,
    pub s0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Risk sensitivity; negative is risk-seeking.
    pub sigma: f64,
    pub horizon: usize,
    pub dt: f64,
    pub max_outer_iters: usize,
    pub line_search_alphas: Vec<f64>,
    pub lambda_init: f64,
    pub lambda_scale: f64,
    pub lambda_max: f64,
    /// Relative cost decrease below which the solver stops.
    pub convergence_tol: f64,
    /// Joint speed beyond which a model rollout counts as diverged.
    pub velocity_bound: f64,
    /// Std of the random initial torque sequence.
    pub init_control_std: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            sigma: -0.05,
            horizon: 150,
            dt: 1.0 / 240.0,
            max_outer_iters: 50,
            line_search_alphas: vec![1.0, 0.5, 0.25, 0.1, 0.05, 0.01],
            lambda_init: 1.0,
            lambda_scale: 10.0,
            lambda_max: 1000.0,
            convergence_tol: 1e-4,
            velocity_bound: 100.0,
            init_control_std: 0.01,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.horizon == 0 {
            return bad("horizon must be >= 1".into());
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !self.sigma.is_finite() {
            return bad("sigma must be finite".into());
        }
        if self.line_search_alphas.is_empty()
            || self.line_search_alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0))
        {
            return bad(format!("line_search_alphas must lie in (0, 1], got {:?}", self.line_search_alphas));
        }
        if !(self.lambda_init > 0.0 && self.lambda_init <= self.lambda_max) {
            return bad(format!(
                "need 0 < lambda_init <= lambda_max, got {} and {}",
                self.lambda_init, self.lambda_max
            ));
        }
        if !(self.lambda_scale > 1.0) {
            return bad(format!("lambda_scale must be > 1, got {}", self.lambda_scale));
        }
        if !(self.convergence_tol >= 0.0) {
            return bad(format!("convergence_tol must be >= 0, got {}", self.convergence_tol));
        }
        if !(self.velocity_bound > 0.0) {
            return bad(format!("velocity_bound must be > 0, got {}", self.velocity_bound));
        }
        if !(self.init_control_std >= 0.0) {
            return bad(format!("init_control_std must be >= 0, got {}", self.init_control_std));
        }
        Ok(())
    }
}

/// Time-varying affine policy `u_t = ū_t + K_t(x − x̄_t)` around a nominal
/// trajectory, with the feedforward terms of the last backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackPolicy {
    pub nominal_states: Vec<DVector<f64>>,
    pub nominal_controls: Vec<DVector<f64>>,
    pub k: Vec<DVector<f64>>,
    pub gains: Vec<DMatrix<f64>>,
    pub converged: bool,
    pub diverged: bool,
    pub final_cost: f64,
    pub stop_reason: StopReason,
    pub trace: Vec<IterationTrace>,
}

impl FeedbackPolicy {
    pub fn horizon(&self) -> usize {
        self.nominal_controls.len()
    }

    pub fn control(&self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.nominal_controls[t] + &self.gains[t] * (x - &self.nominal_states[t])
    }

    pub fn nominal_state(&self, t: usize) -> State {
        State::from_vector(&self.nominal_states[t])
    }

    /// Costs of accepted iterates, in order, starting with the initial rollout.
    pub fn accepted_costs(&self) -> Vec<f64> {
        self.trace.iter().filter(|t| t.accepted).map(|t| t.cost).collect()
    }
}

/// Discrete-time dynamics the solver can roll out and linearise.
pub trait Dynamics {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    /// Mean next state.
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
    /// Local model at `(x, u)`; `sigma_next` may be left at zero when
    /// `with_covariance` is false.
    fn linearize(&self, x: &DVector<f64>, u: &DVector<f64>, with_covariance: bool) -> Result<LinearizedStep>;
    fn diverged(&self, x: &DVector<f64>) -> bool {
        x.iter().any(|v| !v.is_finite())
    }
}

/// A fitted GP viewed as discrete dynamics over `x = [θ, θ̇]`.
///
/// With torque limits set, commanded torques are clamped before they reach
/// the model, as on the real arm.
#[derive(Clone, Debug)]
pub struct GpDynamics<'a> {
    pub model: &'a GpModel,
    pub dt: f64,
    pub velocity_bound: f64,
    pub torque_limits: Option<Vec<f64>>,
}

impl<'a> GpDynamics<'a> {
    pub fn new(model: &'a GpModel, cfg: &SolverConfig) -> Self {
        Self { model, dt: cfg.dt, velocity_bound: cfg.velocity_bound, torque_limits: None }
    }

    pub fn with_torque_limits(mut self, limits: &[f64]) -> Self {
        self.torque_limits = Some(limits.to_vec());
        self
    }

    fn query(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut z = DVector::zeros(x.len() + u.len());
        z.rows_mut(0, x.len()).copy_from(x);
        z.rows_mut(x.len(), u.len()).copy_from(u);
        if let Some(l) = &self.torque_limits {
            for i in 0..u.len() {
                z[x.len() + i] = u[i].clamp(-l[i], l[i]);
            }
        }
        z
    }
}

impl Dynamics for GpDynamics<'_> {
    fn state_dim(&self) -> usize {
        2 * self.model.n_links()
    }

    fn control_dim(&self) -> usize {
        self.model.n_links()
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.model.n_links();
        let p = self.model.predict_input(&self.query(x, u), false)?;
        let mut next = x.clone();
        for i in 0..n {
            let v = x[n + i] + p.mean[i] * self.dt;
            next[n + i] = v;
            next[i] = x[i] + v * self.dt;
        }
        Ok(next)
    }

    fn linearize(&self, x: &DVector<f64>, u: &DVector<f64>, with_covariance: bool) -> Result<LinearizedStep> {
        let n = self.model.n_links();
        let p = self.model.predict_input(&self.query(x, u), with_covariance)?;
        let jint = integration_jacobian(n, self.dt);
        // next = [θ + Δtθ̇ + Δt²h, θ̇ + Δth]
        let mut a = DMatrix::identity(2 * n, 2 * n);
        for i in 0..n {
            a[(i, n + i)] = self.dt;
        }
        a += &jint * p.jacobian.columns(0, 2 * n);
        // straight-through: B keeps the slope at the clamped torque, so a
        // saturated command still sees a gradient back towards the limit
        let b = &jint * p.jacobian.columns(2 * n, n);
        let sigma_next = match p.variance {
            Some(v) => {
                let s = &jint * DMatrix::from_diagonal(&v) * jint.transpose();
                (&s + s.transpose()) * 0.5
            }
            None => DMatrix::zeros(2 * n, 2 * n),
        };
        Ok(LinearizedStep { a, b, c: DMatrix::identity(2 * n, 2 * n), sigma_next })
    }

    fn diverged(&self, x: &DVector<f64>) -> bool {
        let n = self.model.n_links();
        x.iter().any(|v| !v.is_finite()) || (0..n).any(|i| x[n + i].abs() > self.velocity_bound)
    }
}

/// Linear-Gaussian dynamics `x⁺ = Ax + Bu (+ w)`, `w ~ N(0, Σ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.a * x + &self.b * u)
    }

    fn linearize(&self, _x: &DVector<f64>, _u: &DVector<f64>, with_covariance: bool) -> Result<LinearizedStep> {
        let n = self.state_dim();
        Ok(LinearizedStep {
            a: self.a.clone(),
            b: self.b.clone(),
            c: DMatrix::identity(n, n),
            sigma_next: if with_covariance { self.noise.clone() } else { DMatrix::zeros(n, n) },
        })
    }
}

/// Total cost of a trajectory under the reaching cost.
pub fn total_cost(cost: &ReachingCost, states: &[DVector<f64>], controls: &[DVector<f64>]) -> Result<f64> {
    cost.total_cost(states, controls)
}
