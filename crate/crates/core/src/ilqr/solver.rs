use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{backward_pass, BackwardPass, Dynamics, FeedbackPolicy, LinearizedStep, SolverConfig};
use crate::cost::{CostExpansion, ReachingCost};
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    LambdaExceeded,
    InitialRolloutDiverged,
}

/// One record per outer iteration (iteration 0 is the initial rollout).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub lambda: f64,
    pub alpha: Option<f64>,
    pub cost: f64,
    pub expected_improvement: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardResult {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub diverged: bool,
}

/// Local linear models along a nominal trajectory.
pub fn linearize_trajectory<D: Dynamics + Sync>(
    dynamics: &D,
    states: &[DVector<f64>],
    controls: &[DVector<f64>],
    with_covariance: bool,
) -> Result<Vec<LinearizedStep>> {
    check_dim("nominal states", controls.len() + 1, states.len())?;
    controls
        .par_iter()
        .enumerate()
        .map(|(t, u)| dynamics.linearize(&states[t], u, with_covariance))
        .collect()
}

/// Roll `u_t = ū_t + αk_t + K_t(x_t − x̄_t)` through the dynamics.
///
/// On divergence the partial trajectory is returned with `diverged` set.
pub fn forward_pass<D: Dynamics>(
    dynamics: &D,
    states: &[DVector<f64>],
    controls: &[DVector<f64>],
    k: &[DVector<f64>],
    gains: &[DMatrix<f64>],
    alpha: f64,
) -> Result<ForwardResult> {
    let horizon = controls.len();
    check_dim("nominal states", horizon + 1, states.len())?;
    check_dim("feedforward terms", horizon, k.len())?;
    check_dim("feedback gains", horizon, gains.len())?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("line-search alpha must lie in [0, 1], got {alpha}")));
    }
    let mut xs = Vec::with_capacity(horizon + 1);
    let mut us = Vec::with_capacity(horizon);
    xs.push(states[0].clone());
    for t in 0..horizon {
        let x = &xs[t];
        let u = &controls[t] + &k[t] * alpha + &gains[t] * (x - &states[t]);
        let next = dynamics.step(x, &u)?;
        us.push(u);
        let diverged = dynamics.diverged(&next);
        xs.push(next);
        if diverged {
            return Ok(ForwardResult { states: xs, controls: us, diverged: true });
        }
    }
    Ok(ForwardResult { states: xs, controls: us, diverged: false })
}

/// Seeded zero-mean Gaussian torque sequence.
pub fn random_controls(n_controls: usize, horizon: usize, std: f64, seed: u64) -> Result<Vec<DVector<f64>>> {
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..horizon)
        .map(|_| DVector::from_fn(n_controls, |_, _| normal.sample(&mut rng)))
        .collect())
}

fn expand_costs(
    cost: &ReachingCost,
    states: &[DVector<f64>],
    controls: &[DVector<f64>],
) -> Result<Vec<CostExpansion>> {
    let mut out = Vec::with_capacity(states.len());
    for (x, u) in states.iter().zip(controls) {
        out.push(cost.expand_vec(x, Some(u))?);
    }
    out.push(cost.expand_vec(states.last().expect("non-empty"), None)?);
    Ok(out)
}

/// Line-searched risk-sensitive iLQR.
///
/// Candidates are accepted only when their model-predicted cost strictly
/// decreases. λ is regularisation on the control Hessian: divided by
/// `lambda_scale` after an accepted step, multiplied after a failed line
/// search or a non-positive-definite backward pass.
pub fn solve<D: Dynamics + Sync>(
    dynamics: &D,
    cost: &ReachingCost,
    x0: &DVector<f64>,
    init_controls: Vec<DVector<f64>>,
    cfg: &SolverConfig,
) -> Result<FeedbackPolicy> {
    cfg.validate()?;
    cost.validate()?;
    check_dim("initial controls", cfg.horizon, init_controls.len())?;
    check_dim("initial state", dynamics.state_dim(), x0.len())?;
    let nx = dynamics.state_dim();
    let nu = dynamics.control_dim();
    let with_cov = cfg.sigma != 0.0;
    let lambda_floor = cfg.lambda_init * 1e-3;

    let zero_k = vec![DVector::zeros(nu); cfg.horizon];
    let zero_gains = vec![DMatrix::zeros(nu, nx); cfg.horizon];
    let mut nominal_xs = vec![x0.clone(); cfg.horizon + 1];
    let initial = forward_pass(dynamics, &nominal_xs, &init_controls, &zero_k, &zero_gains, 0.0)?;
    if initial.diverged {
        log::warn!("initial rollout diverged after {} steps", initial.states.len() - 1);
        // the nominal is unusable; keep shapes consistent for open-loop replay
        return Ok(FeedbackPolicy {
            nominal_states: vec![x0.clone(); cfg.horizon + 1],
            nominal_controls: init_controls,
            k: zero_k,
            gains: zero_gains,
            converged: false,
            diverged: true,
            final_cost: f64::INFINITY,
            stop_reason: StopReason::InitialRolloutDiverged,
            trace: Vec::new(),
        });
    }
    nominal_xs = initial.states;
    let mut nominal_us = initial.controls;
    let mut best_cost = cost.total_cost(&nominal_xs, &nominal_us)?;
    let mut lambda = cfg.lambda_init;
    let mut k = zero_k;
    let mut gains = zero_gains;
    let mut trace = vec![IterationTrace {
        iteration: 0,
        lambda,
        alpha: None,
        cost: best_cost,
        expected_improvement: 0.0,
        accepted: true,
    }];
    let mut stop = StopReason::MaxIterations;

    'outer: for iteration in 1..=cfg.max_outer_iters {
        let steps = linearize_trajectory(dynamics, &nominal_xs, &nominal_us, with_cov)?;
        let costs = expand_costs(cost, &nominal_xs, &nominal_us)?;
        let bp: BackwardPass = loop {
            match backward_pass(&steps, &costs, cfg.sigma, lambda) {
                Ok(bp) => break bp,
                Err(Error::NotPositiveDefinite { step }) => {
                    lambda *= cfg.lambda_scale;
                    log::debug!("iter {iteration}: H not PD at step {step}, lambda -> {lambda:e}");
                    if lambda > cfg.lambda_max {
                        stop = StopReason::LambdaExceeded;
                        break 'outer;
                    }
                }
                Err(e) => return Err(e),
            }
        };
        k = bp.k;
        gains = bp.gains;
        let scale = best_cost.abs().max(1e-12);
        if lambda <= cfg.lambda_init && bp.expected_improvement <= cfg.convergence_tol * scale {
            trace.push(IterationTrace {
                iteration,
                lambda,
                alpha: None,
                cost: best_cost,
                expected_improvement: bp.expected_improvement,
                accepted: false,
            });
            stop = StopReason::Converged;
            break;
        }

        let mut accepted = None;
        for &alpha in &cfg.line_search_alphas {
            let cand = forward_pass(dynamics, &nominal_xs, &nominal_us, &k, &gains, alpha)?;
            if cand.diverged {
                continue;
            }
            let j = cost.total_cost(&cand.states, &cand.controls)?;
            if j < best_cost {
                accepted = Some((alpha, j, cand));
                break;
            }
        }

        match accepted {
            Some((alpha, j, cand)) => {
                let rel = (best_cost - j) / scale;
                debug_assert!(j < best_cost);
                best_cost = j;
                nominal_xs = cand.states;
                nominal_us = cand.controls;
                lambda = (lambda / cfg.lambda_scale).max(lambda_floor);
                log::debug!(
                    "iter {iteration}: accepted alpha={alpha} cost={j:.6e} rel={rel:.3e} lambda={lambda:e}"
                );
                trace.push(IterationTrace {
                    iteration,
                    lambda,
                    alpha: Some(alpha),
                    cost: j,
                    expected_improvement: bp.expected_improvement,
                    accepted: true,
                });
                if rel < cfg.convergence_tol {
                    stop = StopReason::Converged;
                    break;
                }
            }
            None => {
                lambda *= cfg.lambda_scale;
                log::debug!("iter {iteration}: line search failed, lambda -> {lambda:e}");
                trace.push(IterationTrace {
                    iteration,
                    lambda,
                    alpha: None,
                    cost: best_cost,
                    expected_improvement: bp.expected_improvement,
                    accepted: false,
                });
                if lambda > cfg.lambda_max {
                    stop = StopReason::LambdaExceeded;
                    break;
                }
            }
        }
    }

    Ok(FeedbackPolicy {
        nominal_states: nominal_xs,
        nominal_controls: nominal_us,
        k,
        gains,
        converged: stop == StopReason::Converged,
        diverged: false,
        final_cost: best_cost,
        stop_reason: stop,
        trace,
    })
}
