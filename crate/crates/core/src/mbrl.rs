//! The learn / optimise / roll-out loop and its exploration baselines.

use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arm::{self, Action, ArmParams, State};
use crate::cost::ReachingCost;
use crate::dataset::{Transition, TransitionDataset};
use crate::error::{check_dim, Error, Result};
use crate::gp::{GpModel, HyperparamSpec, OptimizeOptions};
use crate::ilqr::{self, random_controls, FeedbackPolicy, GpDynamics, IterationTrace, SolverConfig};

/// Reporting threshold on the final end-effector distance (metres).
pub const SUCCESS_DISTANCE: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExplorationMode {
    /// Risk-seeking solver, `sigma < 0`.
    Curious { sigma: f64 },
    /// Plain iLQR.
    Normal,
    /// Plain iLQR plus Gaussian torque noise during execution.
    Random { noise_std: f64 },
}

impl ExplorationMode {
    pub fn curious() -> Self {
        Self::Curious { sigma: -0.05 }
    }

    pub fn random() -> Self {
        Self::Random { noise_std: 0.2f64.sqrt() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Curious { .. } => "curious",
            Self::Normal => "normal",
            Self::Random { .. } => "random",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Curious { sigma } if !(sigma < 0.0) => Err(Error::InvalidInput(format!(
                "curious mode requires sigma < 0, got {sigma}"
            ))),
            Self::Random { noise_std } if !(noise_std >= 0.0 && noise_std.is_finite()) => Err(
                Error::InvalidInput(format!("random mode requires noise_std >= 0, got {noise_std}")),
            ),
            _ => Ok(()),
        }
    }

    /// Risk parameter handed to the solver.
    pub fn solver_sigma(&self) -> f64 {
        match *self {
            Self::Curious { sigma } => sigma,
            Self::Normal | Self::Random { .. } => 0.0,
        }
    }

    fn execution_noise(&self) -> f64 {
        match *self {
            Self::Random { noise_std } => noise_std,
            _ => 0.0,
        }
    }
}

/// Everything besides arm, cost and solver that shapes one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MbrlSettings {
    pub babble_duration: f64,
    pub babble_torque_std: f64,
    pub start_theta: Vec<f64>,
    /// Start every solve from fresh random torques instead of the previous
    /// iteration's controls.
    pub cold_start: bool,
    pub gp: OptimizeOptions,
}

impl Default for MbrlSettings {
    fn default() -> Self {
        Self {
            babble_duration: 0.5,
            babble_torque_std: 0.01,
            start_theta: vec![0.0, 0.0],
            cold_start: false,
            gp: OptimizeOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub final_ee_distance: f64,
    pub rollout_cost: f64,
    /// Held-out RMSE of the planning model on this iteration's rollout.
    /// Metrics are NaN when the rollout itself failed; see `error`.
    pub model_rmse: f64,
    pub dataset_size: usize,
    pub solver_converged: bool,
    pub solver_iterations: usize,
    pub planned_cost: f64,
    pub wall_time: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub mode: ExplorationMode,
    pub seed: u64,
    pub target: DVector<f64>,
    /// Training RMSE of the model fitted to the babbling data.
    pub initial_model_rmse: f64,
    pub records: Vec<IterationRecord>,
    pub final_policy: Option<FeedbackPolicy>,
    /// Solver trace of every iteration, in order.
    pub solver_traces: Vec<Vec<IterationTrace>>,
    pub final_model: GpModel,
    pub dataset: TransitionDataset,
}

/// Executed trajectory on the true arm.
#[derive(Clone, Debug)]
pub struct SystemRollout {
    pub data: TransitionDataset,
    pub states: Vec<State>,
    /// Torques actually applied (after noise and clamping).
    pub controls: Vec<Action>,
}

impl SystemRollout {
    pub fn cost(&self, cost: &ReachingCost) -> Result<f64> {
        let xs: Vec<_> = self.states.iter().map(State::to_vector).collect();
        let us: Vec<_> = self.controls.iter().map(|a| a.tau.clone()).collect();
        cost.total_cost(&xs, &us)
    }

    pub fn final_state(&self) -> &State {
        self.states.last().expect("rollouts start from a state")
    }
}

/// Sub-seed for stage `tag` of iteration `i`.
fn derive_seed(seed: u64, tag: u64, i: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(tag.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(i.wrapping_mul(0x94D0_49BB_1331_11EB))
}

const TAG_BABBLE: u64 = 1;
const TAG_FIT: u64 = 2;
const TAG_INIT: u64 = 3;
const TAG_NOISE: u64 = 4;

/// Execute `u_t = ū_t + K_t(x_t − x̄_t)` on the simulator, starting from the
/// policy's nominal initial state.
pub fn rollout_on_system(
    sim: &ArmParams,
    policy: &FeedbackPolicy,
    mode: &ExplorationMode,
    seed: u64,
) -> Result<SystemRollout> {
    mode.validate()?;
    let n = sim.n_links;
    check_dim("policy state", 2 * n, policy.nominal_states[0].len())?;
    let noise_std = mode.execution_noise();
    let normal = Normal::new(0.0, noise_std).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = policy.nominal_state(0);
    let mut data = TransitionDataset::new(n);
    let mut states = vec![s.clone()];
    let mut controls = Vec::with_capacity(policy.horizon());
    for t in 0..policy.horizon() {
        let mut u = policy.control(t, &s.to_vector());
        if noise_std > 0.0 {
            for v in u.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite torque at step {t}: {:?}", u.as_slice())));
        }
        let applied = arm::clamp_torques(sim, &Action::new(u));
        let next = arm::step(sim, &s, &applied)?;
        data.push(Transition::observed(&s, &applied, &next, sim.dt)?)?;
        controls.push(applied);
        states.push(next.clone());
        s = next;
    }
    Ok(SystemRollout { data, states, controls })
}

fn fit(data: &TransitionDataset, settings: &MbrlSettings, seed: u64) -> Result<GpModel> {
    GpModel::fit(data, &HyperparamSpec::Optimize(settings.gp.clone()), seed)
}

fn open_loop(x0: &DVector<f64>, controls: Vec<DVector<f64>>) -> FeedbackPolicy {
    let nx = x0.len();
    let nu = controls.first().map_or(0, |u| u.len());
    let horizon = controls.len();
    FeedbackPolicy {
        nominal_states: vec![x0.clone(); horizon + 1],
        nominal_controls: controls,
        k: vec![DVector::zeros(nu); horizon],
        gains: vec![nalgebra::DMatrix::zeros(nu, nx); horizon],
        converged: false,
        diverged: false,
        final_cost: f64::INFINITY,
        stop_reason: ilqr::StopReason::MaxIterations,
        trace: Vec::new(),
    }
}

/// Babble, then alternate fit → solve → execute → aggregate for
/// `n_iterations` rounds.
pub fn run_experiment(
    sim: &ArmParams,
    cost: &ReachingCost,
    cfg: &SolverConfig,
    mode: &ExplorationMode,
    settings: &MbrlSettings,
    n_iterations: usize,
    seed: u64,
) -> Result<ExperimentResult> {
    sim.validate()?;
    cost.validate()?;
    cfg.validate()?;
    mode.validate()?;
    check_dim("cost target", sim.n_links, cost.n_joints())?;
    check_dim("start_theta", sim.n_links, settings.start_theta.len())?;
    let solver_cfg = SolverConfig { sigma: mode.solver_sigma(), dt: sim.dt, ..cfg.clone() };
    let s0 = State::at_rest(&settings.start_theta);
    let x0 = s0.to_vector();

    let mut data = arm::motor_babble(
        sim,
        &s0,
        settings.babble_duration,
        settings.babble_torque_std,
        derive_seed(seed, TAG_BABBLE, 0),
    )?;
    let mut model = fit(&data, settings, derive_seed(seed, TAG_FIT, 0))?;
    let initial_model_rmse = model.prediction_error(&data)?;
    let mut controls = random_controls(
        sim.n_links,
        solver_cfg.horizon,
        solver_cfg.init_control_std,
        derive_seed(seed, TAG_INIT, 0),
    )?;

    let mut records = Vec::with_capacity(n_iterations);
    let mut final_policy = None;
    let mut solver_traces = Vec::with_capacity(n_iterations);
    for i in 1..=n_iterations {
        let started = Instant::now();
        let mut error = None;
        if settings.cold_start {
            controls = random_controls(
                sim.n_links,
                solver_cfg.horizon,
                solver_cfg.init_control_std,
                derive_seed(seed, TAG_INIT, i as u64),
            )?;
        }
        let dynamics = GpDynamics::new(&model, &solver_cfg).with_torque_limits(&sim.torque_limits);
        let mut policy = match ilqr::solve(&dynamics, cost, &x0, controls.clone(), &solver_cfg) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("seed {seed} iteration {i}: solver failed: {e}");
                error = Some(format!("solve: {e}"));
                open_loop(&x0, controls.clone())
            }
        };
        if policy.diverged && !settings.cold_start {
            // the refitted model can send a warm start off to infinity
            let fresh = random_controls(
                sim.n_links,
                solver_cfg.horizon,
                solver_cfg.init_control_std,
                derive_seed(seed, TAG_INIT, i as u64),
            )?;
            if let Ok(p) = ilqr::solve(&dynamics, cost, &x0, fresh, &solver_cfg) {
                policy = p;
            }
        }
        let (final_ee_distance, rollout_cost, model_rmse) =
            match rollout_on_system(sim, &policy, mode, derive_seed(seed, TAG_NOISE, i as u64)) {
                Ok(rollout) => {
                    let rmse = model.prediction_error(&rollout.data)?;
                    let dist = arm::ee_distance(sim, &rollout.final_state().theta, &cost.target_theta)?;
                    let c = rollout.cost(cost)?;
                    data.extend(&rollout.data)?;
                    match fit(&data, settings, derive_seed(seed, TAG_FIT, i as u64)) {
                        Ok(m) => model = m,
                        Err(e) => {
                            log::warn!("seed {seed} iteration {i}: refit failed, keeping previous model: {e}");
                            error = Some(format!("fit: {e}"));
                        }
                    }
                    (dist, c, rmse)
                }
                Err(e) => {
                    log::warn!("seed {seed} iteration {i}: rollout failed: {e}");
                    error = Some(format!("rollout: {e}"));
                    (f64::NAN, f64::NAN, f64::NAN)
                }
            };
        if !policy.diverged {
            controls = policy.nominal_controls.clone();
        }
        records.push(IterationRecord {
            iteration: i,
            final_ee_distance,
            rollout_cost,
            model_rmse,
            dataset_size: data.len(),
            solver_converged: policy.converged,
            solver_iterations: policy.trace.len().saturating_sub(1),
            planned_cost: policy.final_cost,
            wall_time: started.elapsed().as_secs_f64(),
            error,
        });
        solver_traces.push(policy.trace.clone());
        final_policy = Some(policy);
    }
    Ok(ExperimentResult {
        mode: *mode,
        seed,
        target: cost.target_theta.clone(),
        initial_model_rmse,
        records,
        final_policy,
        solver_traces,
        final_model: model,
        dataset: data,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferOutcome {
    pub target: Vec<f64>,
    pub ee_distance: f64,
    pub solver_converged: bool,
    #[serde(skip)]
    pub solver_trace: Vec<IterationTrace>,
}

/// Re-optimise towards new targets under a frozen model with plain iLQR and
/// execute each plan once.
pub fn evaluate_transfer(
    model: &GpModel,
    sim: &ArmParams,
    cost_template: &ReachingCost,
    targets: &[DVector<f64>],
    cfg: &SolverConfig,
    start_theta: &[f64],
    seed: u64,
) -> Result<Vec<TransferOutcome>> {
    check_dim("model joints", sim.n_links, model.n_links())?;
    let solver_cfg = SolverConfig { sigma: 0.0, dt: sim.dt, ..cfg.clone() };
    let s0 = State::at_rest(start_theta);
    check_dim("start_theta", sim.n_links, s0.n_joints())?;
    let x0 = s0.to_vector();
    let dynamics = GpDynamics::new(model, &solver_cfg).with_torque_limits(&sim.torque_limits);
    targets
        .iter()
        .enumerate()
        .map(|(i, target)| {
            check_dim("transfer target", sim.n_links, target.len())?;
            let cost = ReachingCost { target_theta: target.clone(), ..cost_template.clone() };
            let init = random_controls(
                sim.n_links,
                solver_cfg.horizon,
                solver_cfg.init_control_std,
                derive_seed(seed, TAG_INIT, i as u64),
            )?;
            let policy = ilqr::solve(&dynamics, &cost, &x0, init, &solver_cfg)?;
            let rollout = rollout_on_system(sim, &policy, &ExplorationMode::Normal, 0)?;
            Ok(TransferOutcome {
                target: target.iter().copied().collect(),
                ee_distance: arm::ee_distance(sim, &rollout.final_state().theta, target)?,
                solver_converged: policy.converged,
                solver_trace: policy.trace,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_policy(n: usize, horizon: usize) -> FeedbackPolicy {
        open_loop(&DVector::zeros(2 * n), vec![DVector::zeros(n); horizon])
    }

    #[test]
    fn mode_validation() {
        assert!(ExplorationMode::Curious { sigma: 0.05 }.validate().is_err());
        assert!(ExplorationMode::Curious { sigma: 0.0 }.validate().is_err());
        assert!(ExplorationMode::curious().validate().is_ok());
        assert!(ExplorationMode::Random { noise_std: -1.0 }.validate().is_err());
        assert_eq!(ExplorationMode::random().solver_sigma(), 0.0);
        assert_eq!(ExplorationMode::Normal.solver_sigma(), 0.0);
    }

    #[test]
    fn stationary_rollout_from_equilibrium() {
        let sim = ArmParams::default();
        let r = rollout_on_system(&sim, &zero_policy(2, 20), &ExplorationMode::Normal, 0).unwrap();
        assert_eq!(r.data.len(), 20);
        assert!(r.states.iter().all(|s| *s == State::zeros(2)));
        assert!(r.data.iter().all(|t| t.accel.iter().all(|a| *a == 0.0)));
    }

    #[test]
    fn zero_noise_random_mode_matches_normal() {
        let sim = ArmParams::default();
        let mut p = zero_policy(2, 30);
        for (t, u) in p.nominal_controls.iter_mut().enumerate() {
            u[0] = 0.003 * (t as f64).sin();
        }
        let a = rollout_on_system(&sim, &p, &ExplorationMode::Normal, 5).unwrap();
        let b = rollout_on_system(&sim, &p, &ExplorationMode::Random { noise_std: 0.0 }, 5).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.data, b.data);
        let c = rollout_on_system(&sim, &p, &ExplorationMode::Random { noise_std: 0.01 }, 5).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn zero_iterations_only_babbles() {
        let sim = ArmParams::default();
        let cost = ReachingCost::new(DVector::from_vec(vec![0.5, 0.5]));
        let cfg = SolverConfig { horizon: 10, ..Default::default() };
        let settings = MbrlSettings {
            gp: OptimizeOptions { iterations: 5, ..Default::default() },
            ..Default::default()
        };
        let r = run_experiment(&sim, &cost, &cfg, &ExplorationMode::Normal, &settings, 0, 3).unwrap();
        assert!(r.records.is_empty());
        assert_eq!(r.dataset.len(), 120);
        assert!(r.initial_model_rmse.is_finite());
        assert!(r.final_policy.is_none());
    }

    #[test]
    fn dataset_grows_by_horizon() {
        let sim = ArmParams::default();
        let cost = ReachingCost::new(DVector::from_vec(vec![0.3, 0.2]));
        let cfg = SolverConfig { horizon: 20, max_outer_iters: 5, ..Default::default() };
        let settings = MbrlSettings {
            babble_duration: 0.2,
            gp: OptimizeOptions { iterations: 5, restarts: 1, ..Default::default() },
            ..Default::default()
        };
        let r = run_experiment(&sim, &cost, &cfg, &ExplorationMode::curious(), &settings, 2, 1).unwrap();
        let sizes: Vec<_> = r.records.iter().map(|r| r.dataset_size).collect();
        assert_eq!(sizes, vec![48 + 20, 48 + 40]);
        for rec in &r.records {
            assert!(rec.final_ee_distance >= 0.0 && rec.model_rmse >= 0.0 && rec.rollout_cost >= 0.0);
        }
    }
}
