//! Ground-truth planar n-link arm.
//!
//! Rigid-body manipulator equations `M(θ)θ̈ + C(θ,θ̇)θ̇ + Dθ̇ + g(θ) = τ`,
//! integrated with semi-implicit Euler. This is the plant the learner never
//! sees directly; it only observes transitions.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Transition, TransitionDataset};
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmParams {
    pub n_links: usize,
    pub link_lengths: Vec<f64>,
    pub link_masses: Vec<f64>,
    /// Inertia of each link about its centre of mass.
    pub link_inertias: Vec<f64>,
    /// Distance from the proximal joint to the centre of mass, along the link.
    pub com_offsets: Vec<f64>,
    /// Acts along `-y`. Zero gives a horizontal-plane arm.
    pub gravity: f64,
    pub joint_damping: Vec<f64>,
    pub dt: f64,
    pub torque_limits: Vec<f64>,
}

impl Default for ArmParams {
    /// Two-link desk-scale reacher.
    fn default() -> Self {
        Self::uniform_rods(2, 0.1, 0.05)
    }
}

impl ArmParams {
    /// `n` identical uniform rods with the default damping, step and torque limit.
    ///
    /// The 0.1 N·m limit keeps joint speeds well inside the region where the
    /// explicit velocity-product terms integrate stably at 240 Hz; at 1 N·m
    /// saturated bang-bang torques drive the default arm unstable.
    pub fn uniform_rods(n: usize, length: f64, mass: f64) -> Self {
        Self {
            n_links: n,
            link_lengths: vec![length; n],
            link_masses: vec![mass; n],
            link_inertias: vec![mass * length * length / 12.0; n],
            com_offsets: vec![length / 2.0; n],
            gravity: 0.0,
            joint_damping: vec![0.01; n],
            dt: 1.0 / 240.0,
            torque_limits: vec![0.1; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_links;
        if n == 0 {
            return Err(Error::InvalidInput("arm needs at least one link".into()));
        }
        check_dim("link_lengths", n, self.link_lengths.len())?;
        check_dim("link_masses", n, self.link_masses.len())?;
        check_dim("link_inertias", n, self.link_inertias.len())?;
        check_dim("com_offsets", n, self.com_offsets.len())?;
        check_dim("joint_damping", n, self.joint_damping.len())?;
        check_dim("torque_limits", n, self.torque_limits.len())?;
        let positive = |name: &str, v: &[f64]| -> Result<()> {
            match v.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                Some(x) => Err(Error::InvalidInput(format!("{name} must be > 0, got {x}"))),
                None => Ok(()),
            }
        };
        positive("link_lengths", &self.link_lengths)?;
        positive("link_masses", &self.link_masses)?;
        positive("link_inertias", &self.link_inertias)?;
        positive("torque_limits", &self.torque_limits)?;
        positive("dt", &[self.dt])?;
        if self.joint_damping.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidInput("joint_damping must be >= 0".into()));
        }
        if !self.gravity.is_finite() {
            return Err(Error::InvalidInput("gravity must be finite".into()));
        }
        Ok(())
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    /// Lever arm of segment `p` as seen from the COM of link `b` (`p <= b`).
    fn lever(&self, b: usize, p: usize) -> f64 {
        if p < b {
            self.link_lengths[p]
        } else {
            self.com_offsets[b]
        }
    }
}

/// Joint positions and velocities, `x = [θ, θ̇]`.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub theta: DVector<f64>,
    pub theta_dot: DVector<f64>,
}

impl State {
    pub fn new(theta: DVector<f64>, theta_dot: DVector<f64>) -> Self {
        Self { theta, theta_dot }
    }

    pub fn at_rest(theta: &[f64]) -> Self {
        Self {
            theta: DVector::from_column_slice(theta),
            theta_dot: DVector::zeros(theta.len()),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self { theta: DVector::zeros(n), theta_dot: DVector::zeros(n) }
    }

    pub fn n_joints(&self) -> usize {
        self.theta.len()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.n_joints();
        DVector::from_fn(2 * n, |i, _| if i < n { self.theta[i] } else { self.theta_dot[i - n] })
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        let n = x.len() / 2;
        Self {
            theta: x.rows(0, n).into_owned(),
            theta_dot: x.rows(n, n).into_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(self.theta_dot.iter()).all(|v| v.is_finite())
    }
}

/// Commanded joint torques.
#[derive(Clone, Debug, PartialEq)]
pub struct Action {
    pub tau: DVector<f64>,
}

impl Action {
    pub fn new(tau: DVector<f64>) -> Self {
        Self { tau }
    }

    pub fn from_slice(tau: &[f64]) -> Self {
        Self { tau: DVector::from_column_slice(tau) }
    }

    pub fn zeros(n: usize) -> Self {
        Self { tau: DVector::zeros(n) }
    }
}

fn check_state(params: &ArmParams, s: &State) -> Result<()> {
    check_dim("theta", params.n_links, s.theta.len())?;
    check_dim("theta_dot", params.n_links, s.theta_dot.len())?;
    if !s.is_finite() {
        return Err(Error::InvalidInput("state contains non-finite entries".into()));
    }
    Ok(())
}

/// Absolute link angles `φ_b = Σ_{k≤b} θ_k`.
fn absolute_angles(theta: &DVector<f64>) -> Vec<f64> {
    theta
        .iter()
        .scan(0.0, |acc, t| {
            *acc += t;
            Some(*acc)
        })
        .collect()
}

/// Joint-space mass matrix.
pub fn mass_matrix(params: &ArmParams, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_dim("theta", params.n_links, theta.len())?;
    let phi = absolute_angles(theta);
    Ok(mass_matrix_at(params, &phi))
}

fn mass_matrix_at(params: &ArmParams, phi: &[f64]) -> DMatrix<f64> {
    let n = params.n_links;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for b in j..n {
                let mut trans = 0.0;
                for p in i..=b {
                    for q in j..=b {
                        trans += params.lever(b, p) * params.lever(b, q) * (phi[p] - phi[q]).cos();
                    }
                }
                acc += params.link_inertias[b] + params.link_masses[b] * trans;
            }
            m[(i, j)] = acc;
            m[(j, i)] = acc;
        }
    }
    m
}

/// `∂M/∂θ_k` for every joint `k`.
fn mass_matrix_partials(params: &ArmParams, phi: &[f64]) -> Vec<DMatrix<f64>> {
    let n = params.n_links;
    let ind = |k: usize, p: usize| if k <= p { 1.0 } else { 0.0 };
    (0..n)
        .map(|k| {
            let mut dm = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let mut acc = 0.0;
                    for b in j..n {
                        let mut trans = 0.0;
                        for p in i..=b {
                            for q in j..=b {
                                let w = ind(k, p) - ind(k, q);
                                if w != 0.0 {
                                    trans -= w
                                        * params.lever(b, p)
                                        * params.lever(b, q)
                                        * (phi[p] - phi[q]).sin();
                                }
                            }
                        }
                        acc += params.link_masses[b] * trans;
                    }
                    dm[(i, j)] = acc;
                    dm[(j, i)] = acc;
                }
            }
            dm
        })
        .collect()
}

/// Velocity-product (Coriolis + centrifugal) torques `C(θ,θ̇)θ̇`.
pub fn coriolis_torques(params: &ArmParams, s: &State) -> Result<DVector<f64>> {
    check_state(params, s)?;
    let phi = absolute_angles(&s.theta);
    Ok(coriolis_at(params, &phi, &s.theta_dot))
}

fn coriolis_at(params: &ArmParams, phi: &[f64], qd: &DVector<f64>) -> DVector<f64> {
    let n = params.n_links;
    let dm = mass_matrix_partials(params, phi);
    // Christoffel form: c_i = Σ_jk (∂M_ij/∂θ_k − ½ ∂M_jk/∂θ_i) θ̇_j θ̇_k
    DVector::from_fn(n, |i, _| {
        let mut c = 0.0;
        for j in 0..n {
            for k in 0..n {
                c += (dm[k][(i, j)] - 0.5 * dm[i][(j, k)]) * qd[j] * qd[k];
            }
        }
        c
    })
}

/// Gravity torques `∂V/∂θ`.
pub fn gravity_torques(params: &ArmParams, theta: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("theta", params.n_links, theta.len())?;
    let phi = absolute_angles(theta);
    Ok(gravity_at(params, &phi))
}

fn gravity_at(params: &ArmParams, phi: &[f64]) -> DVector<f64> {
    let n = params.n_links;
    DVector::from_fn(n, |i, _| {
        if params.gravity == 0.0 {
            return 0.0;
        }
        (i..n)
            .map(|b| {
                let lever: f64 = (i..=b).map(|p| params.lever(b, p) * phi[p].cos()).sum();
                params.link_masses[b] * params.gravity * lever
            })
            .sum()
    })
}

pub fn kinetic_energy(params: &ArmParams, s: &State) -> Result<f64> {
    let m = mass_matrix(params, &s.theta)?;
    Ok(0.5 * s.theta_dot.dot(&(&m * &s.theta_dot)))
}

/// Clamp torques to the joint limits.
pub fn clamp_torques(params: &ArmParams, a: &Action) -> Action {
    let tau = DVector::from_fn(a.tau.len(), |i, _| {
        let lim = params.torque_limits[i];
        a.tau[i].clamp(-lim, lim)
    });
    if tau != a.tau {
        log::debug!("torque clamped: {:?} -> {:?}", a.tau.as_slice(), tau.as_slice());
    }
    Action { tau }
}

/// Joint accelerations under torque `a` (clamped to the limits first).
pub fn dynamics(params: &ArmParams, s: &State, a: &Action) -> Result<DVector<f64>> {
    check_state(params, s)?;
    check_dim("tau", params.n_links, a.tau.len())?;
    if a.tau.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("torque contains non-finite entries".into()));
    }
    let tau = clamp_torques(params, a).tau;
    let phi = absolute_angles(&s.theta);
    let m = mass_matrix_at(params, &phi);
    let bias = coriolis_at(params, &phi, &s.theta_dot)
        + DVector::from_fn(params.n_links, |i, _| params.joint_damping[i] * s.theta_dot[i])
        + gravity_at(params, &phi);
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Numerical("mass matrix is not positive definite".into()))?;
    let acc = chol.solve(&(tau - bias));
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite joint acceleration".into()));
    }
    Ok(acc)
}

/// One semi-implicit Euler step: `θ̇⁺ = θ̇ + θ̈Δt`, `θ⁺ = θ + θ̇⁺Δt`.
pub fn step(params: &ArmParams, s: &State, a: &Action) -> Result<State> {
    let acc = dynamics(params, s, a)?;
    let theta_dot = &s.theta_dot + acc * params.dt;
    let theta = &s.theta + &theta_dot * params.dt;
    Ok(State { theta, theta_dot })
}

/// End-effector position in the arm plane.
pub fn forward_kinematics(params: &ArmParams, theta: &DVector<f64>) -> Result<[f64; 2]> {
    check_dim("theta", params.n_links, theta.len())?;
    let phi = absolute_angles(theta);
    let mut p = [0.0, 0.0];
    for (l, a) in params.link_lengths.iter().zip(&phi) {
        p[0] += l * a.cos();
        p[1] += l * a.sin();
    }
    Ok(p)
}

/// Euclidean end-effector distance between two joint configurations.
pub fn ee_distance(params: &ArmParams, theta: &DVector<f64>, target: &DVector<f64>) -> Result<f64> {
    let p = forward_kinematics(params, theta)?;
    let q = forward_kinematics(params, target)?;
    Ok(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
}

/// Drive the arm with white Gaussian torques and record the transitions.
///
/// Produces `⌊duration/dt⌋` tuples. Targets are the finite-differenced
/// velocities `(θ̇_{t+1} − θ̇_t)/Δt` of the simulated states.
pub fn motor_babble(
    params: &ArmParams,
    s0: &State,
    duration: f64,
    torque_std: f64,
    seed: u64,
) -> Result<TransitionDataset> {
    params.validate()?;
    check_state(params, s0)?;
    if !(duration > 0.0) {
        return Err(Error::InvalidInput(format!("babble duration must be > 0, got {duration}")));
    }
    if !(torque_std >= 0.0) || !torque_std.is_finite() {
        return Err(Error::InvalidInput(format!("torque_std must be >= 0, got {torque_std}")));
    }
    let steps = step_count(duration, params.dt);
    let normal = Normal::new(0.0, torque_std).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = TransitionDataset::new(params.n_links);
    let mut s = s0.clone();
    for _ in 0..steps {
        let cmd = Action::new(DVector::from_fn(params.n_links, |_, _| normal.sample(&mut rng)));
        let applied = clamp_torques(params, &cmd);
        let next = step(params, &s, &applied)?;
        data.push(Transition::observed(&s, &applied, &next, params.dt)?)?;
        s = next;
    }
    Ok(data)
}

pub(crate) fn step_count(duration: f64, dt: f64) -> usize {
    (duration / dt + 1e-9).floor() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn two_link() -> ArmParams {
        ArmParams::default()
    }

    #[test]
    fn equilibrium_has_zero_acceleration() {
        let mut p = two_link();
        p.joint_damping = vec![0.0; 2];
        let acc = dynamics(&p, &State::zeros(2), &Action::zeros(2)).unwrap();
        assert_eq!(acc.as_slice(), &[0.0, 0.0]);
        let next = step(&p, &State::zeros(2), &Action::zeros(2)).unwrap();
        assert_eq!(next, State::zeros(2));
    }

    #[test]
    fn forward_kinematics_examples() {
        let p = two_link();
        let a = forward_kinematics(&p, &DVector::from_vec(vec![0.0, 0.0])).unwrap();
        assert!((a[0] - 0.2).abs() < 1e-15 && a[1].abs() < 1e-15);
        let b = forward_kinematics(&p, &DVector::from_vec(vec![FRAC_PI_2, 0.0])).unwrap();
        assert!(b[0].abs() < 1e-15 && (b[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn step_follows_semi_implicit_euler() {
        let p = two_link();
        let s = State::new(DVector::from_vec(vec![0.3, -0.2]), DVector::from_vec(vec![1.0, 0.0]));
        let a = Action::from_slice(&[0.002, -0.001]);
        let acc = dynamics(&p, &s, &a).unwrap();
        let next = step(&p, &s, &a).unwrap();
        let qd = &s.theta_dot + &acc * p.dt;
        let q = &s.theta + &qd * p.dt;
        assert_eq!(next.theta_dot, qd);
        assert_eq!(next.theta, q);
    }

    #[test]
    fn torques_are_clamped() {
        let p = two_link();
        let s = State::zeros(2);
        let big = dynamics(&p, &s, &Action::from_slice(&[50.0, -50.0])).unwrap();
        let l = &p.torque_limits;
        let lim = dynamics(&p, &s, &Action::from_slice(&[l[0], -l[1]])).unwrap();
        assert_eq!(big, lim);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = two_link();
        let err = dynamics(&p, &State::zeros(3), &Action::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        assert!(forward_kinematics(&p, &DVector::zeros(1)).is_err());
    }

    #[test]
    fn babble_sizes_and_determinism() {
        let p = two_link();
        let d1 = motor_babble(&p, &State::zeros(2), 0.5, 0.01, 7).unwrap();
        let d2 = motor_babble(&p, &State::zeros(2), 0.5, 0.01, 7).unwrap();
        assert_eq!(d1.len(), 120);
        assert_eq!(d1, d2);
        let quiet = motor_babble(&p, &State::zeros(2), 0.5, 0.0, 7).unwrap();
        assert!(quiet.iter().all(|t| t.accel.iter().all(|a| *a == 0.0)));
        assert!(motor_babble(&p, &State::zeros(2), 0.0, 0.01, 7).is_err());
        assert!(motor_babble(&p, &State::zeros(2), 0.5, -1.0, 7).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = two_link();
        p.link_masses[1] = 0.0;
        assert!(p.validate().is_err());
        let mut p = two_link();
        p.n_links = 0;
        assert!(p.validate().is_err());
    }
}
