//! Gaussian-process forward dynamics.
//!
//! One independent GP per joint predicts the next-step joint acceleration
//! from `z = (θ, θ̇, τ)`. Predictions are integrated with the Euler chain
//! `θ̇⁺ = θ̇ + θ̈Δt`, `θ⁺ = θ + θ̇⁺Δt` to a Gaussian over the next state.

mod kernel;
mod optimize;

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kernel::KernelParams;
pub use optimize::{log_marginal_likelihood, OptimizeOptions};

use crate::arm::{Action, State};
use crate::dataset::{model_input, TransitionDataset};
use crate::error::{check_dim, Error, Result};

const MAX_JITTER: f64 = 1e-4;
pub const MIN_JITTER: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    /// One entry per output dimension.
    pub outputs: Vec<KernelParams>,
    pub jitter: f64,
}

impl GpHyperparams {
    /// The same kernel for every output.
    pub fn shared(n_outputs: usize, params: KernelParams, jitter: f64) -> Self {
        Self { outputs: vec![params; n_outputs], jitter }
    }

    pub fn validate(&self, n_outputs: usize, input_dim: usize) -> Result<()> {
        check_dim("hyperparameter outputs", n_outputs, self.outputs.len())?;
        for p in &self.outputs {
            check_dim("length scales", input_dim, p.length_scales.len())?;
            p.validate()?;
        }
        if !(self.jitter >= MIN_JITTER) || !self.jitter.is_finite() {
            return Err(Error::InvalidInput(format!("jitter must be >= {MIN_JITTER}, got {}", self.jitter)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum HyperparamSpec {
    Fixed(GpHyperparams),
    Optimize(OptimizeOptions),
}

/// Per-joint predictive mean and (diagonal) covariance of the next acceleration.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrediction {
    pub mean_accel: DVector<f64>,
    pub accel_covariance: DMatrix<f64>,
}

/// Gaussian over the next state `[θ, θ̇]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateDistribution {
    pub mean_state: State,
    pub covariance: DMatrix<f64>,
}

/// Mean, variances and mean-gradients at one query point.
#[derive(Clone, Debug)]
pub struct PredictionWithGradient {
    pub mean: DVector<f64>,
    /// `None` when variances were not requested.
    pub variance: Option<DVector<f64>>,
    /// `∂mean/∂z`, one row per output.
    pub jacobian: DMatrix<f64>,
}

#[derive(Clone, Debug)]
struct OutputGp {
    params: KernelParams,
    /// Training inputs divided by the length scales, row-major.
    scaled: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct GpModel {
    n_links: usize,
    inputs: DMatrix<f64>,
    targets: DMatrix<f64>,
    hyperparams: GpHyperparams,
    outputs: Vec<OutputGp>,
}

fn factorize(
    inputs: &DMatrix<f64>,
    y: DVector<f64>,
    params: &KernelParams,
    jitter: f64,
    output: usize,
) -> Result<OutputGp> {
    let d = inputs.ncols();
    let scaled = kernel::scale_rows(inputs, &params.length_scales);
    let kf = kernel::gram(&scaled, d, params.signal_variance);
    let mut jit = jitter;
    loop {
        let mut k = kf.clone();
        for i in 0..k.nrows() {
            k[(i, i)] += params.noise_variance + jit;
        }
        if let Some(chol) = k.cholesky() {
            let alpha = chol.solve(&y);
            if jit > jitter {
                log::debug!("output {output}: jitter escalated to {jit:e}");
            }
            return Ok(OutputGp { params: params.clone(), scaled, chol, alpha });
        }
        jit *= 10.0;
        if jit > MAX_JITTER {
            return Err(Error::Conditioning { output, jitter: jit / 10.0 });
        }
    }
}

impl GpModel {
    /// Fit one GP per joint. With [`HyperparamSpec::Optimize`] the kernel
    /// hyperparameters maximise the log marginal likelihood first.
    pub fn fit(data: &TransitionDataset, spec: &HyperparamSpec, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidInput("cannot fit a GP to an empty dataset".into()));
        }
        let n = data.n_links();
        Self::fit_matrices(n, data.input_matrix(), data.target_matrix(), spec, seed)
    }

    pub fn fit_matrices(
        n_links: usize,
        inputs: DMatrix<f64>,
        targets: DMatrix<f64>,
        spec: &HyperparamSpec,
        seed: u64,
    ) -> Result<Self> {
        let d = 3 * n_links;
        check_dim("GP input width", d, inputs.ncols())?;
        check_dim("GP target width", n_links, targets.ncols())?;
        check_dim("GP target rows", inputs.nrows(), targets.nrows())?;
        if inputs.nrows() == 0 {
            return Err(Error::InvalidInput("cannot fit a GP to an empty dataset".into()));
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("training data contains non-finite values".into()));
        }
        let hyperparams = match spec {
            HyperparamSpec::Fixed(h) => h.clone(),
            HyperparamSpec::Optimize(opts) => {
                let outputs = (0..n_links)
                    .into_par_iter()
                    .map(|j| {
                        let y = targets.column(j).into_owned();
                        optimize::optimize_output(&inputs, &y, MIN_JITTER, opts, seed.wrapping_add(j as u64))
                    })
                    .collect();
                GpHyperparams { outputs, jitter: MIN_JITTER }
            }
        };
        hyperparams.validate(n_links, d)?;
        let outputs = (0..n_links)
            .into_par_iter()
            .map(|j| {
                factorize(
                    &inputs,
                    targets.column(j).into_owned(),
                    &hyperparams.outputs[j],
                    hyperparams.jitter,
                    j,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { n_links, inputs, targets, hyperparams, outputs })
    }

    pub fn n_links(&self) -> usize {
        self.n_links
    }

    pub fn input_dim(&self) -> usize {
        3 * self.n_links
    }

    pub fn n_points(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyperparams
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    /// `(K + σ_n²I)⁻¹y` of output `j`.
    pub fn alpha(&self, j: usize) -> &DVector<f64> {
        &self.outputs[j].alpha
    }

    fn check_query(&self, z: &DVector<f64>) -> Result<()> {
        check_dim("GP query", self.input_dim(), z.len())?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("GP query contains non-finite values".into()));
        }
        Ok(())
    }

    /// Mean, optionally variance, and mean-gradient at raw input `z`.
    pub fn predict_input(&self, z: &DVector<f64>, with_variance: bool) -> Result<PredictionWithGradient> {
        self.check_query(z)?;
        let d = self.input_dim();
        let n = self.n_points();
        let mut mean = DVector::zeros(self.n_links);
        let mut variance = with_variance.then(|| DVector::zeros(self.n_links));
        let mut jacobian = DMatrix::zeros(self.n_links, d);
        let mut kstar = DVector::zeros(n);
        for (j, out) in self.outputs.iter().enumerate() {
            let ls = &out.params.length_scales;
            let q: Vec<f64> = (0..d).map(|c| z[c] / ls[c]).collect();
            let mut grad = vec![0.0; d];
            let mut m = 0.0;
            for i in 0..n {
                let zi = &out.scaled[i * d..(i + 1) * d];
                let r2: f64 = zi.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                let k = out.params.signal_variance * (-0.5 * r2).exp();
                kstar[i] = k;
                let w = out.alpha[i] * k;
                m += w;
                // ∂k/∂z* = k Λ⁻¹ (z_i − z*)
                for c in 0..d {
                    grad[c] += w * (zi[c] - q[c]);
                }
            }
            mean[j] = m;
            for c in 0..d {
                jacobian[(j, c)] = grad[c] / ls[c];
            }
            if let Some(var) = variance.as_mut() {
                let v = out.chol.l_dirty().solve_lower_triangular(&kstar).expect("non-singular factor");
                var[j] = (out.params.signal_variance - v.norm_squared()).max(0.0);
            }
        }
        Ok(PredictionWithGradient { mean, variance, jacobian })
    }

    pub fn predict(&self, s: &State, a: &Action) -> Result<GaussianPrediction> {
        check_dim("state joints", self.n_links, s.n_joints())?;
        check_dim("action joints", self.n_links, a.tau.len())?;
        let p = self.predict_input(&model_input(s, a), true)?;
        Ok(GaussianPrediction {
            mean_accel: p.mean,
            accel_covariance: DMatrix::from_diagonal(&p.variance.expect("requested")),
        })
    }

    /// `(∂mean/∂x, ∂mean/∂u)` with `x = [θ, θ̇]`.
    pub fn predict_gradients(&self, s: &State, a: &Action) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_dim("state joints", self.n_links, s.n_joints())?;
        check_dim("action joints", self.n_links, a.tau.len())?;
        let p = self.predict_input(&model_input(s, a), false)?;
        let n = self.n_links;
        Ok((
            p.jacobian.columns(0, 2 * n).into_owned(),
            p.jacobian.columns(2 * n, n).into_owned(),
        ))
    }

    /// Mean-only rollout of `controls` from `s0`.
    ///
    /// Stops early and flags divergence when a joint speed exceeds
    /// `velocity_bound` or the state stops being finite.
    pub fn rollout_mean(
        &self,
        s0: &State,
        controls: &[Action],
        dt: f64,
        velocity_bound: f64,
    ) -> Result<MeanRollout> {
        let mut states = vec![s0.clone()];
        for a in controls {
            let s = states.last().expect("non-empty");
            let pred = self.predict_input(&model_input(s, a), false)?;
            let next = euler_mean(&pred.mean, s, dt);
            let diverged = !next.is_finite() || next.theta_dot.iter().any(|v| v.abs() > velocity_bound);
            states.push(next);
            if diverged {
                return Ok(MeanRollout { states, diverged: true });
            }
        }
        Ok(MeanRollout { states, diverged: false })
    }

    /// RMSE of mean predictions against the dataset targets.
    pub fn prediction_error(&self, data: &TransitionDataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InvalidInput("prediction error needs a non-empty dataset".into()));
        }
        check_dim("dataset joints", self.n_links, data.n_links())?;
        let mut sq = 0.0;
        for t in data {
            let p = self.predict_input(&t.input(), false)?;
            sq += (p.mean - &t.accel).norm_squared();
        }
        Ok((sq / (data.len() * self.n_links) as f64).sqrt())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = PersistedModel {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            n_links: self.n_links,
            hyperparams: self.hyperparams.clone(),
            inputs: rows(&self.inputs),
            targets: rows(&self.targets),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Reload a persisted model; the posterior is refactorised from the
    /// stored hyperparameters and data.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: PersistedModel = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("unsupported model format {} v{}", file.format, file.version),
            });
        }
        let d = 3 * file.n_links;
        let inputs = from_rows(&file.inputs, d).map_err(|m| Error::Parse { path: path.into(), message: m })?;
        let targets =
            from_rows(&file.targets, file.n_links).map_err(|m| Error::Parse { path: path.into(), message: m })?;
        Self::fit_matrices(file.n_links, inputs, targets, &HyperparamSpec::Fixed(file.hyperparams), 0)
    }
}

const MODEL_FORMAT: &str = "curious-ilqr-gp";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PersistedModel {
    format: String,
    version: u32,
    n_links: usize,
    hyperparams: GpHyperparams,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], width: usize) -> std::result::Result<DMatrix<f64>, String> {
    if let Some(bad) = r.iter().find(|row| row.len() != width) {
        return Err(format!("row of width {} where {width} expected", bad.len()));
    }
    Ok(DMatrix::from_fn(r.len(), width, |i, j| r[i][j]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanRollout {
    pub states: Vec<State>,
    pub diverged: bool,
}

fn euler_mean(accel: &DVector<f64>, s: &State, dt: f64) -> State {
    let theta_dot = &s.theta_dot + accel * dt;
    let theta = &s.theta + &theta_dot * dt;
    State { theta, theta_dot }
}

/// Jacobian of the next state with respect to the acceleration: `[Δt²I; ΔtI]`.
pub fn integration_jacobian(n: usize, dt: f64) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        j[(i, i)] = dt * dt;
        j[(n + i, i)] = dt;
    }
    j
}

/// Push an acceleration prediction through one Euler step.
pub fn integrate(pred: &GaussianPrediction, s: &State, dt: f64) -> Result<StateDistribution> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    let n = s.n_joints();
    check_dim("prediction joints", n, pred.mean_accel.len())?;
    let j = integration_jacobian(n, dt);
    let mut cov = &j * &pred.accel_covariance * j.transpose();
    cov = (&cov + cov.transpose()) * 0.5;
    Ok(StateDistribution { mean_state: euler_mean(&pred.mean_accel, s, dt), covariance: cov })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Transition;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(n_links: usize, n: usize, seed: u64) -> TransitionDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = TransitionDataset::new(n_links);
        let mut r = |k: usize| DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
        for _ in 0..n {
            d.push(Transition {
                state: State::new(r(n_links), r(n_links)),
                action: Action::new(r(n_links)),
                accel: r(n_links),
            })
            .unwrap();
        }
        d
    }

    fn fixed(n_links: usize, sf: f64, ls: f64, sn: f64) -> HyperparamSpec {
        HyperparamSpec::Fixed(GpHyperparams::shared(
            n_links,
            KernelParams::new(sf, vec![ls; 3 * n_links], sn),
            MIN_JITTER,
        ))
    }

    #[test]
    fn single_point_posterior() {
        let mut d = TransitionDataset::new(1);
        let s = State::new(DVector::from_vec(vec![0.2]), DVector::from_vec(vec![-0.1]));
        let a = Action::from_slice(&[0.05]);
        d.push(Transition { state: s.clone(), action: a.clone(), accel: DVector::from_vec(vec![3.0]) })
            .unwrap();
        let m = GpModel::fit(&d, &fixed(1, 1.0, 1.0, 0.1), 0).unwrap();
        let p = m.predict(&s, &a).unwrap();
        assert!((p.mean_accel[0] - 3.0 / 1.1).abs() < 1e-9);
        assert!((p.accel_covariance[(0, 0)] - (1.0 - 1.0 / 1.1)).abs() < 1e-9);
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let d = random_dataset(2, 20, 1);
        let m = GpModel::fit(&d, &fixed(2, 1.7, 0.5, 0.01), 0).unwrap();
        let far = State::new(DVector::from_vec(vec![50.0, 50.0]), DVector::zeros(2));
        let p = m.predict(&far, &Action::zeros(2)).unwrap();
        for j in 0..2 {
            assert!(p.mean_accel[j].abs() < 1e-6);
            assert!((p.accel_covariance[(j, j)] - 1.7).abs() < 1e-6);
        }
    }

    #[test]
    fn interpolates_with_jitter_only_noise() {
        let d = random_dataset(1, 15, 2);
        let m = GpModel::fit(&d, &fixed(1, 1.0, 0.7, MIN_JITTER), 0).unwrap();
        for t in &d {
            let p = m.predict(&t.state, &t.action).unwrap();
            assert!((p.mean_accel[0] - t.accel[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn refit_is_bit_identical() {
        let d = random_dataset(2, 30, 3);
        let spec = HyperparamSpec::Optimize(OptimizeOptions { iterations: 10, ..Default::default() });
        let a = GpModel::fit(&d, &spec, 9).unwrap();
        let b = GpModel::fit(&d, &spec, 9).unwrap();
        for j in 0..2 {
            assert_eq!(a.alpha(j), b.alpha(j));
        }
        assert_eq!(a.hyperparams(), b.hyperparams());
    }

    #[test]
    fn empty_dataset_rejected() {
        let d = TransitionDataset::new(2);
        assert!(matches!(GpModel::fit(&d, &fixed(2, 1.0, 1.0, 0.1), 0), Err(Error::InvalidInput(_))));
        let m = GpModel::fit(&random_dataset(2, 3, 0), &fixed(2, 1.0, 1.0, 0.1), 0).unwrap();
        assert!(m.prediction_error(&d).is_err());
    }

    #[test]
    fn zero_targets_give_zero_gradient() {
        let mut d = random_dataset(2, 10, 4);
        let mut zeroed = TransitionDataset::new(2);
        for t in d.iter() {
            let mut t = t.clone();
            t.accel = DVector::zeros(2);
            zeroed.push(t).unwrap();
        }
        d = zeroed;
        let m = GpModel::fit(&d, &fixed(2, 1.0, 1.0, 0.1), 0).unwrap();
        let (gx, gu) = m.predict_gradients(&State::zeros(2), &Action::zeros(2)).unwrap();
        assert!(gx.iter().chain(gu.iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn symmetric_layout_has_zero_gradient_on_axis() {
        let mut d = TransitionDataset::new(1);
        for x in [-1.0, 1.0] {
            d.push(Transition {
                state: State::new(DVector::from_vec(vec![x]), DVector::zeros(1)),
                action: Action::zeros(1),
                accel: DVector::from_vec(vec![2.0]),
            })
            .unwrap();
        }
        let m = GpModel::fit(&d, &fixed(1, 1.0, 0.8, 0.01), 0).unwrap();
        let (gx, _) = m.predict_gradients(&State::zeros(1), &Action::zeros(1)).unwrap();
        assert!(gx[(0, 0)].abs() < 1e-14);
    }

    #[test]
    fn integrate_scalar_covariance() {
        let dt = 0.1;
        let v = 2.0;
        let pred = GaussianPrediction {
            mean_accel: DVector::from_vec(vec![1.0]),
            accel_covariance: DMatrix::from_element(1, 1, v),
        };
        let out = integrate(&pred, &State::zeros(1), dt).unwrap();
        let c = &out.covariance;
        assert!((c[(1, 1)] - dt.powi(2) * v).abs() < 1e-15);
        assert!((c[(0, 0)] - dt.powi(4) * v).abs() < 1e-15);
        assert!((c[(0, 1)] - dt.powi(3) * v).abs() < 1e-15);
        assert_eq!(c[(0, 1)], c[(1, 0)]);
    }

    #[test]
    fn integrate_mean_and_zero_covariance() {
        let pred = GaussianPrediction {
            mean_accel: DVector::from_vec(vec![1.0, 0.0]),
            accel_covariance: DMatrix::zeros(2, 2),
        };
        let out = integrate(&pred, &State::zeros(2), 0.1).unwrap();
        assert!((out.mean_state.theta_dot[0] - 0.1).abs() < 1e-15);
        assert!((out.mean_state.theta[0] - 0.01).abs() < 1e-15);
        assert_eq!(out.mean_state.theta[1], 0.0);
        assert!(out.covariance.iter().all(|v| *v == 0.0));
        assert!(integrate(&pred, &State::zeros(2), 0.0).is_err());
    }

    #[test]
    fn rollout_lengths_and_determinism() {
        let d = random_dataset(2, 25, 5);
        let m = GpModel::fit(&d, &fixed(2, 1.0, 1.0, 0.01), 0).unwrap();
        let r0 = m.rollout_mean(&State::zeros(2), &[], 0.01, 100.0).unwrap();
        assert_eq!(r0.states, vec![State::zeros(2)]);
        let controls: Vec<Action> = (0..20).map(|t| Action::from_slice(&[0.1 * t as f64, -0.2])).collect();
        let a = m.rollout_mean(&State::zeros(2), &controls, 0.01, 100.0).unwrap();
        let b = m.rollout_mean(&State::zeros(2), &controls, 0.01, 100.0).unwrap();
        assert_eq!(a.states.len(), 21);
        assert_eq!(a, b);
    }

    #[test]
    fn rollout_flags_divergence() {
        let mut d = TransitionDataset::new(1);
        d.push(Transition {
            state: State::zeros(1),
            action: Action::zeros(1),
            accel: DVector::from_vec(vec![1e5]),
        })
        .unwrap();
        let m = GpModel::fit(&d, &fixed(1, 1e10, 10.0, 1.0), 0).unwrap();
        let controls = vec![Action::zeros(1); 10];
        let r = m.rollout_mean(&State::zeros(1), &controls, 0.01, 100.0).unwrap();
        assert!(r.diverged);
        assert!(r.states.len() < 11);
    }

    #[test]
    fn prediction_error_on_training_data_is_small() {
        let d = random_dataset(2, 20, 6);
        let m = GpModel::fit(&d, &fixed(2, 1.0, 0.8, 1e-8), 0).unwrap();
        assert!(m.prediction_error(&d).unwrap() < 1e-3);
    }

    #[test]
    fn save_load_round_trip() {
        let d = random_dataset(2, 12, 7);
        let m = GpModel::fit(&d, &fixed(2, 1.3, 0.9, 0.02), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        let back = GpModel::load(&path).unwrap();
        assert_eq!(back.inputs(), m.inputs());
        assert_eq!(back.hyperparams(), m.hyperparams());
        assert_eq!(back.alpha(0), m.alpha(0));
        std::fs::write(&path, "{\"format\": \"nope\"}").unwrap();
        assert!(GpModel::load(&path).is_err());
    }
}
