//! Versioned TOML experiment configuration.
//!
//! Every key is optional; an empty file yields the default two-link reaching
//! experiment. Layout:
//!
//! ```toml
//! version = 1
//! mode = ["curious", "normal", "random"]   # or a single string
//! n_iterations = 5
//! n_seeds = 10
//! seed_base = 0
//! output_dir = "runs"
//! workers = 1
//! babble_duration = 0.5
//! babble_torque_std = 0.01
//! random_noise_std = 0.4472135954999579
//! cold_start = false
//!
//! [arm]      # ArmParams fields
//! [cost]     # q_pos, q_vel, r_ctrl, terminal_scale
//! [solver]   # SolverConfig fields (sigma applies to curious mode)
//! [task]     # start_theta, targets = [[..], ..]
//! [gp]       # hyperparameter search options
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::arm::ArmParams;
use crate::cost::ReachingCost;
use crate::error::{Error, Result};
use crate::gp::OptimizeOptions;
use crate::ilqr::SolverConfig;
use crate::mbrl::{ExplorationMode, MbrlSettings};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    Curious,
    Normal,
    Random,
}

impl ModeKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Curious => "curious",
            Self::Normal => "normal",
            Self::Random => "random",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(ModeKind),
    Many(Vec<ModeKind>),
}

fn modes_de<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<ModeKind>, D::Error> {
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(m) => vec![m],
        OneOrMany::Many(v) => v,
    })
}

/// Cost weights; the target comes from the task section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    pub q_pos: f64,
    pub q_vel: f64,
    pub r_ctrl: f64,
    pub terminal_scale: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        let c = ReachingCost::new(DVector::zeros(1));
        Self { q_pos: c.q_pos, q_vel: c.q_vel, r_ctrl: c.r_ctrl, terminal_scale: c.terminal_scale }
    }
}

impl CostWeights {
    pub fn for_target(&self, target: &[f64]) -> ReachingCost {
        ReachingCost {
            target_theta: DVector::from_column_slice(target),
            q_pos: self.q_pos,
            q_vel: self.q_vel,
            r_ctrl: self.r_ctrl,
            terminal_scale: self.terminal_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub start_theta: Vec<f64>,
    /// Joint-space targets; seed `k` trains towards `targets[k % len]`.
    pub targets: Vec<Vec<f64>>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self { start_theta: vec![0.0, 0.0], targets: vec![vec![1.0, 0.8], vec![-0.9, 1.2]] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(deserialize_with = "modes_de")]
    pub mode: Vec<ModeKind>,
    pub n_iterations: usize,
    pub n_seeds: usize,
    pub seed_base: u64,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub babble_duration: f64,
    pub babble_torque_std: f64,
    pub random_noise_std: f64,
    pub cold_start: bool,
    pub arm: ArmParams,
    pub cost: CostWeights,
    pub solver: SolverConfig,
    pub task: TaskConfig,
    pub gp: OptimizeOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let settings = MbrlSettings::default();
        Self {
            version: CONFIG_VERSION,
            mode: vec![ModeKind::Curious],
            n_iterations: 5,
            n_seeds: 10,
            seed_base: 0,
            output_dir: PathBuf::from("runs"),
            workers: 1,
            babble_duration: settings.babble_duration,
            babble_torque_std: settings.babble_torque_std,
            random_noise_std: 0.2f64.sqrt(),
            cold_start: settings.cold_start,
            arm: ArmParams::default(),
            cost: CostWeights::default(),
            solver: SolverConfig::default(),
            task: TaskConfig::default(),
            gp: settings.gp,
        }
    }
}

fn invalid(field: &str, bound: &str, got: impl std::fmt::Debug) -> Error {
    Error::Config(format!("{field} must be {bound}, got {got:?}"))
}

fn unknown_keys(given: &toml::Table, known: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, known.get(k)) {
            (_, None) => out.push(path),
            (toml::Value::Table(g), Some(toml::Value::Table(kn))) => unknown_keys(g, kn, &path, out),
            _ => {}
        }
    }
}

impl ExperimentConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let known = toml::Table::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?;
        let mut unknown = Vec::new();
        unknown_keys(&table, &known, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Parse { path: path.to_path_buf(), message: m },
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(invalid("version", &format!("{CONFIG_VERSION}"), self.version));
        }
        if self.mode.is_empty() {
            return Err(invalid("mode", "a non-empty list", &self.mode));
        }
        let distinct: BTreeSet<_> = self.mode.iter().collect();
        if distinct.len() != self.mode.len() {
            return Err(invalid("mode", "free of duplicates", &self.mode));
        }
        if self.n_seeds == 0 {
            return Err(invalid("n_seeds", ">= 1", self.n_seeds));
        }
        if self.workers == 0 {
            return Err(invalid("workers", ">= 1", self.workers));
        }
        if !(self.babble_duration >= 0.0 && self.babble_duration.is_finite()) {
            return Err(invalid("babble_duration", ">= 0", self.babble_duration));
        }
        if !(self.babble_torque_std >= 0.0 && self.babble_torque_std.is_finite()) {
            return Err(invalid("babble_torque_std", ">= 0", self.babble_torque_std));
        }
        if !(self.random_noise_std >= 0.0 && self.random_noise_std.is_finite()) {
            return Err(invalid("random_noise_std", ">= 0", self.random_noise_std));
        }
        self.arm.validate().map_err(|e| Error::Config(format!("arm: {e}")))?;
        self.solver.validate().map_err(|e| Error::Config(format!("solver: {e}")))?;
        if self.mode.contains(&ModeKind::Curious) && !(self.solver.sigma < 0.0) {
            return Err(invalid("solver.sigma", "< 0 for curious mode", self.solver.sigma));
        }
        let n = self.arm.n_links;
        if self.task.start_theta.len() != n {
            return Err(invalid("task.start_theta", &format!("of length arm.n_links = {n}"), &self.task.start_theta));
        }
        if self.task.targets.is_empty() {
            return Err(invalid("task.targets", "non-empty", &self.task.targets));
        }
        for (i, t) in self.task.targets.iter().enumerate() {
            if t.len() != n || t.iter().any(|v| !v.is_finite()) {
                return Err(invalid(&format!("task.targets[{i}]"), &format!("{n} finite joint angles"), t));
            }
        }
        for t in &self.task.targets {
            self.cost.for_target(t).validate().map_err(|e| Error::Config(format!("cost: {e}")))?;
        }
        if !(self.gp.restarts >= 1 && self.gp.learning_rate > 0.0 && self.gp.log10_box > 0.0) {
            return Err(invalid("gp", "restarts >= 1, learning_rate > 0, log10_box > 0", &self.gp));
        }
        Ok(())
    }

    /// Solver settings with the arm's time step.
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig { dt: self.arm.dt, ..self.solver.clone() }
    }

    pub fn exploration_mode(&self, kind: ModeKind) -> ExplorationMode {
        match kind {
            ModeKind::Curious => ExplorationMode::Curious { sigma: self.solver.sigma },
            ModeKind::Normal => ExplorationMode::Normal,
            ModeKind::Random => ExplorationMode::Random { noise_std: self.random_noise_std },
        }
    }

    pub fn settings(&self) -> MbrlSettings {
        MbrlSettings {
            babble_duration: self.babble_duration,
            babble_torque_std: self.babble_torque_std,
            start_theta: self.task.start_theta.clone(),
            cold_start: self.cold_start,
            gp: self.gp.clone(),
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|k| self.seed_base + k).collect()
    }

    /// Training target for seed `seed`.
    pub fn target_for(&self, seed: u64) -> &[f64] {
        let i = (seed - self.seed_base) as usize % self.task.targets.len();
        &self.task.targets[i]
    }
}
