//! Experiment configuration: one TOML file of flat tables, every key
//! optional, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use youla_core::lincontrol::{LinearPair, RiccatiOptions};
use youla_core::linalg::Mat;
use youla_core::plant::{linearize, CartPoleParams, ObstacleField, ObstacleTask};
use youla_core::policy::PolicyArch;
use youla_core::training::TrainConfig;
use youla_core::verify::LesOptions;

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub plant: CartPoleParams,
    pub obstacles: ObstacleField,
    pub lqr: LqrSection,
    pub policy: PolicyArch,
    pub train: TrainConfig,
    pub verify: VerifySection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqrSection {
    /// Diagonal of the state weight.
    pub q: Vec<f64>,
    /// Diagonal of the input weight.
    pub r: Vec<f64>,
    pub riccati: RiccatiOptions,
    /// Replaces the cart–pendulum linearization when both are given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
}

impl Default for LqrSection {
    fn default() -> Self {
        Self { q: vec![10.0, 1.0, 100.0, 1.0], r: vec![0.1], riccati: RiccatiOptions::default(), a: None, b: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    /// Random parameter draws and initial states for `verify les`.
    pub draws: usize,
    /// Radius of the initial states for decay and tail checks.
    pub radius: f64,
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
    /// Radii probed for the empirical convergence radius.
    pub radii: Vec<f64>,
    /// Nominal initial state for `eval` and the stored trajectory.
    pub x0: Vec<f64>,
    /// Horizon of the necessity equivalence check.
    pub necessity_horizon: f64,
    pub necessity_draws: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        let les = LesOptions::default();
        Self {
            draws: les.draws,
            radius: les.radius,
            horizon: les.horizon,
            step: les.h,
            seed: les.seed,
            radii: les.radii,
            x0: vec![0.0, 0.0, 0.05, 0.0],
            necessity_horizon: 5.0,
            necessity_draws: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs") }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Usage(format!("{origin}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text, &p.display().to_string())
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.plant.validate()?;
        self.obstacles.validate()?;
        self.train.validate()?;
        if self.verify.x0.len() != 4 {
            return Err(CliError::Usage(format!("verify.x0 needs 4 entries, got {}", self.verify.x0.len())));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn task(&self) -> ObstacleTask {
        ObstacleTask::new(self.plant, self.obstacles.clone())
    }

    /// `(A, B)`: the override when given, else the linearized cart–pendulum.
    pub fn linear_pair(&self) -> Result<LinearPair, CliError> {
        let (a, b) = match (&self.lqr.a, &self.lqr.b) {
            (Some(a), Some(b)) => (Mat::from_rows(a)?, Mat::from_rows(b)?),
            (None, None) => linearize(&self.task().plant)?,
            _ => return Err(CliError::Usage("lqr.a and lqr.b must be given together".into())),
        };
        Ok(LinearPair::new(a, b)?)
    }

    pub fn weights(&self) -> (Mat, Mat) {
        (Mat::diag(&self.lqr.q), Mat::diag(&self.lqr.r))
    }

    pub fn les_options(&self) -> LesOptions {
        LesOptions {
            draws: self.verify.draws,
            radius: self.verify.radius,
            horizon: self.verify.horizon,
            h: self.verify.step,
            quad_weight: self.obstacles.gamma1,
            seed: self.verify.seed,
            radii: self.verify.radii.clone(),
        }
    }
}
