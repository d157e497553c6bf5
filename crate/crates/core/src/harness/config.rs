//! Experiment configuration, loaded from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProblemParams;
use crate::pipeline::RelaxationOptions;
use crate::pipeline::RoundingOptions;
use crate::preprocess::CenteringMode;
use crate::program::ProgramOptions;
use crate::sdp::SolverOptions;
use crate::synth::SpecOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// A fresh planted instance per seed.
    Generated {
        #[serde(default)]
        spec: SpecOptions,
        n_samples: usize,
    },
    /// A CSV dataset, optionally with a ground-truth sidecar.
    File {
        path: PathBuf,
        #[serde(default)]
        truth: Option<PathBuf>,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Generated {
            spec: SpecOptions::default(),
            n_samples: 400,
        }
    }
}

/// Thresholds a run must meet to count as a recovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Targets {
    /// Largest `|Pi_hat - Pi*|_F` among the list.
    pub frobenius: f64,
    /// Relative predictor error `|v_hat - v*| / |v*|`.
    pub predictor_relative: f64,
    /// Conditional mean loss as a multiple of `sigma^2`.
    pub loss_sigma_sq: f64,
}

impl Default for Targets {
    fn default() -> Self {
        Self {
            frobenius: 0.3,
            predictor_relative: 0.1,
            loss_sigma_sq: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// `params.ell` is the relaxation degree.
    pub params: ProblemParams,
    /// Replace `params.mu` by the planted coverage `|I_good'| / N'` when a
    /// ground truth is available.
    pub mu_from_truth: bool,
    /// Raise C, alpha and beta to this multiple of what the planted
    /// solution needs; requires a ground truth.
    pub calibration_margin: Option<f64>,
    pub k: usize,
    pub min_term_size: usize,
    pub centering: CenteringMode,
    pub program: ProgramOptions,
    pub relaxation: RelaxationOptions,
    /// Random matrices added to the canonical test family.
    pub q_random: usize,
    /// `rounding.list_constant / mu` sets the multiset size.
    pub rounding: RoundingOptions,
    /// Run the exhaustive oracle when the term family is small enough.
    pub oracle: bool,
    pub targets: Targets,
    pub seeds: Vec<u64>,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            params: ProblemParams::default(),
            mu_from_truth: true,
            calibration_margin: Some(1.5),
            k: 1,
            min_term_size: 1,
            centering: CenteringMode::MeanZero,
            program: ProgramOptions::default(),
            relaxation: RelaxationOptions {
                solver: SolverOptions {
                    tol: 1e-5,
                    max_iters: 1500,
                    ..Default::default()
                },
                ..Default::default()
            },
            q_random: 8,
            rounding: RoundingOptions::default(),
            oracle: true,
            targets: Targets::default(),
            seeds: vec![0],
            output: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses `path` and resolves relative dataset paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a partial config. Missing fields, at any depth, keep the
    /// values of `ExperimentConfig::default()` rather than the defaults of
    /// the nested type.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: serde_json::Value = serde_json::from_str(text)?;
        let mut base = serde_json::to_value(Self::default())?;
        merge(&mut base, user);
        Ok(serde_json::from_value(base)?)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetSource::File { path, truth } = &mut self.dataset {
            fix(path);
            if let Some(t) = truth {
                fix(t);
            }
        }
        if let Some(o) = &mut self.output {
            fix(o);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        match &self.dataset {
            DatasetSource::Generated { spec, n_samples } => {
                if *n_samples == 0 {
                    return Err(Error::Input("n_samples must be positive".into()));
                }
                if spec.d == 0 || spec.n_attrs == 0 {
                    return Err(Error::Input("generator needs n_attrs >= 1 and d >= 1".into()));
                }
            }
            DatasetSource::File { path, truth } => {
                for p in std::iter::once(path).chain(truth) {
                    if !p.is_file() {
                        return Err(Error::Input(format!("{} does not exist", p.display())));
                    }
                }
            }
        }
        if self.k == 0 {
            return Err(Error::Input("k must be at least 1".into()));
        }
        if let Some(m) = self.calibration_margin {
            if !(m >= 1.0) {
                return Err(Error::Input(format!("calibration margin must be >= 1, got {m}")));
            }
        }
        if !(self.rounding.list_constant > 0.0) {
            return Err(Error::Input("list_constant must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Input("at least one seed is required".into()));
        }
        Ok(())
    }

    /// Applies a `--degree` override.
    pub fn set_degree(&mut self, ell: usize) -> Result<()> {
        self.params.ell = ell;
        self.params.validate()
    }
}

/// Overlays `over` onto `base`. Objects merge key by key unless their
/// `kind` tags differ, in which case `over` replaces `base` outright.
fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    use serde_json::Value;
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            let same_kind = match (b.get("kind"), o.get("kind")) {
                (Some(x), Some(y)) => x == y,
                _ => true,
            };
            if !same_kind {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}
