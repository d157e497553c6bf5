//! Run reports, their timing sidecars and the cross-seed summary.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::run::{Seeds, Stage};
use crate::model::ProblemParams;
use crate::program::RequiredConstants;
use crate::sdp::SolveStatus;

/// Bumped whenever a report field changes meaning or disappears.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceInfo {
    pub n: usize,
    pub n_attrs: usize,
    pub d: usize,
    pub m: usize,
    pub n_prime: usize,
    pub unassigned: usize,
    pub term_sizes: Vec<usize>,
    pub terms: Vec<String>,
    pub planted_terms: Vec<usize>,
    /// Parameters after the coverage and calibration overrides.
    pub params: ProblemParams,
    pub calibration: Option<RequiredConstants>,
    pub q_family_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub min_block_eigenvalue: f64,
    pub objective: f64,
    pub moments: usize,
    pub equalities: usize,
    pub inequalities: usize,
    pub max_row_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightInfo {
    /// `sum_i E~[sel_i]` over all duplicated samples.
    pub total: f64,
    /// The same sum restricted to inliers inside the planted terms.
    pub inlier: Option<f64>,
    /// `mu^2 N'`.
    pub mu_sq_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateInfo {
    pub extracted: usize,
    pub omitted: usize,
    pub weighted_average: bool,
    /// Drawn multiset size.
    pub list_size: usize,
    /// Post-processed candidates in the list.
    pub list: usize,
    /// Candidates that yielded a predictor.
    pub models: usize,
    pub best_frobenius: Option<f64>,
    pub best_frobenius_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairInfo {
    /// Position of the winning model in the model list.
    pub index: usize,
    pub source: usize,
    pub v_hat: Vec<f64>,
    pub v_relative_error: Option<f64>,
    pub condition: String,
    pub cover_terms: Vec<usize>,
    pub cover_covered: usize,
    pub cover_loss: f64,
    pub coverage: f64,
    pub covered: usize,
    pub conditional_mean_loss: Option<f64>,
    pub total_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleInfo {
    pub condition: Option<String>,
    pub terms: Vec<usize>,
    pub v_hat: Vec<f64>,
    pub coverage: Option<f64>,
    pub conditional_mean_loss: Option<f64>,
    pub subsets_checked: usize,
    /// Pipeline loss minus oracle loss.
    pub loss_gap: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Success {
    /// `None` without a ground truth.
    pub frobenius: Option<bool>,
    pub predictor: Option<bool>,
    pub loss: bool,
    pub all: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureInfo {
    pub stage: Stage,
    pub error: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub seed: u64,
    pub seeds: Seeds,
    pub config: ExperimentConfig,
    pub instance: InstanceInfo,
    pub solver: SolverInfo,
    pub weights: WeightInfo,
    pub candidates: CandidateInfo,
    pub pair: Option<PairInfo>,
    pub oracle: Option<OracleInfo>,
    pub success: Success,
    pub failure: Option<FailureInfo>,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn exit_code(&self) -> i32 {
        self.failure.as_ref().map_or(0, |f| f.exit_code)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub seed: u64,
    pub stages: Vec<StageTiming>,
    pub total_seconds: f64,
}

/// `report.json` pairs with `report.timings.json`.
pub fn timings_path(report: &Path) -> PathBuf {
    report.with_extension("timings.json")
}

pub fn read_report(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let r: Report = serde_json::from_str(&text)?;
    if r.schema_version != SCHEMA_VERSION {
        return Err(Error::Input(format!(
            "{}: schema version {} is not {SCHEMA_VERSION}",
            path.display(),
            r.schema_version
        )));
    }
    Ok(r)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Cross-seed aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub failures: usize,
    pub frobenius_pass: usize,
    pub predictor_pass: usize,
    pub loss_pass: usize,
    pub all_pass: usize,
    /// Seeds whose inlier weight reaches `0.95 mu^2 N'`.
    pub weight_bound_pass: usize,
    pub median_best_frobenius: Option<f64>,
    pub median_v_relative_error: Option<f64>,
    pub median_conditional_mean_loss: Option<f64>,
}

/// Fraction of `mu^2 N'` the inlier weight must reach to count.
pub const WEIGHT_BOUND_FACTOR: f64 = 0.95;

impl WeightInfo {
    pub fn bound_holds(&self) -> Option<bool> {
        self.inlier.map(|w| w >= WEIGHT_BOUND_FACTOR * self.mu_sq_n)
    }
}

pub fn summarize(reports: &[Report]) -> Summary {
    let count = |f: &dyn Fn(&Report) -> bool| reports.iter().filter(|r| f(r)).count();
    Summary {
        schema_version: SCHEMA_VERSION,
        runs: reports.len(),
        seeds: reports.iter().map(|r| r.seed).collect(),
        failures: count(&|r| r.failure.is_some()),
        frobenius_pass: count(&|r| r.success.frobenius == Some(true)),
        predictor_pass: count(&|r| r.success.predictor == Some(true)),
        loss_pass: count(&|r| r.success.loss),
        all_pass: count(&|r| r.success.all),
        weight_bound_pass: count(&|r| r.weights.bound_holds() == Some(true)),
        median_best_frobenius: median(reports.iter().filter_map(|r| r.candidates.best_frobenius).collect()),
        median_v_relative_error: median(
            reports
                .iter()
                .filter_map(|r| r.pair.as_ref().and_then(|p| p.v_relative_error))
                .collect(),
        ),
        median_conditional_mean_loss: median(
            reports
                .iter()
                .filter_map(|r| r.pair.as_ref().and_then(|p| p.conditional_mean_loss))
                .collect(),
        ),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per seed.
pub fn summary_csv(reports: &[Report]) -> String {
    let mut out = String::from(
        "seed,status,iterations,best_frobenius,v_relative_error,coverage,conditional_mean_loss,oracle_loss,inlier_weight,mu_sq_n,success\n",
    );
    for r in reports {
        let status = match &r.failure {
            Some(f) => format!("{}_failure", f.stage),
            None => "ok".into(),
        };
        let p = r.pair.as_ref();
        let row = [
            r.seed.to_string(),
            status,
            r.solver.iterations.to_string(),
            cell(r.candidates.best_frobenius),
            cell(p.and_then(|p| p.v_relative_error)),
            cell(p.map(|p| p.coverage)),
            cell(p.and_then(|p| p.conditional_mean_loss)),
            cell(r.oracle.as_ref().and_then(|o| o.conditional_mean_loss)),
            cell(r.weights.inlier),
            r.weights.mu_sq_n.to_string(),
            r.success.all.to_string(),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![]), None);
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn weight_bound() {
        let w = WeightInfo {
            total: 10.0,
            inlier: Some(9.5),
            mu_sq_n: 10.0,
        };
        assert_eq!(w.bound_holds(), Some(true));
        let w = WeightInfo { inlier: Some(9.4), ..w };
        assert_eq!(w.bound_holds(), Some(false));
        assert_eq!(WeightInfo { inlier: None, ..w }.bound_holds(), None);
    }

    #[test]
    fn timings_sit_next_to_the_report() {
        assert_eq!(timings_path(Path::new("out/r.json")), PathBuf::from("out/r.timings.json"));
    }
}
