//! Exhaustive search over term subsets, used as ground truth for small
//! instances.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cover::{score_pair, PairScore};
use crate::error::{Error, Result};
use crate::linalg::solve_normal;
use crate::model::{KDnf, ProblemParams, Term};
use crate::pipeline::RegressionModel;
use crate::preprocess::PreparedDataset;

/// Largest term family the oracle enumerates.
pub const MAX_ORACLE_TERMS: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Chosen term indices, ascending.
    pub terms: Vec<usize>,
    pub dnf: KDnf,
    pub model: RegressionModel,
    /// Scored exactly like a pipeline pair.
    pub score: PairScore,
    pub subsets_checked: usize,
}

/// Sufficient statistics of one term's duplicated members.
struct Stats {
    count: usize,
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    zz: f64,
}

/// Enumerates every term subset whose members number at least `mu N'`,
/// fits ordinary least squares on the union and keeps the lowest
/// conditional mean loss. Ties go to the earlier subset in bitmask order.
pub fn brute_force_oracle(pd: &PreparedDataset, params: &ProblemParams) -> Result<OracleResult> {
    let m = pd.m();
    if m > MAX_ORACLE_TERMS {
        return Err(Error::Size(format!(
            "oracle enumerates 2^m subsets; m = {m} exceeds {MAX_ORACLE_TERMS}"
        )));
    }
    let p = pd.d + 1;
    let mut stats: Vec<Stats> = (0..m)
        .map(|_| Stats {
            count: 0,
            gram: DMatrix::zeros(p, p),
            rhs: DVector::zeros(p),
            zz: 0.0,
        })
        .collect();
    for (s, &j) in pd.samples.iter().zip(&pd.sample_term) {
        let x = DVector::from_column_slice(s.regressor());
        let z = s.response();
        let g = &mut stats[j];
        g.count += 1;
        g.gram += &x * x.transpose();
        g.rhs += &x * z;
        g.zz += z * z;
    }
    let floor = params.mu * pd.n_prime() as f64;

    let mut best: Option<(f64, u32)> = None;
    let mut checked = 0usize;
    for subset in 1u32..(1u32 << m) {
        let mut count = 0usize;
        let mut gram = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        let mut zz = 0.0;
        for g in (0..m).filter(|&j| subset & (1 << j) != 0).map(|j| &stats[j]) {
            count += g.count;
            gram += &g.gram;
            rhs += &g.rhs;
            zz += g.zz;
        }
        if count == 0 || (count as f64) < floor {
            continue;
        }
        checked += 1;
        let beta = solve_normal(&gram, &rhs);
        let sse = (zz - 2.0 * beta.dot(&rhs) + (beta.transpose() * &gram * &beta)[(0, 0)]).max(0.0);
        let loss = sse / count as f64;
        if best.is_none_or(|(l, _)| loss < l) {
            best = Some((loss, subset));
        }
    }
    let (_, subset) = best.ok_or(Error::OracleInfeasible)?;
    let terms: Vec<usize> = (0..m).filter(|&j| subset & (1 << j) != 0).collect();
    let dnf = KDnf::new(
        terms
            .iter()
            .map(|&j| Term {
                literals: pd.terms[j].literals.clone(),
                member_ids: Vec::new(),
            })
            .collect(),
    );
    // Refit on the explicit point set so the reported loss is exact.
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for (i, s) in pd.samples.iter().enumerate() {
        if subset & (1 << pd.sample_term[i]) != 0 {
            let x = DVector::from_column_slice(s.regressor());
            gram += &x * x.transpose();
            rhs += &x * s.response();
        }
    }
    let model = RegressionModel {
        v_hat: solve_normal(&gram, &rhs).iter().copied().collect(),
        source: 0,
        condition: Some(dnf.clone()),
    };
    let score = score_pair(&model, &dnf, pd)?;
    Ok(OracleResult {
        terms,
        dnf,
        model,
        score,
        subsets_checked: checked,
    })
}
