//! Squared-loss tables and the weighted greedy cover that turns a
//! predictor into a condition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{KDnf, ProblemParams, Term};
use crate::pipeline::RegressionModel;
use crate::preprocess::PreparedDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTable {
    /// `f_i(v) = (z_i - <v, [1, y_i]>)^2` per duplicated sample.
    pub sample: Vec<f64>,
    pub term_sum: Vec<f64>,
    /// `f_{I_j}(v)`; zero for empty terms.
    pub term_mean: Vec<f64>,
}

pub fn compute_losses(model: &RegressionModel, pd: &PreparedDataset) -> Result<LossTable> {
    if model.v_hat.len() != pd.d + 1 {
        return Err(Error::Input(format!(
            "model has {} coefficients, dataset needs {}",
            model.v_hat.len(),
            pd.d + 1
        )));
    }
    let sample: Vec<f64> = pd
        .samples
        .iter()
        .map(|s| {
            let pred: f64 = s.regressor().iter().zip(&model.v_hat).map(|(a, b)| a * b).sum();
            (s.response() - pred).powi(2)
        })
        .collect();
    let term_sum: Vec<f64> = pd
        .terms
        .iter()
        .map(|t| t.member_ids.iter().map(|&i| sample[i]).sum())
        .collect();
    let term_mean = pd
        .terms
        .iter()
        .zip(&term_sum)
        .map(|(t, s)| if t.weight() > 0 { s / t.weight() as f64 } else { 0.0 })
        .collect();
    Ok(LossTable {
        sample,
        term_sum,
        term_mean,
    })
}

/// Outcome of a successful greedy cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cover {
    pub dnf: KDnf,
    /// Indices of the admitted terms, in admission order.
    pub terms: Vec<usize>,
    /// Covered duplicated points.
    pub covered: usize,
    /// Sum of the admitted terms' loss sums.
    pub loss: f64,
}

/// Largest per-term loss sum a term may have to be admitted.
pub fn eligibility_bound(pd: &PreparedDataset, params: &ProblemParams) -> f64 {
    (1.0 + params.gamma) * params.mu * params.epsilon_target * pd.n_prime() as f64
}

/// Coverage a cover must reach, `(1 - gamma/2) mu N'`.
pub fn coverage_target(pd: &PreparedDataset, params: &ProblemParams) -> f64 {
    (1.0 - params.gamma / 2.0) * params.mu * pd.n_prime() as f64
}

/// Admits eligible terms by newly covered points, then lower loss, then
/// lower index, until the coverage target is met.
pub fn greedy_cover(losses: &LossTable, pd: &PreparedDataset, params: &ProblemParams) -> Result<Cover> {
    let bound = eligibility_bound(pd, params);
    let target = coverage_target(pd, params);
    let mut remaining: Vec<usize> = (0..pd.m())
        .filter(|&j| pd.terms[j].weight() > 0 && losses.term_sum[j] <= bound)
        .collect();
    let mut covered_mask = vec![false; pd.n_prime()];
    let mut covered = 0usize;
    let mut chosen = Vec::new();
    let mut loss = 0.0;
    while (covered as f64) < target {
        let gain = |j: usize| pd.terms[j].member_ids.iter().filter(|&&i| !covered_mask[i]).count();
        let best = remaining
            .iter()
            .enumerate()
            .map(|(pos, &j)| (pos, j, gain(j)))
            .filter(|&(_, _, g)| g > 0)
            .min_by(|a, b| {
                b.2.cmp(&a.2)
                    .then(losses.term_sum[a.1].total_cmp(&losses.term_sum[b.1]))
                    .then(a.1.cmp(&b.1))
            });
        let Some((pos, j, g)) = best else {
            return Err(Error::CoverFailure {
                coverage: covered,
                required: target,
                loss,
            });
        };
        remaining.remove(pos);
        for &i in &pd.terms[j].member_ids {
            covered_mask[i] = true;
        }
        covered += g;
        loss += losses.term_sum[j];
        chosen.push(j);
    }
    let dnf = KDnf::new(
        chosen
            .iter()
            .map(|&j| Term {
                literals: pd.terms[j].literals.clone(),
                member_ids: Vec::new(),
            })
            .collect(),
    );
    Ok(Cover {
        dnf,
        terms: chosen,
        covered,
        loss,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    /// Covered duplicated points over `N'`.
    pub coverage: f64,
    pub covered: usize,
    /// `None` when nothing is covered.
    pub conditional_mean_loss: Option<f64>,
    pub total_loss: f64,
}

/// Scores `(model, c)` over the duplicated points owned by a term of `c`.
/// Terms are disjoint after duplication, so this is the coverage the greedy
/// cover counts.
pub fn score_pair(model: &RegressionModel, c: &KDnf, pd: &PreparedDataset) -> Result<PairScore> {
    let losses = compute_losses(model, pd)?;
    let owned: Vec<bool> = pd
        .terms
        .iter()
        .map(|t| c.terms.iter().any(|ct| ct.same_condition(t)))
        .collect();
    let mut covered = 0usize;
    let mut total = 0.0;
    for (i, &j) in pd.sample_term.iter().enumerate() {
        if owned[j] {
            covered += 1;
            total += losses.sample[i];
        }
    }
    let n = pd.n_prime();
    Ok(PairScore {
        coverage: if n > 0 { covered as f64 / n as f64 } else { 0.0 },
        covered,
        conditional_mean_loss: (covered > 0).then(|| total / covered as f64),
        total_loss: total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPair {
    /// Position of the winning model in the input list.
    pub index: usize,
    pub model: RegressionModel,
    pub cover: Cover,
    pub score: PairScore,
}

/// Covers every model and keeps the lowest conditional mean loss, breaking
/// ties by higher coverage and then by list order.
pub fn best_pair(models: &[RegressionModel], pd: &PreparedDataset, params: &ProblemParams) -> Result<BestPair> {
    if models.is_empty() {
        return Err(Error::Input("no candidate models to cover".into()));
    }
    let mut best: Option<BestPair> = None;
    let mut failures = Vec::new();
    for (index, model) in models.iter().enumerate() {
        let attempt = compute_losses(model, pd).and_then(|l| greedy_cover(&l, pd, params));
        let cover = match attempt {
            Ok(c) => c,
            Err(e) => {
                failures.push(format!("model {index}: {e}"));
                continue;
            }
        };
        let score = score_pair(model, &cover.dnf, pd)?;
        let loss = score.conditional_mean_loss.unwrap_or(f64::INFINITY);
        let better = match &best {
            None => true,
            Some(b) => {
                let bl = b.score.conditional_mean_loss.unwrap_or(f64::INFINITY);
                loss < bl || (loss == bl && score.coverage > b.score.coverage)
            }
        };
        if better {
            let mut model = model.clone();
            model.condition = Some(cover.dnf.clone());
            best = Some(BestPair {
                index,
                model,
                cover,
                score,
            });
        }
    }
    best.ok_or(Error::AllCoversFailed(failures))
}
