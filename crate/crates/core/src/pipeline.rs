//! Rounding the relaxation: solve, extract candidate projectors, draw the
//! candidate multiset, clean the candidates up and read off predictors.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen_sorted, symmetrize};
use crate::model::KDnf;
use crate::preprocess::PreparedDataset;
use crate::program::{CompiledProgram, Sparsity};
use crate::sdp::{solve, SdpSolution, SolveStatus, SolverOptions};
use crate::sos::{Polynomial, PseudoDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `sum_i E~[sel_i]^2`, the squared norm of the per-sample weights.
    #[default]
    SquaredWeights,
    /// `sum_j |I_j| E~[w_j]`, the total selected weight.
    TotalWeight,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RelaxationOptions {
    pub objective: Objective,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone)]
pub struct Relaxation {
    /// Solved pseudo-moments, indexed like `CompiledProgram::moments`.
    pub u: Vec<f64>,
    pub solution: SdpSolution,
    pub pseudo: PseudoDistribution,
}

impl Relaxation {
    pub fn status(&self) -> SolveStatus {
        self.solution.status
    }
}

/// Solves the compiled program under the chosen objective.
///
/// A stalled (infeasible) solve is an error; hitting the iteration limit is
/// not, and is reported through the solution status.
pub fn solve_relaxation(cp: &CompiledProgram, opts: &RelaxationOptions) -> Result<Relaxation> {
    let mut p = cp.problem.clone();
    let n_prime = cp.n_prime.max(1) as f64;
    for j in 0..cp.m() {
        let size = cp.term_sizes[j] as f64;
        match opts.objective {
            Objective::SquaredWeights => p.quadratic_objective.push((cp.w_index(j), size / n_prime)),
            Objective::TotalWeight => p.linear_objective.push((cp.w_index(j), size / n_prime)),
        }
    }
    let solution = solve(&p, &opts.solver)?;
    if solution.status == SolveStatus::Infeasible {
        return Err(Error::Infeasible {
            gap: solution.primal_residual,
            iterations: solution.iterations,
        });
    }
    let moments = cp.moment_vector(&solution.u)?;
    let pseudo = PseudoDistribution::unchecked(moments, solution.min_block_eigenvalue);
    Ok(Relaxation {
        u: solution.u.clone(),
        solution,
        pseudo,
    })
}

/// `E~[sel_i]` for every duplicated sample, where `sel_i = w_j` for the
/// term owning sample `i`.
pub fn selection_weights(cp: &CompiledProgram, u: &[f64], pd: &PreparedDataset) -> Vec<f64> {
    let per_term: Vec<f64> = (0..cp.m()).map(|j| u[cp.w_index(j)]).collect();
    pd.sample_term.iter().map(|&j| per_term[j]).collect()
}

/// Candidate projector extracted for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionCandidate {
    pub pi_hat: DMatrix<f64>,
    /// Duplicated sample index the candidate was read from.
    pub source: usize,
    /// Selection probability of the source sample.
    pub probability: f64,
    /// Whether the matrix has been rounded to a projector.
    pub post_processed: bool,
    /// Gap between the smallest kept and the largest dropped eigenvalue.
    pub spectral_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub candidates: Vec<ProjectionCandidate>,
    /// Samples whose selection weight was at or below the threshold.
    pub omitted: Vec<usize>,
    /// True when the weighted average over all terms was used; false when
    /// the program lacks the cross moments and each term's own ratio is used.
    pub weighted_average: bool,
}

/// Per-term numerators `E~[w_j Pi]` with `Pi` the weighted average
/// `sum_l w(I_l) Pi_l`, or `None` when a needed moment is missing.
fn weighted_average_numerators(cp: &CompiledProgram, u: &[f64]) -> Option<Vec<DMatrix<f64>>> {
    let m = cp.m();
    let dim = cp.vars.dim();
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        let wj = Polynomial::var(cp.vars.w(j));
        let mut num = DMatrix::zeros(dim, dim);
        for l in 0..m {
            let pi = cp.vars.pi_matrix(l);
            let weight = cp.term_sizes[l] as f64 / cp.mu_n;
            for a in 0..dim {
                for b in 0..dim {
                    let poly = &(&wj * &Polynomial::var(cp.vars.w(l))) * &pi[a][b];
                    num[(a, b)] += weight * cp.expect(u, &poly).ok()?;
                }
            }
        }
        out.push(num);
    }
    Some(out)
}

fn per_term_numerators(cp: &CompiledProgram, u: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let dim = cp.vars.dim();
    (0..cp.m())
        .map(|j| {
            let wj = Polynomial::var(cp.vars.w(j));
            let pi = cp.vars.pi_matrix(j);
            let mut num = DMatrix::zeros(dim, dim);
            for a in 0..dim {
                for b in 0..dim {
                    num[(a, b)] = cp.expect(u, &(&wj * &pi[a][b]))?;
                }
            }
            Ok(num)
        })
        .collect()
}

/// `Pi_hat_i = E~[sel_i Pi] / E~[sel_i]` for every sample whose weight
/// exceeds `threshold`.
pub fn extract_candidates(
    cp: &CompiledProgram,
    u: &[f64],
    pd: &PreparedDataset,
    threshold: f64,
) -> Result<Extraction> {
    let weighted = if cp.options.sparsity == Sparsity::Dense {
        weighted_average_numerators(cp, u)
    } else {
        None
    };
    let weighted_average = weighted.is_some();
    let numerators = match weighted {
        Some(n) => n,
        None => per_term_numerators(cp, u)?,
    };
    let sel = selection_weights(cp, u, pd);
    let total: f64 = sel.iter().map(|s| s.max(0.0)).sum();
    let per_term: Vec<Option<DMatrix<f64>>> = (0..cp.m())
        .map(|j| {
            let den = u[cp.w_index(j)];
            (den > threshold).then(|| symmetrize(&(&numerators[j] / den)))
        })
        .collect();
    let mut candidates = Vec::new();
    let mut omitted = Vec::new();
    for (i, &j) in pd.sample_term.iter().enumerate() {
        match &per_term[j] {
            Some(pi_hat) => candidates.push(ProjectionCandidate {
                pi_hat: pi_hat.clone(),
                source: i,
                probability: if total > 0.0 { sel[i].max(0.0) / total } else { 0.0 },
                post_processed: false,
                spectral_gap: None,
            }),
            None => omitted.push(i),
        }
    }
    Ok(Extraction {
        candidates,
        omitted,
        weighted_average,
    })
}

/// Draws `count` sample indices with probability `E~[sel_i] / (mu N')`.
///
/// Small negative weights from an inexact solve are clipped to zero. The
/// probabilities are renormalized when their sum is within `tol` of one.
pub fn sample_multiset(sel: &[f64], mu_n: f64, count: usize, seed: u64, tol: f64) -> Result<Vec<usize>> {
    if !(mu_n > 0.0) {
        return Err(Error::Input("mu N' must be positive".into()));
    }
    let probs: Vec<f64> = sel.iter().map(|s| s.max(0.0) / mu_n).collect();
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::Consistency(format!(
            "selection probabilities sum to {sum}, outside 1 +- {tol}"
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let dist = WeightedIndex::new(&probs).map_err(|e| Error::Consistency(format!("selection weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| dist.sample(&mut rng)).collect())
}

/// Nearest projector: the top `rank_hint` eigenvectors, or every eigenvector
/// with eigenvalue at least 1/2. Returns the projector and its spectral gap.
pub fn nearest_projector(m: &DMatrix<f64>, rank_hint: Option<usize>) -> (DMatrix<f64>, f64) {
    let n = m.nrows();
    let (vals, vecs) = sym_eigen_sorted(m);
    let rank = match rank_hint {
        Some(r) => r.min(n),
        None => vals.iter().filter(|&&v| v >= 0.5).count(),
    };
    let first = n - rank;
    let mut p = DMatrix::zeros(n, n);
    for c in first..n {
        let q = vecs.column(c);
        p += &q * q.transpose();
    }
    let kept = if rank > 0 { vals[first] } else { 1.0 };
    let dropped = if first > 0 { vals[first - 1] } else { 0.0 };
    (symmetrize(&p), kept - dropped)
}

pub fn project_to_projector(c: &ProjectionCandidate, rank_hint: Option<usize>) -> ProjectionCandidate {
    let (pi_hat, gap) = nearest_projector(&c.pi_hat, rank_hint);
    ProjectionCandidate {
        pi_hat,
        source: c.source,
        probability: c.probability,
        post_processed: true,
        spectral_gap: Some(gap),
    }
}

/// Linear predictor paired with the condition it is eventually scored on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    /// Intercept followed by the `d` slopes.
    pub v_hat: Vec<f64>,
    /// Source sample of the candidate the model came from.
    pub source: usize,
    pub condition: Option<KDnf>,
}

/// Null vector of the candidate with the largest response coordinate,
/// scaled so that coordinate equals -1.
pub fn recover_predictor(c: &ProjectionCandidate) -> Result<RegressionModel> {
    let n = c.pi_hat.nrows();
    let (vals, vecs) = sym_eigen_sorted(&c.pi_hat);
    let null: Vec<usize> = (0..n).filter(|&i| vals[i] < 0.5).collect();
    if null.is_empty() {
        return Err(Error::NonIdentifiable);
    }
    let best = null
        .iter()
        .copied()
        .max_by(|&a, &b| vecs[(n - 1, a)].abs().total_cmp(&vecs[(n - 1, b)].abs()))
        .expect("nonempty");
    let last = vecs[(n - 1, best)];
    if last.abs() <= 1e-8 {
        return Err(Error::DegenerateResponse);
    }
    let v: DVector<f64> = vecs.column(best) * (-1.0 / last);
    Ok(RegressionModel {
        v_hat: v.rows(0, n - 1).iter().copied().collect(),
        source: c.source,
        condition: None,
    })
}

/// Everything rounding produces for one relaxation.
#[derive(Debug, Clone)]
pub struct Rounding {
    pub extraction: Extraction,
    /// Drawn sample indices.
    pub multiset: Vec<usize>,
    /// Post-processed candidates for the drawn samples, in draw order.
    pub list: Vec<ProjectionCandidate>,
    /// Predictors for the candidates in `list` that admit one.
    pub models: Vec<RegressionModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoundingOptions {
    /// The list size is `ceil(list_constant / mu)`.
    pub list_constant: f64,
    /// Candidates are omitted when `E~[sel_i] <= threshold_factor * mu`.
    pub threshold_factor: f64,
    /// Allowed deviation of the selection probabilities from summing to one.
    pub probability_tol: f64,
    pub rank_hint: Option<usize>,
    pub seed: u64,
}

impl Default for RoundingOptions {
    fn default() -> Self {
        Self {
            list_constant: 4.0,
            threshold_factor: 1e-6,
            probability_tol: 1e-2,
            rank_hint: None,
            seed: 0,
        }
    }
}

pub fn list_size(list_constant: f64, mu: f64) -> usize {
    (list_constant / mu).ceil().max(1.0) as usize
}

/// Extraction, sampling, projection and predictor recovery in one go.
pub fn round(cp: &CompiledProgram, u: &[f64], pd: &PreparedDataset, opts: &RoundingOptions) -> Result<Rounding> {
    let mu = cp.mu_n / cp.n_prime.max(1) as f64;
    let extraction = extract_candidates(cp, u, pd, opts.threshold_factor * mu)?;
    let sel = selection_weights(cp, u, pd);
    let multiset = sample_multiset(&sel, cp.mu_n, list_size(opts.list_constant, mu), opts.seed, opts.probability_tol)?;
    let by_source: std::collections::HashMap<usize, &ProjectionCandidate> =
        extraction.candidates.iter().map(|c| (c.source, c)).collect();
    let list: Vec<ProjectionCandidate> = multiset
        .iter()
        .filter_map(|i| by_source.get(i))
        .map(|c| project_to_projector(c, opts.rank_hint))
        .collect();
    let models = list.iter().filter_map(|c| recover_predictor(c).ok()).collect();
    Ok(Rounding {
        extraction,
        multiset,
        list,
        models,
    })
}
